"""Tumor-biased latent bridge matching for NC->CE phantom translation."""

__version__ = "0.1.0"
