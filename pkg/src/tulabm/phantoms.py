"""Synthetic paired NC/CE phantom generation with ground-truth tumor masks.

Each pair is a deterministic function of (spec.seed, index), generated from a
counter-based Philox stream so dataset order never affects content.
"""

from dataclasses import dataclass

import numpy as np


class PhantomConfigError(ValueError):
    """Raised when a PhantomSpec violates its invariants."""


@dataclass(frozen=True)
class PhantomSpec:
    seed: int = 0
    side: int = 64
    tumor_count_range: tuple[int, int] = (1, 2)
    tumor_radius_range: tuple[int, int] = (4, 10)
    enhancement_gain: float = 0.5
    background_texture_scale: float = 1.0
    noise_std: float = 0.01
    vessel_gain: float = 0.2

    def validate(self) -> None:
        if self.side < 16:
            raise PhantomConfigError(f"side must be >= 16, got {self.side}")
        if self.tumor_count_range[0] > self.tumor_count_range[1]:
            raise PhantomConfigError(f"bad tumor_count_range {self.tumor_count_range}")
        if self.tumor_count_range[0] < 0:
            raise PhantomConfigError("tumor counts must be non-negative")
        if self.tumor_radius_range[0] > self.tumor_radius_range[1]:
            raise PhantomConfigError(f"bad tumor_radius_range {self.tumor_radius_range}")
        if self.tumor_radius_range[0] <= 0:
            raise PhantomConfigError("tumor radii must be positive")
        if not 0.0 < self.enhancement_gain <= 1.0:
            raise PhantomConfigError(f"enhancement_gain must be in (0,1], got {self.enhancement_gain}")
        if self.noise_std < 0:
            raise PhantomConfigError("noise_std must be non-negative")


@dataclass(frozen=True)
class PhantomPair:
    """One paired sample: non-contrast image, contrast-enhanced image, tumor mask."""

    nc: np.ndarray   # float32 (H, W) in [0, 1]
    ce: np.ndarray   # float32 (H, W) in [0, 1]
    mask: np.ndarray  # uint8 (H, W), {0, 1}


def _ellipse(yy, xx, cy, cx, ry, rx):
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def generate_pair(spec: PhantomSpec, index: int) -> PhantomPair:
    """Generate pair `index` of the dataset defined by `spec`.

    Pure function of (spec, index): calling it twice yields bitwise-identical
    arrays. The CE image enhances tumors by `enhancement_gain` and a thin
    vessel curve (outside the mask) by `vessel_gain`; Gaussian noise is added
    to the NC image only.
    """
    spec.validate()
    rng = np.random.Generator(np.random.Philox(key=[spec.seed, int(index)]))
    side = spec.side
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)

    # Smooth low-frequency background texture.
    base = np.full((side, side), 0.15)
    for _ in range(3):
        fy, fx = rng.uniform(0.5, 2.5, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.02, 0.06) * spec.background_texture_scale
        base += amp * np.cos(2 * np.pi * (fy * yy + fx * xx) / side + phase)

    # One large "anatomy" ellipse roughly centered.
    cy, cx = rng.uniform(0.45 * side, 0.55 * side, size=2)
    ry, rx = rng.uniform(0.30 * side, 0.42 * side, size=2)
    base = base + 0.25 * _ellipse(yy, xx, cy, cx, ry, rx)

    # Tumor ellipses: visible in NC as a faint bump, enhanced in CE.
    n_tumors = int(rng.integers(spec.tumor_count_range[0], spec.tumor_count_range[1] + 1))
    mask = np.zeros((side, side), dtype=bool)
    for _ in range(n_tumors):
        tcy, tcx = rng.uniform(0.2 * side, 0.8 * side, size=2)
        try_, trx = rng.uniform(spec.tumor_radius_range[0], spec.tumor_radius_range[1], size=2)
        mask |= _ellipse(yy, xx, tcy, tcx, try_, trx)
    base = base + 0.12 * mask

    # Vessel: thin sinusoidal curve, enhanced in CE but excluded from the mask.
    vcy = rng.uniform(0.3 * side, 0.7 * side)
    vamp = rng.uniform(0.08 * side, 0.22 * side)
    vfreq = rng.uniform(0.5, 1.5)
    vphase = rng.uniform(0, 2 * np.pi)
    vessel = np.abs(yy - (vcy + vamp * np.sin(2 * np.pi * vfreq * xx / side + vphase))) <= 1.0

    noise = rng.normal(0.0, 1.0, size=(side, side)) * spec.noise_std
    nc = np.clip(base + noise, 0.0, 1.0)
    ce = np.clip(
        base + spec.enhancement_gain * mask + spec.vessel_gain * (vessel & ~mask),
        0.0,
        1.0,
    )
    return PhantomPair(
        nc=nc.astype(np.float32),
        ce=ce.astype(np.float32),
        mask=mask.astype(np.uint8),
    )


def generate_dataset(spec: PhantomSpec, n: int) -> list[PhantomPair]:
    """Generate pairs 0..n-1; element i equals generate_pair(spec, i)."""
    if n < 0:
        raise PhantomConfigError(f"n must be >= 0, got {n}")
    return [generate_pair(spec, i) for i in range(n)]
