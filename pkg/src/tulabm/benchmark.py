"""The reference phantom benchmark: fixed data spec, training recipe, and the
three-variant ablation comparison used by the acceptance suite and docs.

Everything here is seeded, so results are bit-reproducible on a given machine.
"""

from dataclasses import replace

import numpy as np

from .bridge import BridgeConfig
from .codec import PooledCodec
from .denoiser import DenoiserConfig, init
from .phantoms import PhantomPair, PhantomSpec, generate_pair
from .trainer import ABLATIONS, TrainConfig, evaluate, train

REFERENCE_SPEC = PhantomSpec(seed=7)
TRAIN_PAIRS = 256
EVAL_PAIRS = 64
SEEDS = (0, 1, 2)


def reference_datasets(spec: PhantomSpec = REFERENCE_SPEC,
                       n_train: int = TRAIN_PAIRS,
                       n_eval: int = EVAL_PAIRS) -> tuple[list[PhantomPair], list[PhantomPair]]:
    """Training pairs use indices [0, n_train); held-out pairs follow them."""
    train_set = [generate_pair(spec, i) for i in range(n_train)]
    eval_set = [generate_pair(spec, i) for i in range(n_train, n_train + n_eval)]
    return train_set, eval_set


def run_variant(ablation: str, seed: int,
                train_set: list[PhantomPair], eval_set: list[PhantomPair],
                steps: int = 2000) -> tuple[dict[str, float], list]:
    """Train one ablation variant and return its aggregate eval metrics and reports."""
    codec = PooledCodec(4)
    codec.freeze()
    model = init(DenoiserConfig(), seed=seed)
    cfg = TrainConfig(steps=steps, seed=seed, ablation=ablation)
    _, reports = train(train_set, cfg, codec, model)
    agg = evaluate(model, eval_set, replace(cfg.bridge, stochastic_sampling=False),
                   codec).aggregate()
    return {k: v[0] for k, v in agg.items()}, reports


def run_ablation(steps: int = 2000, seeds: tuple[int, ...] = SEEDS
                 ) -> dict[str, dict[str, object]]:
    """All variants x seeds; returns per-variant seed medians and loss windows."""
    train_set, eval_set = reference_datasets()
    out: dict[str, dict[str, object]] = {}
    for ablation in ABLATIONS:
        metrics: dict[str, list[float]] = {}
        early, late = [], []
        for seed in seeds:
            agg, reports = run_variant(ablation, seed, train_set, eval_set, steps)
            for k, v in agg.items():
                metrics.setdefault(k, []).append(v)
            early.append(float(np.mean([r.total_loss for r in reports[:100]])))
            late.append(float(np.mean([r.total_loss for r in reports[-100:]])))
        out[ablation] = {
            "median": {k: float(np.median(v)) for k, v in metrics.items()},
            "per_seed": metrics,
            "loss_window_step100": early,
            "loss_window_final": late,
        }
    return out
