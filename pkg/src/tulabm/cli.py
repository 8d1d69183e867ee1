"""Command-line entry point: phantoms, pretrain-codec, train, infer, eval, ablate.

Config files are flat `key = value` text; every command honors --seed with a
fixed default of 0. Exit codes: 0 ok, 1 I/O error, 2 usage, 3 non-finite loss,
4 checkpoint/config digest mismatch, 5 prediction/target count mismatch.
"""

import argparse
import hashlib
import json
import logging
import os
import statistics
import sys
import time
from dataclasses import replace

import numpy as np
import torch

from . import bridge, codec as codec_mod, denoiser, tensorio, trainer
from .boundary import BoundaryConfig
from .bridge import BridgeConfig
from .codec import make_codec, pretrain_codec
from .metrics import MetricsReport
from .phantoms import PhantomPair, PhantomSpec, generate_dataset
from .tensorio import DigestMismatchError
from .trainer import ABLATIONS, TrainConfig, TrainingDivergedError
from .tubam import AttentionConfig

logger = logging.getLogger("tulabm")

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_DIGEST = 4
EXIT_COUNT = 5

_CONFIG_DEFAULTS = {
    "lambda_pixel": "18.0",
    "lambda_boundary": "14.0",
    "lr": "4e-05",
    "batch_size": "8",
    "steps": "2000",
    "seed": "0",
    "ablation": "full",
    "sigma": "0.008",
    "timesteps": "0.0,0.25,0.5,0.75",
    "stochastic": "false",
    "d_max": "8",
    "tau": "0.25",
    "norm": "l1",
    "base_channels": "16",
    "depth": "2",
    "time_embed_dim": "32",
    "attention_at_bottleneck": "true",
    "alpha_tumor": "0.5",
    "heads": "2",
    "head_dim": "32",
    "codec": "pooled",
    "codec_factor": "4",
    "codec_channels": "4",
}

# Runtime knobs that may differ between a checkpoint's run and a later
# resume/infer invocation without invalidating the parameters.
_DIGEST_EXCLUDE = ("steps",)


def _bool(s: str) -> bool:
    return s.strip().lower() in ("1", "true", "yes", "on")


def effective_config(config_path: str | None, overrides: dict[str, str]) -> dict[str, str]:
    cfg = dict(_CONFIG_DEFAULTS)
    if config_path:
        with open(config_path) as f:
            parsed = tensorio.parse_config(f.read())
        unknown = set(parsed) - set(cfg)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(parsed)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg


def config_text(cfg: dict[str, str]) -> str:
    return tensorio.serialize_config(dict(cfg))


def run_digest(cfg: dict[str, str]) -> bytes:
    pruned = {k: v for k, v in cfg.items() if k not in _DIGEST_EXCLUDE}
    return tensorio.config_digest(tensorio.serialize_config(pruned))


def build_configs(cfg: dict[str, str]) -> tuple[TrainConfig, denoiser.DenoiserConfig]:
    attention = AttentionConfig(
        alpha_tumor=float(cfg["alpha_tumor"]),
        head_dim=int(cfg["head_dim"]),
        heads=int(cfg["heads"]),
    )
    den_cfg = denoiser.DenoiserConfig(
        in_channels=1 if cfg["codec"] != "learned" else int(cfg["codec_channels"]),
        base_channels=int(cfg["base_channels"]),
        depth=int(cfg["depth"]),
        time_embed_dim=int(cfg["time_embed_dim"]),
        attention_at_bottleneck=_bool(cfg["attention_at_bottleneck"]),
        attention=attention,
    )
    train_cfg = TrainConfig(
        lambda_pixel=float(cfg["lambda_pixel"]),
        lambda_boundary=float(cfg["lambda_boundary"]),
        lr=float(cfg["lr"]),
        batch_size=int(cfg["batch_size"]),
        steps=int(cfg["steps"]),
        seed=int(cfg["seed"]),
        ablation=cfg["ablation"],
        bridge=BridgeConfig(
            sigma=float(cfg["sigma"]),
            timesteps=tuple(float(t) for t in cfg["timesteps"].split(",")),
            stochastic_sampling=_bool(cfg["stochastic"]),
        ),
        boundary=BoundaryConfig(
            d_max=int(cfg["d_max"]),
            tau=float(cfg["tau"]),
            norm=cfg["norm"],
        ),
    )
    return train_cfg, den_cfg


def build_codec(cfg: dict[str, str], codec_ckpt: str | None = None) -> codec_mod.Codec:
    c = make_codec(cfg["codec"], factor=int(cfg["codec_factor"]),
                   channels=int(cfg["codec_channels"]), seed=int(cfg["seed"]))
    if cfg["codec"] == "learned":
        if codec_ckpt:
            params, _ = tensorio.read_checkpoint(codec_ckpt)
            c.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in params.items()})
    c.freeze()
    return c


# ---------------------------------------------------------------------------
# dataset directory helpers
# ---------------------------------------------------------------------------

def write_dataset(out_dir: str, spec: PhantomSpec, pairs: list[PhantomPair]) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for i, p in enumerate(pairs):
        tensorio.write_tensor(os.path.join(out_dir, f"pair_{i:04d}_nc.tlbm"), p.nc)
        tensorio.write_tensor(os.path.join(out_dir, f"pair_{i:04d}_ce.tlbm"), p.ce)
        tensorio.write_tensor(os.path.join(out_dir, f"pair_{i:04d}_mask.tlbm"), p.mask)
    manifest = {
        "count": len(pairs),
        "format_version": tensorio.FORMAT_VERSION,
        "spec": {
            "seed": spec.seed,
            "side": spec.side,
            "tumor_count_range": list(spec.tumor_count_range),
            "tumor_radius_range": list(spec.tumor_radius_range),
            "enhancement_gain": spec.enhancement_gain,
            "background_texture_scale": spec.background_texture_scale,
            "noise_std": spec.noise_std,
            "vessel_gain": spec.vessel_gain,
        },
    }
    tensorio.atomic_write(os.path.join(out_dir, "manifest.json"),
                          json.dumps(manifest, indent=2, sort_keys=True).encode())


def load_dataset(data_dir: str) -> list[PhantomPair]:
    with open(os.path.join(data_dir, "manifest.json")) as f:
        manifest = json.load(f)
    pairs = []
    for i in range(manifest["count"]):
        nc = tensorio.read_tensor(os.path.join(data_dir, f"pair_{i:04d}_nc.tlbm"))
        ce = tensorio.read_tensor(os.path.join(data_dir, f"pair_{i:04d}_ce.tlbm"))
        mask = tensorio.read_tensor(os.path.join(data_dir, f"pair_{i:04d}_mask.tlbm"))
        pairs.append(PhantomPair(nc=nc, ce=ce, mask=mask))
    return pairs


def manifest_hash(data_dir: str) -> str:
    with open(os.path.join(data_dir, "manifest.json"), "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_phantoms(args) -> int:
    spec = PhantomSpec(
        seed=args.seed,
        side=args.side,
        tumor_count_range=(args.tumor_min, args.tumor_max),
        enhancement_gain=args.gain,
    )
    pairs = generate_dataset(spec, args.count)
    write_dataset(args.out, spec, pairs)
    logger.info("wrote %d pairs to %s", len(pairs), args.out)
    return EXIT_OK


def cmd_pretrain_codec(args) -> int:
    pairs = load_dataset(args.data)
    c = make_codec("learned", factor=args.factor, channels=args.channels, seed=args.seed)
    images = [p.nc for p in pairs] + [p.ce for p in pairs]
    losses = pretrain_codec(c, images, steps=args.steps, seed=args.seed)
    params = {k: v.detach().numpy().astype(np.float32) for k, v in c.state_dict().items()}
    digest = tensorio.config_digest(tensorio.serialize_config({
        "codec": "learned", "codec_factor": args.factor, "codec_channels": args.channels,
    }))
    os.makedirs(args.out, exist_ok=True)
    tensorio.write_checkpoint(os.path.join(args.out, "codec.tlck"), params, digest, args.steps)
    if losses:
        logger.info("codec loss %.5f -> %.5f over %d steps", losses[0], losses[-1], len(losses))
    return EXIT_OK


def _train_once(cfg: dict[str, str], data_dir: str, out_dir: str,
                codec_ckpt: str | None, resume: str | None,
                checkpoint_every: int) -> tuple[denoiser.Denoiser, codec_mod.Codec,
                                                list[trainer.StepReport]]:
    train_cfg, den_cfg = build_configs(cfg)
    c = build_codec(cfg, codec_ckpt)
    pairs = load_dataset(data_dir)
    model = denoiser.init(den_cfg, seed=train_cfg.seed)
    opt = None
    start_step = 0
    digest = run_digest(cfg)
    if resume:
        params, start_step = tensorio.read_checkpoint(resume, expect_digest=digest)
        from .optim import AdamW
        opt = AdamW(model.parameters(), lr=train_cfg.lr, betas=train_cfg.betas,
                    eps=train_cfg.eps, weight_decay=train_cfg.weight_decay)
        trainer.load_checkpoint_params(params, model, opt, c)

    os.makedirs(out_dir, exist_ok=True)
    tensorio.atomic_write(os.path.join(out_dir, "config.cfg"), config_text(cfg).encode())

    def sink(step, mdl, optimizer):
        name = "checkpoint_final.tlck" if step == train_cfg.steps else f"checkpoint_{step:06d}.tlck"
        tensorio.write_checkpoint(
            os.path.join(out_dir, name),
            trainer.checkpoint_params(mdl, optimizer, c), digest, step)

    opt, reports = trainer.train(pairs, train_cfg, c, model, opt=opt,
                                 start_step=start_step, checkpoint_sink=sink,
                                 checkpoint_every=checkpoint_every)
    lines = [json.dumps({
        "step": r.step, "latent_loss": r.latent_loss, "pixel_loss": r.pixel_loss,
        "boundary_loss": r.boundary_loss, "total_loss": r.total_loss,
    }, sort_keys=True) for r in reports]
    tensorio.atomic_write(os.path.join(out_dir, "reports.jsonl"),
                          ("\n".join(lines) + "\n" if lines else "").encode())
    return model, c, reports


def cmd_train(args) -> int:
    cfg = effective_config(args.config, {
        "steps": None if args.steps is None else str(args.steps),
        "seed": None if args.seed is None else str(args.seed),
        "ablation": args.ablation,
        "codec": args.codec,
    })
    try:
        _train_once(cfg, args.data, args.out, args.codec_ckpt, args.resume,
                    args.checkpoint_every)
    except TrainingDivergedError as exc:
        logger.error("training diverged: %s", exc.report)
        return EXIT_DIVERGED
    except DigestMismatchError as exc:
        logger.error("%s", exc)
        return EXIT_DIGEST
    return EXIT_OK


def cmd_infer(args) -> int:
    config_path = args.config or os.path.join(os.path.dirname(args.ckpt), "config.cfg")
    cfg = effective_config(config_path, {
        "seed": None if args.seed is None else str(args.seed),
        "stochastic": "true" if args.stochastic else None,
    })
    train_cfg, den_cfg = build_configs(cfg)
    try:
        params, _ = tensorio.read_checkpoint(args.ckpt, expect_digest=run_digest(cfg))
    except DigestMismatchError as exc:
        logger.error("%s", exc)
        return EXIT_DIGEST
    model = denoiser.init(den_cfg, seed=train_cfg.seed)
    c = build_codec(cfg)
    trainer.load_checkpoint_params(params, model, None, c)

    img = tensorio.read_tensor(args.input).astype(np.float32)
    n_evals = 0

    def drift_fn(z, t):
        nonlocal n_evals
        n_evals += 1
        return model(z, t)

    rng = torch.Generator().manual_seed(train_cfg.seed) \
        if train_cfg.bridge.stochastic_sampling else None
    t0 = time.perf_counter()
    with torch.no_grad():
        z0 = c.encode(torch.from_numpy(img))
        z1_hat = bridge.sample(z0, drift_fn, train_cfg.bridge, rng)
        pred = c.decode(z1_hat).clamp(0.0, 1.0).numpy()
    elapsed = time.perf_counter() - t0
    os.makedirs(args.out, exist_ok=True)
    tensorio.write_tensor(os.path.join(args.out, "pred.tlbm"), pred.astype(np.float32))
    tensorio.write_pgm(os.path.join(args.out, "pred.pgm"), pred)
    logger.info("inference: %d drift evaluations, %.4f s per image", n_evals, elapsed)
    print(f"drift_evals={n_evals} wall_time_s={elapsed:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    pairs = load_dataset(args.data)
    pred_files = sorted(f for f in os.listdir(args.pred) if f.endswith(".tlbm"))
    if len(pred_files) != len(pairs):
        logger.error("prediction count %d != target count %d", len(pred_files), len(pairs))
        return EXIT_COUNT
    report = MetricsReport()
    for fname, pair in zip(pred_files, pairs):
        pred = tensorio.read_tensor(os.path.join(args.pred, fname)).astype(np.float64)
        report.add(pred, pair.ce.astype(np.float64), pair.mask)
    os.makedirs(args.out, exist_ok=True)
    tensorio.atomic_write(os.path.join(args.out, "metrics.txt"),
                          report.to_text_table().encode())
    tensorio.atomic_write(os.path.join(args.out, "metrics.json"),
                          report.to_json().encode())
    return EXIT_OK


def cmd_ablate(args) -> int:
    seeds = [int(s) for s in args.seeds.split(",")]
    data_hash = manifest_hash(args.data)
    eval_pairs = load_dataset(args.eval_data)
    results: dict[str, dict[str, float]] = {}
    runs = []
    for ablation in ABLATIONS:
        per_seed: dict[str, list[float]] = {}
        for seed in seeds:
            cfg = effective_config(args.config, {
                "steps": None if args.steps is None else str(args.steps),
                "seed": str(seed),
                "ablation": ablation,
                "codec": args.codec,
            })
            out_dir = os.path.join(args.out, f"{ablation}_seed{seed}")
            try:
                model, c, reports = _train_once(cfg, args.data, out_dir, None, None, 0)
            except TrainingDivergedError as exc:
                logger.error("%s/%d diverged: %s", ablation, seed, exc.report)
                return EXIT_DIVERGED
            train_cfg, _ = build_configs(cfg)
            eval_bridge = replace(train_cfg.bridge, stochastic_sampling=False)
            report = trainer.evaluate(model, eval_pairs, eval_bridge, c)
            agg = {k: v[0] for k, v in report.aggregate().items()}
            runs.append({"ablation": ablation, "seed": seed,
                         "dataset_manifest_hash": data_hash, "metrics": agg})
            for k, v in agg.items():
                per_seed.setdefault(k, []).append(v)
        results[ablation] = {k: statistics.median(v) for k, v in per_seed.items()}

    cols = ("psnr", "ssim", "tumor_psnr", "tumor_ssim")
    lines = [f"{'variant':<18} " + " ".join(f"{c:>11}" for c in cols)]
    for ablation in ABLATIONS:
        row = results[ablation]
        lines.append(f"{ablation:<18} " +
                     " ".join(f"{row.get(c, float('nan')):11.4f}" for c in cols))
    table = "\n".join(lines) + "\n"
    os.makedirs(args.out, exist_ok=True)
    tensorio.atomic_write(os.path.join(args.out, "ablation.txt"), table.encode())
    tensorio.atomic_write(os.path.join(args.out, "ablation.json"), json.dumps({
        "seeds": seeds, "dataset_manifest_hash": data_hash,
        "median": results, "runs": runs,
    }, indent=2, sort_keys=True).encode())
    print(table, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="tulabm",
        description="Latent bridge matching for NC->CE phantom translation.",
        epilog="Config keys: " + ", ".join(sorted(_CONFIG_DEFAULTS)),
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("phantoms", help="generate a paired phantom dataset")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--side", type=int, default=64)
    sp.add_argument("--tumor-min", type=int, default=1)
    sp.add_argument("--tumor-max", type=int, default=2)
    sp.add_argument("--gain", type=float, default=0.5)
    sp.set_defaults(func=cmd_phantoms)

    sp = sub.add_parser("pretrain-codec", help="pretrain the learned codec")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--steps", type=int, default=500)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--factor", type=int, default=2)
    sp.add_argument("--channels", type=int, default=4)
    sp.set_defaults(func=cmd_pretrain_codec)

    sp = sub.add_parser("train", help="train the drift network")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--ablation", choices=ABLATIONS)
    sp.add_argument("--codec", choices=("identity", "pooled", "learned"))
    sp.add_argument("--codec-ckpt")
    sp.add_argument("--resume")
    sp.add_argument("--checkpoint-every", type=int, default=0)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", help="synthesize a CE image from an NC tensor")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--stochastic", action="store_true")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("eval", help="score predictions against a dataset")
    sp.add_argument("--data", required=True)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="train and evaluate all ablation variants")
    sp.add_argument("--data", required=True)
    sp.add_argument("--eval-data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--seeds", default="0,1,2")
    sp.add_argument("--codec", choices=("identity", "pooled", "learned"))
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    level = os.environ.get("TULABM_LOG", "info").lower()
    logging.basicConfig(
        level={"error": logging.ERROR, "info": logging.INFO,
               "debug": logging.DEBUG}.get(level, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )
    torch.set_num_threads(1)  # bit-exact reproducibility across machines
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, tensorio.FormatError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
