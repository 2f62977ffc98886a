"""Command-line entry point.

Every subcommand reads a flat ``key=value`` config (``--config FILE``) with
command-line overrides, writes the effective config to its output directory
as ``config.txt`` and then does its work inside that directory.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

SUBCOMMANDS = ("gen-data", "train", "eval", "bench", "ablate", "sweep-warp", "simulate")
ENV_OUT = "NEUCACHE_OUT"


class CliError(Exception):
    pass


@dataclass
class RunConfig:
    # paths
    out_dir: str = ""
    data_dir: str = "data"
    checkpoint: str = ""
    # data
    seed: int = 7
    frames: int = 512
    test_frames: int = 128
    fps: int = 30
    height: int = 64
    width: int = 64
    expr_dims: int = 4
    jitter_sigma: float = 0.0
    # models
    tex_channels: int = 16
    tex_size: int = 256
    depth: int = 10
    base: int = 32
    use_upconv: bool = True
    use_lpf: bool = True
    model_seed: int = 0
    # training
    epochs: int = 30
    lr_nets: float = 1e-4
    lr_texture: float = 1e-3
    batch_size: int = 4
    crop_fraction: float = 0.75
    baseline_fraction: float = 0.2
    train_mode: str = "joint"
    max_steps_per_epoch: int = 0
    w_tex: float = 1.0
    w_img: float = 1.0
    w_perc: float = 0.1
    w_base_img: float = 0.1
    # scheduling
    num_warps: int = 2
    n_workers: int = 2
    mode: str = "parallel"
    tg_ms: float = 47.02
    tw_ms: float = 14.62
    tsync_ms: float = 0.25
    input_fps: float = 0.0
    bench_frames: int = 200
    # evaluation
    protocol: str = "offline"
    split: str = "test"
    d_max: int = 5
    ablation_epochs: int = 10
    ablation_set: str = "all"


def _coerce(value: str, kind):
    kind = kind if isinstance(kind, type) else {"int": int, "float": float, "bool": bool, "str": str}[kind]
    if kind is bool:
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise CliError(f"not a boolean: {value!r}")
    try:
        return kind(value)
    except ValueError as exc:
        raise CliError(f"bad value {value!r}: {exc}") from None


def _field_types() -> dict:
    return {f.name: f.type for f in fields(RunConfig)}


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    """Apply ``key=value`` lines to ``base``; unknown keys are an error."""
    types = _field_types()
    updates = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"config line {n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise CliError(f"config line {n}: unknown key {key!r}")
        updates[key] = _coerce(value, types[key])
    return replace(base or RunConfig(), **updates)


def format_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name}={str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"config file not found: {p}")
    return parse_config_text(p.read_text())


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

ALIASES = {"workers": "n_workers", "warps": "num_warps"}

KEY_HELP = {
    "out_dir": "output directory (default $NEUCACHE_OUT/<command>, else runs/<command>)",
    "data_dir": "dataset root holding train/ and test/",
    "checkpoint": "model checkpoint (.nckp) to load",
    "seed": "trajectory seed for gen-data",
    "frames": "training frames to render",
    "test_frames": "test frames to render (continuation of the training motion)",
    "fps": "trajectory frame rate (30 or 60)",
    "expr_dims": "expression coefficients of the head proxy",
    "jitter_sigma": "std of per-frame tracking noise",
    "tex_channels": "neural texture channels D (>= 12)",
    "tex_size": "finest texture level side length",
    "depth": "generator layers (even; half down, half up)",
    "base": "generator base channel count",
    "use_upconv": "upsample+conv decoder instead of transposed conv",
    "use_lpf": "Gaussian low-pass filter at the bottleneck",
    "model_seed": "seed for weight init and batch order",
    "crop_fraction": "training crop side as a fraction of the frame",
    "baseline_fraction": "fraction of epochs trained without the warp head",
    "train_mode": "joint | baseline | warp_only",
    "max_steps_per_epoch": "cap on optimizer steps per epoch (0 = full pass)",
    "w_tex": "weight of the texture RGB loss",
    "w_img": "weight of the image L1 loss",
    "w_perc": "weight of the feature-space loss",
    "w_base_img": "warp mode: weight of the cached frame's own image loss",
    "num_warps": "warped frames per cache refresh",
    "n_workers": "scheduler workers (1 = sequential)",
    "mode": "bench: parallel | sequential | simulated",
    "tg_ms": "generator duration for stand-in and simulated runs",
    "tw_ms": "warp duration for stand-in and simulated runs",
    "tsync_ms": "per-job hand-off cost in simulated runs",
    "input_fps": "viewpoint input rate (0 = as fast as the pipeline accepts)",
    "bench_frames": "frames per bench/simulate run",
    "protocol": "eval: offline | online-30 | online-60 | novel-view",
    "split": "dataset split to evaluate",
    "d_max": "largest warp distance for sweep-warp",
    "ablation_epochs": "warp-head epochs per ablation row",
    "ablation_set": "components | cache | all",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neucache", description="neural-cache rendering toolkit")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    helps = {
        "gen-data": "render a synthetic train/test dataset",
        "train": "train texture, generator and warp head",
        "eval": "score a checkpoint under an evaluation protocol",
        "bench": "time the scheduler with real or stand-in workloads",
        "ablate": "retrain the warp head per ablation row",
        "sweep-warp": "quality against warp distance",
        "simulate": "virtual-clock scheduler trace (no models)",
    }
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", help="key=value file applied before the flags below")
        for f in fields(RunConfig):
            flag = "--" + f.name.replace("_", "-")
            names = [flag] + ["--" + a for a, k in ALIASES.items() if k == f.name]
            p.add_argument(*names, dest=f.name, default=None, metavar=f.name.upper(),
                           help=f"{KEY_HELP.get(f.name, f.name.replace('_', ' '))} (default: {f.default!r})")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    types = _field_types()
    updates = {k: _coerce(v, types[k]) for k in types if (v := getattr(args, k, None)) is not None}
    cfg = replace(cfg, **updates)
    if not cfg.out_dir:
        root = os.environ.get(ENV_OUT, "runs")
        cfg = replace(cfg, out_dir=str(Path(root) / args.command))
    return cfg


def echo_config(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.txt"
    path.write_text(format_config(cfg))
    return path


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _weights(cfg: RunConfig):
    from .training import LossWeights
    return LossWeights(cfg.w_tex, cfg.w_img, cfg.w_perc, cfg.w_base_img)


def _train_config(cfg: RunConfig):
    from .training import TrainConfig
    return TrainConfig(epochs=cfg.epochs, lr_nets=cfg.lr_nets, lr_texture=cfg.lr_texture,
                       batch_size=cfg.batch_size, seed=cfg.model_seed, crop_fraction=cfg.crop_fraction,
                       baseline_fraction=cfg.baseline_fraction, mode=cfg.train_mode,
                       max_steps_per_epoch=cfg.max_steps_per_epoch)


def _split(cfg: RunConfig, name: str | None = None):
    from .scene import load_split
    d = Path(cfg.data_dir) / (name or cfg.split)
    if not (d / "manifest.txt").is_file():
        raise CliError(f"dataset split not found: {d} (run gen-data first)")
    return load_split(d)


def _models(cfg: RunConfig):
    from .training import load_checkpoint
    if not cfg.checkpoint:
        raise CliError("this command needs checkpoint=PATH")
    if not Path(cfg.checkpoint).is_file():
        raise CliError(f"checkpoint not found: {cfg.checkpoint}")
    return load_checkpoint(cfg.checkpoint)


def _timing(cfg: RunConfig, num_warps: int | None = None):
    from .scheduler import SchedulerConfig
    mode = "simulated" if cfg.mode == "simulated" else ("sequential" if cfg.n_workers == 1 else "parallel")
    return SchedulerConfig(n_workers=cfg.n_workers, num_warps=num_warps or cfg.num_warps, mode=mode,
                           tg_ms=cfg.tg_ms, tw_ms=cfg.tw_ms, tsync_ms=cfg.tsync_ms,
                           input_fps=cfg.input_fps or None)


def cmd_gen_data(cfg: RunConfig) -> dict:
    from .scene import generate_dataset
    out = generate_dataset(cfg.out_dir, seed=cfg.seed, n_frames=cfg.frames, fps=cfg.fps, h=cfg.height,
                           w=cfg.width, n_test=cfg.test_frames, jitter_sigma=cfg.jitter_sigma,
                           n_expr=cfg.expr_dims)
    return {k: str(v) for k, v in out.items()}


def cmd_train(cfg: RunConfig) -> dict:
    from .renderer import GeneratorConfig
    from .training import Models, save_checkpoint, train
    data = _split(cfg, "train")
    gen = GeneratorConfig(depth=cfg.depth, base=cfg.base, tex_channels=cfg.tex_channels,
                          use_upconv=cfg.use_upconv, use_lpf=cfg.use_lpf, seed=cfg.model_seed)
    models = Models.build(gen, tex_size=cfg.tex_size, tex_seed=cfg.model_seed, expr_dims=cfg.expr_dims,
                          with_warp=cfg.train_mode != "baseline")
    out = Path(cfg.out_dir)
    hist = train(models, data, _train_config(cfg), _weights(cfg), log_path=out / "train_log.csv")
    ckpt = save_checkpoint(models, out / "model.nckp")
    return {"checkpoint": str(ckpt), "epochs": len(hist), "final_loss": hist[-1]["total"] if hist else None}


def cmd_eval(cfg: RunConfig) -> dict:
    from .bench import evaluate_generator, evaluate_protocol
    from .bench.evaluate import DEFAULT_TIMING
    models = _models(cfg)
    data = _split(cfg)
    timing = replace(DEFAULT_TIMING, n_workers=cfg.n_workers, tg_ms=cfg.tg_ms, tw_ms=cfg.tw_ms,
                     tsync_ms=cfg.tsync_ms)
    res = evaluate_protocol(cfg.protocol, models, data, cfg.num_warps, timing)
    out = res.as_dict()
    out["generator"] = evaluate_generator(models, data).as_dict()
    path = Path(cfg.out_dir) / "metrics.json"
    path.write_text(json.dumps(out, indent=2) + "\n")
    return {"metrics": str(path), "psnr": res.metrics.psnr}


def cmd_bench(cfg: RunConfig) -> dict:
    from .scheduler import (ModelWorkload, SleepWorkload, measure_sync_overhead, run_parallel, run_sequential,
                            simulate_schedule)
    sc = _timing(cfg)
    if sc.mode == "simulated":
        _, rep = simulate_schedule(sc, cfg.bench_frames)
        rep.sync_overhead_ms = measure_sync_overhead(None, max(cfg.bench_frames, 100), sc)
    else:
        if cfg.checkpoint:
            workload = ModelWorkload(_models(cfg), keep_images=False)
            stream = _split(cfg).params[:cfg.bench_frames]
        else:
            workload = SleepWorkload(cfg.tg_ms, cfg.tw_ms)
            stream = list(range(cfg.bench_frames))
        if sc.n_workers == 1:
            _, rep = run_sequential(stream, workload, sc)
        else:
            _, rep = run_parallel(stream, workload, sc)
        if len(stream) >= 100:
            seq = replace(sc, n_workers=1, mode="sequential")
            rep.sync_overhead_ms = measure_sync_overhead(workload, stream, seq)
    out = Path(cfg.out_dir)
    rep.write_csv(out / "timing.csv")
    rep.write_json(out / "timing.json")
    return rep.summary()


def cmd_ablate(cfg: RunConfig) -> dict:
    from .bench import CACHE_ROWS, COMPONENT_ROWS, run_ablation, write_ablation_csv
    sets = {"components": COMPONENT_ROWS, "cache": CACHE_ROWS, "all": COMPONENT_ROWS + CACHE_ROWS[:2]}
    if cfg.ablation_set not in sets:
        raise CliError(f"ablation_set must be one of {', '.join(sets)}")
    models = _models(cfg)
    rows = run_ablation(models, _split(cfg, "train"), _split(cfg), sets[cfg.ablation_set], cfg.ablation_epochs,
                        _train_config(cfg), _weights(cfg))
    path = write_ablation_csv(rows, Path(cfg.out_dir) / "ablation.csv")
    return {"csv": str(path), "rows": len(rows)}


def cmd_sweep_warp(cfg: RunConfig) -> dict:
    from .bench import linear_fit, warp_distance_sweep, write_sweep_csv
    sweep = warp_distance_sweep(_models(cfg), _split(cfg), cfg.d_max)
    path = write_sweep_csv(sweep, Path(cfg.out_dir) / "warp_distance.csv")
    ds = [d for d in sweep if d >= 1]
    slope, _, r2 = linear_fit(ds, [sweep[d].psnr for d in ds]) if len(ds) >= 2 else (0.0, 0.0, 1.0)
    return {"csv": str(path), "psnr_slope_per_frame": slope, "r2": r2}


def cmd_simulate(cfg: RunConfig) -> dict:
    import csv
    from .scheduler import measure_sync_overhead, simulate_schedule
    sc = replace(_timing(cfg), mode="simulated")
    trace, rep = simulate_schedule(sc, cfg.bench_frames)
    if cfg.bench_frames >= 100:
        rep.sync_overhead_ms = measure_sync_overhead(None, cfg.bench_frames, sc)
    out = Path(cfg.out_dir)
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["event", "worker", "time_ms", "frame"])
        for ev, wid, t, f in trace:
            w.writerow([ev, wid, f"{t:.4f}", f])
    rep.write_csv(out / "timing.csv")
    rep.write_json(out / "timing.json")
    return rep.summary()


HANDLERS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "bench": cmd_bench,
    "ablate": cmd_ablate, "sweep-warp": cmd_sweep_warp, "simulate": cmd_simulate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)   # exits with usage text and status 2 on bad input
    try:
        cfg = resolve_config(args)
        echo_config(cfg)
        result = HANDLERS[args.command](cfg)
    except (CliError, OSError, ValueError, RuntimeError) as exc:
        msg = " ".join(str(exc).split())
        print(f"neucache {args.command}: error: {msg}", file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
