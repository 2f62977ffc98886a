"""Warp-head ablations on a frozen, trained generator."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from ..numerics.tensor import ConfigError
from ..scene.dataset import Dataset
from ..training import CacheBank, LossWeights, Models, TrainConfig, train_warp_cached
from ..warp import WarpConfig, WarpNet
from .evaluate import evaluate_offline
from .metrics import MetricsResult
from .timing import warp_latency


@dataclass(frozen=True)
class AblationFlags:
    concat_uv: bool = True
    use_theta: bool = True
    use_mlp: bool = True
    sh_pose: bool = True
    sh_skips: bool = True
    exwarp: bool = False
    exp: bool = True
    use_c4: bool = True
    use_c5: bool = True

    def apply(self, cfg: WarpConfig) -> WarpConfig:
        return replace(cfg, **asdict(self))


def _row(uv, th, mlp, shp, shs, ex, exp):
    return AblationFlags(uv, th, mlp, shp, shs, ex, exp)


# component rows, each adding one input; the last row is the full model
COMPONENT_ROWS: list[tuple[str, AblationFlags]] = [
    ("concat_uv", _row(True, False, False, False, False, False, False)),
    ("+theta", _row(True, True, False, False, False, False, False)),
    ("+mlp", _row(True, True, True, False, False, False, False)),
    ("+sh_pose", _row(True, True, True, True, False, False, False)),
    ("+sh_skips", _row(True, True, True, True, True, False, False)),
    ("+exwarp", _row(True, True, True, True, True, True, False)),
    ("full", _row(True, True, True, True, True, False, True)),
]

CACHE_ROWS: list[tuple[str, AblationFlags]] = [
    ("C3", AblationFlags(use_c4=False, use_c5=False)),
    ("C3+C4", AblationFlags(use_c5=False)),
    ("C3+C4+C5", AblationFlags()),
]


@dataclass
class AblationRow:
    name: str
    flags: AblationFlags
    metrics: MetricsResult
    latency_ms: float
    rel_latency_ms: float = 0.0

    def as_dict(self) -> dict:
        return {"name": self.name, **asdict(self.flags), **self.metrics.as_dict(),
                "latency_ms": self.latency_ms, "rel_latency_ms": self.rel_latency_ms}


def run_ablation(models: Models, train_data: Dataset, test_data: Dataset,
                 rows: list[tuple[str, AblationFlags]] = COMPONENT_ROWS, epochs: int = 10,
                 cfg: TrainConfig | None = None, weights: LossWeights = LossWeights(),
                 train_bank: CacheBank | None = None, test_bank: CacheBank | None = None,
                 latency_reps: int = 7, verbose: bool = False) -> list[AblationRow]:
    """Train a fresh warp head per configuration (same seed and budget)
    against the frozen generator's caches; score 1x warping on the test split."""
    if models.warp is None:
        raise ConfigError("ablation needs a base warp configuration")
    cfg = replace(cfg or TrainConfig(), epochs=epochs, mode="warp_only")
    train_bank = train_bank or CacheBank.build(models, train_data.params)
    test_bank = test_bank or CacheBank.build(models, test_data.params)
    base = replace(models.warp.config)
    out = []
    for name, flags in rows:
        net = WarpNet(flags.apply(base))
        trial = Models(models.texture, models.generator, net)
        if verbose:
            print(f"ablation {name}", flush=True)
        train_warp_cached(trial, train_data, train_bank, cfg, weights, verbose=verbose)
        metrics = evaluate_offline(trial, test_data, 1, test_bank)
        lat = warp_latency(trial, test_bank.take([0]), [test_data[1].params], reps=latency_reps)
        out.append(AblationRow(name, flags, metrics, lat))
    if out:
        ref = out[0].latency_ms
        for r in out:
            r.rel_latency_ms = r.latency_ms - ref
    return out


def write_ablation_csv(rows: list[AblationRow], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = ["name", *asdict(AblationFlags()).keys(), "l1", "psnr", "ssim", "latency_ms", "rel_latency_ms"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            d = r.as_dict()
            for k in ("l1", "ssim"):
                d[k] = f"{d[k]:.6f}"
            d["psnr"] = f"{d['psnr']:.4f}"
            d["latency_ms"] = f"{d['latency_ms']:.3f}"
            d["rel_latency_ms"] = f"{d['rel_latency_ms']:.3f}"
            w.writerow(d)
    return path
