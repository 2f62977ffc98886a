"""Offline, online and novel-view evaluation and the warp-distance sweep."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..numerics.tensor import no_grad
from ..scene.dataset import Dataset, render_frames
from ..scene.proxy import make_head_proxy
from ..scene.trajectory import rotate_view
from ..scheduler import SchedulerConfig, TimingReport, simulate_schedule
from ..training import CacheBank, Models
from ..warp import make_warp_input, warp_forward
from .metrics import MetricsResult, compute_metrics

PROTOCOLS = ("offline", "online-30", "online-60", "novel-view")
NOVEL_BINS_DEG = (0.0, 15.0, 30.0, 45.0)
# deployment timing used to decide which frames an online run can accept
DEFAULT_TIMING = SchedulerConfig(n_workers=2, num_warps=1, mode="simulated", tg_ms=47.02, tw_ms=14.62, tsync_ms=0.25)


@dataclass
class ProtocolResult:
    protocol: str
    metrics: MetricsResult
    timing: TimingReport
    num_warps: int
    n_frames: int
    dropped: int = 0
    per_bin: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {"protocol": self.protocol, "num_warps": self.num_warps, "frames": self.n_frames,
               "dropped_frames": self.dropped, **self.metrics.as_dict(), "timing": self.timing.summary()}
        if self.per_bin:
            out["per_bin"] = {str(k): v.as_dict() for k, v in self.per_bin.items()}
        return out


def warp_images(models: Models, bank: CacheBank, data: Dataset, src, dst, batch: int = 8) -> np.ndarray:
    """Warp cached frames ``src`` to the parameters of frames ``dst``."""
    src, dst = np.asarray(src), np.asarray(dst)
    tex = models.texture if models.warp.config.exwarp else None
    out = []
    with no_grad():
        for s in range(0, len(src), batch):
            inp = make_warp_input(bank.take(src[s:s + batch]), [data[i].params for i in dst[s:s + batch]])
            out.append(warp_forward(inp, models.warp, tex).data)
    if not out:
        return np.zeros((0, 3) + tuple(data.resolution), dtype=np.float32)
    return np.concatenate(out)


def block_pairs(frames: list[int], num_warps: int) -> tuple[list[int], list[int]]:
    """Cache every ``num_warps``-th accepted frame and warp the following
    ``num_warps`` accepted frames from it (warp distances 1..num_warps)."""
    src, dst = [], []
    for j in range(1, len(frames)):
        src.append(frames[(j - 1) // num_warps * num_warps])
        dst.append(frames[j])
    return src, dst


def evaluate_generator(models: Models, data: Dataset, bank: CacheBank | None = None) -> MetricsResult:
    bank = bank or CacheBank.build(models, data.params)
    return compute_metrics(bank.images, np.stack([f.image for f in data.frames]))


def evaluate_offline(models: Models, data: Dataset, num_warps: int = 1,
                     bank: CacheBank | None = None) -> MetricsResult:
    """Every frame after the first is produced by the warp head."""
    bank = bank or CacheBank.build(models, data.params)
    src, dst = block_pairs(list(range(len(data))), num_warps)
    pred = warp_images(models, bank, data, src, dst)
    return compute_metrics(pred, np.stack([data[i].image for i in dst]))


def accepted_frames(n: int, input_fps: float, capacity_fps: float) -> list[int]:
    """Frames a pipeline with ``capacity_fps`` takes from an ``input_fps``
    stream; the rest are dropped at evenly spread positions."""
    if capacity_fps >= input_fps:
        return list(range(n))
    ratio = capacity_fps / input_fps
    return [t for t in range(n) if t == 0 or np.floor(t * ratio) > np.floor((t - 1) * ratio)]


def evaluate_online(models: Models, data: Dataset, num_warps: int, timing: SchedulerConfig = DEFAULT_TIMING,
                    bank: CacheBank | None = None, protocol: str = "online") -> ProtocolResult:
    """Run at the stream's native rate.  A frame the scheduler cannot accept
    is shown as the most recent output image."""
    cfg = SchedulerConfig(n_workers=timing.n_workers, num_warps=num_warps, mode="simulated", tg_ms=timing.tg_ms,
                          tw_ms=timing.tw_ms, tsync_ms=timing.tsync_ms, queue_bound=timing.queue_bound)
    n = len(data)
    _, closed = simulate_schedule(cfg, max(200, 20 * cfg.warmup))
    keep = accepted_frames(n, data.fps, closed.fps)
    bank = bank or CacheBank.build(models, data.params)
    src, dst = block_pairs(keep, num_warps)
    warped = warp_images(models, bank, data, src, dst)
    shown = {keep[0]: bank.images[keep[0]]}
    shown.update({d: img for d, img in zip(dst, warped)})
    pred, last = [], shown[keep[0]]
    for t in range(1, n):
        last = shown.get(t, last)
        pred.append(last)
    gt = np.stack([data[t].image for t in range(1, n)])
    metrics = compute_metrics(np.stack(pred), gt)
    _, report = simulate_schedule(cfg, len(keep), input_fps=min(data.fps, closed.fps))
    report.dropped = n - len(keep)
    return ProtocolResult(protocol, metrics, report, num_warps, n, dropped=n - len(keep))


def novel_view_dataset(data: Dataset, yaw_deg: float, n_frames: int | None = None) -> Dataset:
    """The split's motion rotated by ``yaw_deg`` about the vertical axis with
    the expression held at its first value."""
    frames = data.frames[:n_frames] if n_frames else data.frames
    e0 = frames[0].params.expr
    params = []
    for f in frames:
        p = rotate_view(f.params, np.radians(yaw_deg))
        p.expr = e0.copy()
        params.append(p)
    h, w = data.resolution
    rendered = render_frames(params, make_head_proxy(n_expr=len(e0)), h, w)
    return Dataset(rendered, data.fps, data.seed, data.start_frame)


def evaluate_novel_view(models: Models, data: Dataset, num_warps: int = 1, bins=NOVEL_BINS_DEG,
                        n_frames: int | None = 32) -> dict[float, MetricsResult]:
    return {float(b): evaluate_offline(models, novel_view_dataset(data, b, n_frames), num_warps) for b in bins}


def evaluate_protocol(mode: str, models: Models, data: Dataset, num_warps: int = 1,
                      timing: SchedulerConfig = DEFAULT_TIMING, bank: CacheBank | None = None,
                      novel_frames: int | None = 32) -> ProtocolResult:
    """``online-30`` evaluates ``data`` subsampled to 30 fps when it is a
    60 fps split; ``online-60`` requires a 60 fps split."""
    if mode not in PROTOCOLS:
        raise ValueError(f"unknown protocol {mode!r}; choose from {', '.join(PROTOCOLS)}")
    cfg = SchedulerConfig(n_workers=timing.n_workers, num_warps=num_warps, mode="simulated", tg_ms=timing.tg_ms,
                          tw_ms=timing.tw_ms, tsync_ms=timing.tsync_ms)
    if mode == "offline":
        metrics = evaluate_offline(models, data, num_warps, bank)
        _, rep = simulate_schedule(cfg, len(data))
        return ProtocolResult(mode, metrics, rep, num_warps, len(data))
    if mode == "novel-view":
        bins = evaluate_novel_view(models, data, num_warps, n_frames=novel_frames)
        _, rep = simulate_schedule(cfg, len(data))
        return ProtocolResult(mode, MetricsResult.mean(list(bins.values())), rep, num_warps,
                              novel_frames or len(data), per_bin=bins)
    target = int(mode.split("-")[1])
    if mode == "online-60" and data.fps != 60:
        raise ValueError("online-60 needs a 60 fps split")
    if data.fps != target:
        if data.fps % target:
            raise ValueError(f"cannot subsample {data.fps} fps to {target} fps")
        data = data.subsample(data.fps // target)
        bank = None
    return evaluate_online(models, data, num_warps, timing, bank, protocol=mode)


def warp_distance_sweep(models: Models, data: Dataset, d_max: int = 5, bank: CacheBank | None = None,
                        d_min: int = 0) -> dict[int, MetricsResult]:
    """Metrics of warping each cached frame t to t + d; the same cached
    frames are used for every d."""
    bank = bank or CacheBank.build(models, data.params)
    src = np.arange(len(data) - d_max)
    out = {}
    for d in range(d_min, d_max + 1):
        pred = warp_images(models, bank, data, src, src + d)
        out[d] = compute_metrics(pred, np.stack([data[i].image for i in src + d]))
    return out


def linear_fit(xs, ys) -> tuple[float, float, float]:
    """Least-squares slope, intercept and R^2."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    slope, icept = np.polyfit(x, y, 1)
    resid = y - (slope * x + icept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(icept), r2


def write_sweep_csv(sweep: dict[int, MetricsResult], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["distance", "l1", "psnr", "ssim"])
        for d in sorted(sweep):
            m = sweep[d]
            w.writerow([d, f"{m.l1:.6f}", f"{m.psnr:.4f}", f"{m.ssim:.6f}"])
    return path
