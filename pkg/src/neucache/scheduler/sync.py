"""Cost of the queue hand-offs, estimated as a latency difference."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .execute import Workload, run_sequential
from .simulate import simulate_schedule
from .types import SchedulerConfig, SchedulerError

MIN_FRAMES = 100


def sync_overhead_stats(models: Workload | None, stream: Sequence | int, cfg: SchedulerConfig) -> tuple[float, float]:
    """(mean, 95% half-width) of the per-frame latency difference between
    the plain sequential loop and the same loop routed through the harness."""
    n = stream if isinstance(stream, int) else len(stream)
    if n < MIN_FRAMES:
        raise SchedulerError(f"need at least {MIN_FRAMES} frames for a stable estimate, got {n}")
    seq = SchedulerConfig(n_workers=1, num_warps=cfg.num_warps, mode="sequential" if cfg.mode != "simulated" else "simulated",
                          tg_ms=cfg.tg_ms, tw_ms=cfg.tw_ms, tsync_ms=cfg.tsync_ms, queue_bound=cfg.queue_bound)
    if cfg.mode == "simulated":
        _, plain = simulate_schedule(seq, n, harness=False)
        _, harn = simulate_schedule(seq, n, harness=True)
    else:
        if models is None:
            raise SchedulerError("real sync measurement needs a workload")
        frames = list(stream) if not isinstance(stream, int) else [None] * n
        _, plain = run_sequential(frames, models, seq)
        _, harn = run_sequential(frames, models, seq, harness=True)
    a = np.array([r.latency_ms for r in plain.steady()])
    b = np.array([r.latency_ms for r in harn.steady()])
    diff = b - a
    half = 1.96 * diff.std(ddof=1) / np.sqrt(len(diff)) if len(diff) > 1 else 0.0
    return float(diff.mean()), float(half)


def measure_sync_overhead(models: Workload | None, stream: Sequence | int, cfg: SchedulerConfig) -> float:
    """Mean synchronization overhead in ms per frame."""
    return sync_overhead_stats(models, stream, cfg)[0]
