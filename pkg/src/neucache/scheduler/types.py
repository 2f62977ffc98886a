"""Jobs, scheduler configuration and timing reports."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

CACHE, WARP = "cache", "warp"
MODES = ("sequential", "parallel", "simulated")


class SchedulerError(RuntimeError):
    pass


@dataclass(frozen=True)
class Job:
    frame: int
    params: Any
    role: str
    enqueue_ms: float

    def __post_init__(self):
        if self.role not in (CACHE, WARP):
            raise SchedulerError(f"unknown job role {self.role!r}")


@dataclass(frozen=True)
class SchedulerConfig:
    n_workers: int = 2
    num_warps: int = 2
    mode: str = "parallel"
    tg_ms: float = 47.02
    tw_ms: float = 14.62
    tsync_ms: float = 0.0
    input_fps: float | None = None      # None: a new viewpoint is taken whenever the pipeline accepts one
    queue_bound: int | None = None      # per-worker input queue; default 2 * num_warps

    def __post_init__(self):
        if self.mode not in MODES:
            raise SchedulerError(f"unknown scheduler mode {self.mode!r}")
        if self.num_warps < 1:
            raise SchedulerError("num_warps must be >= 1")
        if self.n_workers < 1:
            raise SchedulerError("n_workers must be >= 1")
        if self.mode == "sequential" and self.n_workers != 1:
            raise SchedulerError("sequential mode uses exactly one worker")
        if min(self.tg_ms, self.tw_ms) <= 0 or self.tsync_ms < 0:
            raise SchedulerError("durations must be positive (tsync >= 0)")

    @property
    def bound(self) -> int:
        return self.queue_bound or 2 * self.num_warps

    @property
    def warmup(self) -> int:
        return self.num_warps * self.n_workers


@dataclass
class FrameRecord:
    frame: int
    role: str
    worker: int
    enqueue_ms: float
    emit_ms: float
    cache_frame: int

    @property
    def latency_ms(self) -> float:
        return self.emit_ms - self.enqueue_ms

    @property
    def distance(self) -> int:
        return self.frame - self.cache_frame


@dataclass
class TimingReport:
    records: list[FrameRecord] = field(default_factory=list)
    warmup: int = 0
    sync_overhead_ms: float = 0.0
    order_violations: int = 0
    dropped: int = 0

    @property
    def n_frames(self) -> int:
        return len(self.records)

    @property
    def latencies(self) -> np.ndarray:
        return np.array([r.latency_ms for r in self.records])

    def steady(self) -> list[FrameRecord]:
        return self.records[self.warmup:]

    @property
    def fps(self) -> float:
        """Frames per second over the steady-state window (warm-up excluded)."""
        n, w = len(self.records), self.warmup
        if n - w < 2 or w < 1:
            if n < 2:
                return 0.0
            w = 1
        span = self.records[-1].emit_ms - self.records[w - 1].emit_ms
        return 1000.0 * (n - w) / span if span > 0 else float("inf")

    @property
    def distances(self) -> list[int]:
        return [r.distance for r in self.records]

    def summary(self) -> dict:
        lat = np.array([r.latency_ms for r in self.steady()] or [0.0])
        return {
            "frames": self.n_frames,
            "warmup_frames": self.warmup,
            "fps": self.fps,
            "latency_mean_ms": float(lat.mean()),
            "latency_median_ms": float(np.median(lat)),
            "latency_p95_ms": float(np.percentile(lat, 95)),
            "sync_overhead_ms": self.sync_overhead_ms,
            "order_violations": self.order_violations,
            "dropped_frames": self.dropped,
            "max_warp_distance": max(self.distances, default=0),
        }

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "role", "worker", "enqueue_ms", "emit_ms", "latency_ms", "cache_frame"])
            for r in self.records:
                w.writerow([r.frame, r.role, r.worker, f"{r.enqueue_ms:.4f}", f"{r.emit_ms:.4f}",
                            f"{r.latency_ms:.4f}", r.cache_frame])
        return path

    def write_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.summary(), indent=2) + "\n")
        return path


def count_order_violations(frames: list[int]) -> int:
    return sum(1 for a, b in zip(frames, frames[1:]) if b != a + 1) + (1 if frames and frames[0] != 0 else 0)
