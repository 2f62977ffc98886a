"""Sequential and parallel cache/warp scheduling with timing instrumentation."""
from .execute import ModelWorkload, SleepWorkload, Workload, run_parallel, run_sequential
from .simulate import cache_assignments, sequential_fps, simulate_schedule
from .sync import measure_sync_overhead, sync_overhead_stats
from .types import CACHE, MODES, WARP, FrameRecord, Job, SchedulerConfig, SchedulerError, TimingReport

__all__ = [
    "CACHE", "WARP", "MODES", "Job", "FrameRecord", "SchedulerConfig", "SchedulerError", "TimingReport",
    "Workload", "SleepWorkload", "ModelWorkload", "run_sequential", "run_parallel",
    "simulate_schedule", "sequential_fps", "cache_assignments",
    "measure_sync_overhead", "sync_overhead_stats",
]
