"""Threaded execution of the sequential and parallel schedules.

One producer (the caller's thread) distributes viewpoints, one worker thread
per device runs cache and warp jobs from its own bounded queue, and one
consumer thread restores frame order.  Caches never leave their worker.
"""
from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass
from typing import Any, Protocol, Sequence

from .types import CACHE, WARP, FrameRecord, Job, SchedulerConfig, SchedulerError, TimingReport, \
    count_order_violations

_STOP = object()
_POLL_S = 0.05


class Workload(Protocol):
    def cache(self, params: Any, frame: int) -> Any: ...

    def warp(self, params: Any, frame: int, cache: Any) -> Any: ...


def _sleep_ms(ms: float) -> None:
    # a plain sleep releases the GIL; spinning would stall the other workers
    time.sleep(ms / 1000.0)


@dataclass
class SleepWorkload:
    """Stand-in models that only take time."""
    tg_ms: float = 47.02
    tw_ms: float = 14.62

    def cache(self, params, frame):
        _sleep_ms(self.tg_ms)
        return frame

    def warp(self, params, frame, cache):
        _sleep_ms(self.tw_ms)
        return None


class ModelWorkload:
    """Runs the trained generator (cache role) and warp head (warp role)."""

    def __init__(self, models, keep_images: bool = True):
        self.models = models
        self.keep_images = keep_images

    def cache(self, params, frame):
        from ..numerics.tensor import no_grad
        from ..renderer import generator_forward
        with no_grad():
            _, c = generator_forward(self.models.texture, params, self.models.generator)
        return c

    def warp(self, params, frame, cache):
        from ..numerics.tensor import no_grad
        from ..warp import make_warp_input, warp_forward
        with no_grad():
            img = warp_forward(make_warp_input(cache, params), self.models.warp, self.models.texture)
        return img.data if self.keep_images else None


def _now_ms(t0: float) -> float:
    return (time.perf_counter() - t0) * 1000.0


def _put(q: queue.Queue, item, stop: threading.Event) -> None:
    while True:
        if stop.is_set():
            raise SchedulerError("pipeline stopped")
        try:
            q.put(item, timeout=_POLL_S)
            return
        except queue.Full:
            continue


def _get(q: queue.Queue, stop: threading.Event, errors: list):
    while True:
        if errors:
            raise SchedulerError(f"worker failed: {errors[0]!r}") from errors[0]
        try:
            return q.get(timeout=_POLL_S)
        except queue.Empty:
            if stop.is_set() and not errors:
                raise SchedulerError("pipeline stopped")


class _Worker(threading.Thread):
    def __init__(self, wid, workload, inbox, out_q, cache_q, t0, stop, errors, primed):
        super().__init__(daemon=True, name=f"neucache-worker-{wid}")
        self.wid, self.workload = wid, workload
        self.inbox, self.out_q, self.cache_q = inbox, out_q, cache_q
        self.t0, self.stop, self.errors = t0, stop, errors
        self.cache, self.cache_frame = primed, -1

    def run(self):
        try:
            while True:
                job = _get(self.inbox, self.stop, self.errors)
                if job is _STOP:
                    return
                if job.role == CACHE:
                    self.cache = self.workload.cache(job.params, job.frame)
                    self.cache_frame = job.frame
                    _put(self.cache_q, job.frame, self.stop)
                else:
                    image = self.workload.warp(job.params, job.frame, self.cache)
                    _put(self.out_q, (job, self.wid, self.cache_frame, _now_ms(self.t0), image), self.stop)
        except SchedulerError:
            return
        except BaseException as exc:   # noqa: BLE001 - forwarded to the consumer
            self.errors.append(exc)
            self.stop.set()


class _Consumer(threading.Thread):
    """Reorders worker output into frame order."""

    def __init__(self, out_q, n_frames, t0, stop, errors):
        super().__init__(daemon=True, name="neucache-consumer")
        self.out_q, self.n, self.t0, self.stop, self.errors = out_q, n_frames, t0, stop, errors
        self.records: list[FrameRecord] = []
        self.images: list[Any] = []
        self.arrival_order: list[int] = []

    def run(self):
        pending = {}
        nxt = 0
        try:
            while nxt < self.n:
                job, wid, cache_frame, _, image = _get(self.out_q, self.stop, self.errors)
                self.arrival_order.append(job.frame)
                pending[job.frame] = (job, wid, cache_frame, image)
                while nxt in pending:
                    job, wid, cf, img = pending.pop(nxt)
                    self.records.append(FrameRecord(job.frame, WARP, wid, job.enqueue_ms, _now_ms(self.t0), cf))
                    self.images.append(img)
                    nxt += 1
        except SchedulerError:
            return


def _input_gate(cfg: SchedulerConfig, t0: float, t: int, input_fps) -> float | None:
    fps = input_fps if input_fps is not None else cfg.input_fps
    if fps is None:
        return None
    arrival = 1000.0 * t / fps
    wait = arrival - _now_ms(t0)
    if wait > 0:
        time.sleep(wait / 1000.0)
    return arrival


def run_parallel(stream: Sequence, workload: Workload, cfg: SchedulerConfig,
                 input_fps: float | None = None) -> tuple[list, TimingReport]:
    """Threaded multi-worker schedule: block k's cache job goes to worker
    k mod n, its warp jobs to the worker holding block k-1's cache."""
    n, nw = cfg.n_workers, cfg.num_warps
    if n < 2:
        raise SchedulerError("run_parallel needs at least two workers")
    frames = list(stream)
    if not frames:
        return [], TimingReport()
    stop = threading.Event()
    errors: list[BaseException] = []
    inboxes = [queue.Queue(maxsize=cfg.bound) for _ in range(n)]
    out_q: queue.Queue = queue.Queue()
    cache_q: queue.Queue = queue.Queue()
    primed = [workload.cache(frames[0], -1) for _ in range(n)]
    for _ in range(n):
        cache_q.put(-1)
    t0 = time.perf_counter()
    workers = [_Worker(w, workload, inboxes[w], out_q, cache_q, t0, stop, errors, primed[w]) for w in range(n)]
    consumer = _Consumer(out_q, len(frames), t0, stop, errors)
    for th in workers + [consumer]:
        th.start()
    try:
        for t, params in enumerate(frames):
            k = t // nw
            arrival = _input_gate(cfg, t0, t, input_fps)
            if t % nw == 0:
                _get(cache_q, stop, errors)            # wait for a cache slot
                _put(inboxes[k % n], Job(t, params, CACHE, _now_ms(t0)), stop)
            enq = _now_ms(t0)
            _put(inboxes[(k - 1) % n], Job(t, params, WARP, enq if arrival is None else arrival), stop)
        consumer.join()
    finally:
        for q in inboxes:
            try:
                q.put(_STOP, timeout=1.0)
            except queue.Full:
                pass
        stop.set()
        for th in workers:
            th.join(timeout=5.0)
    if errors:
        raise SchedulerError(f"worker failed: {errors[0]!r}") from errors[0]
    rep = TimingReport(consumer.records, warmup=cfg.warmup)
    rep.order_violations = count_order_violations([r.frame for r in rep.records])
    return consumer.images, rep


def run_sequential(stream: Sequence, workload: Workload, cfg: SchedulerConfig,
                   input_fps: float | None = None, harness: bool = False) -> tuple[list, TimingReport]:
    """Single-worker schedule: warp each frame of a block from the newest
    cache, then refresh the cache from the block's last viewpoint.

    With ``harness`` every job and image travels through the same queues and
    threads as the parallel mode (used to measure synchronization cost)."""
    frames = list(stream)
    if not frames:
        return [], TimingReport()
    nw = cfg.num_warps
    if harness:
        return _sequential_harness(frames, workload, cfg, input_fps)
    cache = workload.cache(frames[0], -1)
    cache_frame = -1
    records, images = [], []
    t0 = time.perf_counter()
    for t, params in enumerate(frames):
        arrival = _input_gate(cfg, t0, t, input_fps)
        enq = _now_ms(t0) if arrival is None else arrival
        images.append(workload.warp(params, t, cache))
        records.append(FrameRecord(t, WARP, 0, enq, _now_ms(t0), cache_frame))
        if (t + 1) % nw == 0 and t + 1 < len(frames):
            cache = workload.cache(params, t)
            cache_frame = t
    rep = TimingReport(records, warmup=nw)
    rep.order_violations = count_order_violations([r.frame for r in records])
    return images, rep


def _sequential_harness(frames, workload, cfg, input_fps):
    nw = cfg.num_warps
    stop = threading.Event()
    errors: list[BaseException] = []
    inbox: queue.Queue = queue.Queue(maxsize=cfg.bound)
    out_q: queue.Queue = queue.Queue()
    cache_q: queue.Queue = queue.Queue()
    primed = workload.cache(frames[0], -1)
    t0 = time.perf_counter()
    worker = _Worker(0, workload, inbox, out_q, cache_q, t0, stop, errors, primed)
    consumer = _Consumer(out_q, len(frames), t0, stop, errors)
    worker.start()
    consumer.start()
    try:
        for t, params in enumerate(frames):
            arrival = _input_gate(cfg, t0, t, input_fps)
            if arrival is None:
                # closed loop: take the next viewpoint once the previous image is out
                while len(consumer.records) < t and not errors and consumer.is_alive():
                    time.sleep(0)
            enq = _now_ms(t0)
            _put(inbox, Job(t, params, WARP, enq if arrival is None else arrival), stop)
            if (t + 1) % nw == 0 and t + 1 < len(frames):
                _put(inbox, Job(t, params, CACHE, _now_ms(t0)), stop)
                if arrival is None:
                    _get(cache_q, stop, errors)
        consumer.join()
    finally:
        try:
            inbox.put(_STOP, timeout=1.0)
        except queue.Full:
            pass
        stop.set()
        worker.join(timeout=5.0)
    if errors:
        raise SchedulerError(f"worker failed: {errors[0]!r}") from errors[0]
    rep = TimingReport(consumer.records, warmup=nw)
    rep.order_violations = count_order_violations([r.frame for r in rep.records])
    return consumer.images, rep
