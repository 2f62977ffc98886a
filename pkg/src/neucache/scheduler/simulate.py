"""Virtual-clock model of the sequential and parallel schedules.

Each worker is a FIFO server; the producer posts jobs in frame order and
blocks on cache-completion tokens and on full worker queues, exactly like the
threaded implementation.  Times are in milliseconds.
"""
from __future__ import annotations

from .types import CACHE, WARP, FrameRecord, SchedulerConfig, TimingReport, count_order_violations

Event = tuple[str, int, float, int]   # (event, worker, time_ms, frame); worker -1 = producer/consumer


def _arrival(cfg: SchedulerConfig, t: int, input_fps) -> float | None:
    fps = input_fps if input_fps is not None else cfg.input_fps
    return None if fps is None else 1000.0 * t / fps


def _sequential(cfg: SchedulerConfig, n_frames: int, input_fps, sync: float) -> tuple[list[Event], TimingReport]:
    nw = cfg.num_warps
    trace: list[Event] = []
    records = []
    free = 0.0
    last_emit = 0.0
    cache_frame = -1
    for t in range(n_frames):
        arr = _arrival(cfg, t, input_fps)
        enq = free if arr is None else arr
        trace.append(("enqueue", -1, enq, t))
        start = max(free, enq)
        end = start + cfg.tw_ms + sync
        trace += [("warp_start", 0, start, t), ("warp_end", 0, end, t)]
        free = end
        last_emit = max(end, last_emit)
        trace.append(("emit", -1, last_emit, t))
        records.append(FrameRecord(t, WARP, 0, enq, last_emit, cache_frame))
        if (t + 1) % nw == 0 and t + 1 < n_frames:
            # refresh the cache from the newest viewpoint before the next block
            start = free
            end = start + cfg.tg_ms + sync
            trace += [("cache_start", 0, start, t), ("cache_end", 0, end, t)]
            free = end
            cache_frame = t
    return trace, TimingReport(records, warmup=nw)


def _parallel(cfg: SchedulerConfig, n_frames: int, input_fps, sync: float) -> tuple[list[Event], TimingReport]:
    n, nw, bound = cfg.n_workers, cfg.num_warps, cfg.bound
    trace: list[Event] = []
    records = []
    free = [0.0] * n
    starts: list[list[float]] = [[] for _ in range(n)]
    tokens = [0.0] * n          # one primed cache per worker
    cached = [-1] * n           # frame index of the newest cache posted to each worker
    prod = 0.0
    last_emit = 0.0

    def post(w: int) -> float:
        nonlocal prod
        if len(starts[w]) >= bound:
            prod = max(prod, starts[w][-bound])
        return prod

    def serve(w: int, at: float, dur: float) -> tuple[float, float]:
        s = max(at, free[w])
        free[w] = s + dur
        starts[w].append(s)
        return s, s + dur

    for t in range(n_frames):
        k = t // nw
        arr = _arrival(cfg, t, input_fps)
        if arr is not None:
            prod = max(prod, arr)
        if t % nw == 0:
            prod = max(prod, tokens[k])
            trace.append(("cache_token", -1, prod, t))
            wc = k % n
            at = post(wc)
            trace.append(("enqueue_cache", wc, at, t))
            s, e = serve(wc, at, cfg.tg_ms + sync)
            trace += [("cache_start", wc, s, t), ("cache_end", wc, e, t)]
            tokens.append(e)
            cached[wc] = t
        ww = (k - 1) % n
        at = post(ww)
        enq = at if arr is None else arr
        trace.append(("enqueue_warp", ww, at, t))
        s, e = serve(ww, at, cfg.tw_ms + sync)
        trace += [("warp_start", ww, s, t), ("warp_end", ww, e, t)]
        last_emit = max(last_emit, e)
        trace.append(("emit", -1, last_emit, t))
        # the warp worker's newest cache is the one from block k-1 (or its primed one)
        records.append(FrameRecord(t, WARP, ww, enq, last_emit, cached[ww] if k >= 1 else -1))
    return trace, TimingReport(records, warmup=cfg.warmup)


def simulate_schedule(cfg: SchedulerConfig, n_frames: int, input_fps: float | None = None,
                      harness: bool | None = None) -> tuple[list[Event], TimingReport]:
    """Discrete-event run of the schedule selected by ``cfg.n_workers``.

    ``harness`` adds ``tsync_ms`` to every job (queue hand-off cost); it
    defaults to on for multi-worker runs and off for the plain sequential loop."""
    if n_frames < 0:
        raise ValueError("n_frames must be >= 0")
    harness = cfg.n_workers > 1 if harness is None else harness
    sync = cfg.tsync_ms if harness else 0.0
    if cfg.n_workers == 1:
        trace, rep = _sequential(cfg, n_frames, input_fps, sync)
    else:
        trace, rep = _parallel(cfg, n_frames, input_fps, sync)
    rep.order_violations = count_order_violations([r.frame for r in rep.records])
    return trace, rep


def sequential_fps(tg_ms: float, tw_ms: float, num_warps: int) -> float:
    """Closed form of the sequential frame rate."""
    return num_warps * 1000.0 / (tg_ms + num_warps * tw_ms)


def cache_assignments(trace: list[Event]) -> list[tuple[int, int]]:
    """(frame, worker) of every cache job in trace order."""
    return [(f, w) for ev, w, _, f in trace if ev == "cache_start"]
