"""Wall-clock measurement of the generator and the warp head."""
from __future__ import annotations

import time

import numpy as np

from ..numerics.tensor import no_grad
from ..renderer import generator_forward
from ..warp import make_warp_input, warp_forward


def time_call(fn, reps: int = 5, warmup: int = 1) -> float:
    """Median wall time of ``fn()`` in ms."""
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1000.0)
    return float(np.median(times))


def model_latencies(models, frame, target, reps: int = 5) -> dict[str, float]:
    """Median ms of one generator pass (``frame``) and one warp pass from
    its cache to ``target``.  UV rasterization is excluded from both."""
    with no_grad():
        _, cache = generator_forward(models.texture, frame, models.generator)
        tex = models.texture if models.warp.config.exwarp else None
        inp = make_warp_input(cache, target)
        tg = time_call(lambda: generator_forward(models.texture, frame, models.generator), reps)
        tw = time_call(lambda: warp_forward(inp, models.warp, tex), reps)
    return {"generator_ms": tg, "warp_ms": tw, "ratio": tg / tw}


def warp_latency(models, cache, target, reps: int = 5) -> float:
    with no_grad():
        tex = models.texture if models.warp.config.exwarp else None
        inp = make_warp_input(cache, target)
        return time_call(lambda: warp_forward(inp, models.warp, tex), reps)
