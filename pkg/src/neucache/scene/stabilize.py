"""Head stabilization: delayed size-5 Gaussian smoothing of the head track."""
from __future__ import annotations

from collections import deque

import numpy as np

from ..numerics.ops import gaussian_kernel1d
from .proxy import HeadProxy
from .raster import Intrinsics, project

EAR_FRACTION = 0.5


class StabilizerState:
    """Ring buffer of the last ``size`` raw observations.

    The emitted value at time t weights observations t-4 ... t, i.e. a
    centered Gaussian estimate delayed by two frames.  Until the buffer is
    full the first observation is replicated."""

    def __init__(self, size: int = 5, sigma: float = 1.0):
        self.weights = gaussian_kernel1d(size, sigma)
        self.buffer: deque = deque(maxlen=size)

    def push(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        if not self.buffer:
            for _ in range(self.buffer.maxlen - 1):
                self.buffer.append(obs)
        self.buffer.append(obs)
        return sum(w * o for w, o in zip(self.weights, self.buffer))


def stabilize_track(raw_centers, raw_scales, state: StabilizerState | None = None,
                    scale_state: StabilizerState | None = None):
    """Smooth a stream of head centers (N x 3) and framing scales (N,)."""
    state = state or StabilizerState()
    scale_state = scale_state or StabilizerState()
    centers = np.array([state.push(c) for c in raw_centers])
    scales = np.array([float(scale_state.push(s)) for s in raw_scales])
    return centers, scales


def ear_focal(vertices: np.ndarray, proxy: HeadProxy, cam, look_at, width: int,
              fraction: float = EAR_FRACTION) -> float:
    """Focal length (pixels) that maps the projected ear-to-ear distance to
    ``fraction`` of the image width."""
    pts = vertices[[proxy.landmark_left, proxy.landmark_right]]
    xy, _ = project(pts, cam, Intrinsics(1.0, 0.0, 0.0, tuple(look_at)))
    dist = float(np.linalg.norm(xy[0] - xy[1]))
    return fraction * width / max(dist, 1e-9)
