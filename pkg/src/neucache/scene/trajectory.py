"""Band-limited procedural motion (pose, expression, camera) and frame framing."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..numerics.sh import sh_basis9
from .proxy import HeadProxy, deform_and_pose, head_forward, rotation_matrix
from .raster import Intrinsics, rasterize_uv
from .stabilize import StabilizerState, ear_focal

CAM_DISTANCE = 3.2
# per-dimension peak amplitude of the summed sinusoids
ROT_AMP = np.array([0.18, 0.45, 0.1])     # pitch, yaw, roll (rad)
TRANS_AMP = np.array([0.06, 0.04, 0.05])
EXPR_AMP = 0.8
CAM_AMP = np.array([0.25, 0.12])          # camera azimuth, elevation (rad)
N_TONES = 3
FREQ_RANGE = (0.08, 0.45)                 # Hz


@dataclass
class FrameParams:
    t: int
    theta: np.ndarray
    expr: np.ndarray
    cam: np.ndarray
    fps: int = 30
    look_at: np.ndarray | None = None
    focal: float | None = None
    uv_map: np.ndarray | None = None     # 2 x H x W
    mask: np.ndarray | None = None       # H x W

    @property
    def head_center(self) -> np.ndarray:
        return np.asarray(self.theta[3:6], dtype=np.float64)

    @property
    def h_obj(self) -> np.ndarray:
        return sh_basis9(head_forward(self.theta))

    @property
    def view_dir(self) -> np.ndarray:
        d = self.head_center - np.asarray(self.cam, dtype=np.float64)
        return d / np.linalg.norm(d)

    def intrinsics(self, h: int, w: int) -> Intrinsics:
        look = self.head_center if self.look_at is None else self.look_at
        focal = self.focal if self.focal is not None else 0.5 * w / np.tan(np.radians(20))
        return Intrinsics.centered(focal, h, w, look)


def _tones(rng: np.random.Generator, n_dims: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    freqs = rng.uniform(*FREQ_RANGE, size=(n_dims, N_TONES))
    phases = rng.uniform(0, 2 * np.pi, size=(n_dims, N_TONES))
    weights = rng.uniform(0.5, 1.0, size=(n_dims, N_TONES))
    weights /= weights.sum(axis=1, keepdims=True)
    return freqs, phases, weights


def _eval(tones, times: np.ndarray) -> np.ndarray:
    freqs, phases, weights = tones
    arg = 2 * np.pi * freqs[None] * times[:, None, None] + phases[None]
    return np.sum(weights[None] * np.sin(arg), axis=-1)  # N x dims


def camera_position(azimuth: float, elevation: float, distance: float = CAM_DISTANCE) -> np.ndarray:
    return distance * np.array([np.sin(azimuth) * np.cos(elevation), np.sin(elevation),
                                np.cos(azimuth) * np.cos(elevation)])


def generate_trajectory(seed: int, n_frames: int, fps: int = 30, jitter_sigma: float = 0.0,
                        start_frame: int = 0, n_expr: int = 4) -> list[FrameParams]:
    """Sample smooth motion curves at ``fps``.

    The curves are continuous functions of time fixed by ``seed``, so a 60 fps
    trajectory sampled at even indices equals the 30 fps one exactly."""
    if fps not in (30, 60):
        raise ValueError(f"fps must be 30 or 60, got {fps}")
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    rng = np.random.default_rng(seed)
    rot_t, trans_t, expr_t, cam_t = _tones(rng, 3), _tones(rng, 3), _tones(rng, n_expr), _tones(rng, 2)
    idx = np.arange(start_frame, start_frame + n_frames)
    times = idx / fps
    rot = _eval(rot_t, times) * ROT_AMP
    trans = _eval(trans_t, times) * TRANS_AMP
    expr = _eval(expr_t, times) * EXPR_AMP
    cam_ang = _eval(cam_t, times) * CAM_AMP
    if jitter_sigma > 0:
        jr = np.random.default_rng([seed, fps, start_frame, 1])
        rot = rot + jr.normal(0, jitter_sigma, rot.shape)
        trans = trans + jr.normal(0, jitter_sigma, trans.shape)
        expr = expr + jr.normal(0, jitter_sigma, expr.shape)
        cam_ang = cam_ang + jr.normal(0, jitter_sigma, cam_ang.shape)
    frames = []
    for n, i in enumerate(idx):
        frames.append(FrameParams(
            t=int(i), theta=np.concatenate([rot[n], trans[n]]), expr=expr[n].copy(),
            cam=camera_position(*cam_ang[n]), fps=fps,
        ))
    return frames


def frame_track(frames: list[FrameParams], proxy: HeadProxy, width: int) -> list[FrameParams]:
    """Center the virtual camera on the smoothed head midpoint and scale it by
    the smoothed ear-to-ear distance."""
    centers, focals = [], []
    for f in frames:
        verts = deform_and_pose(proxy, f.theta, f.expr)
        centers.append(f.head_center)
        focals.append(ear_focal(verts, proxy, f.cam, f.head_center, width))
    c_state, s_state = StabilizerState(), StabilizerState()
    out = []
    for f, c, s in zip(frames, centers, focals):
        out.append(replace(f, look_at=c_state.push(c), focal=float(s_state.push(s))))
    return out


def rasterize_frame(frame: FrameParams, proxy: HeadProxy, h: int, w: int) -> FrameParams:
    verts = deform_and_pose(proxy, frame.theta, frame.expr)
    uv, mask = rasterize_uv(verts, proxy, frame.cam, frame.intrinsics(h, w), h, w)
    return replace(frame, uv_map=uv, mask=mask)


def rotate_view(frame: FrameParams, yaw: float) -> FrameParams:
    """Rotate the head about the vertical axis on top of its tracked pose
    (novel-view evaluation); expression is held."""
    r = rotation_matrix([0.0, yaw, 0.0]) @ rotation_matrix(frame.theta[:3])
    angle = np.arccos(np.clip((np.trace(r) - 1) / 2, -1, 1))
    if angle < 1e-12:
        aa = np.zeros(3)
    else:
        aa = angle / (2 * np.sin(angle)) * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return replace(frame, theta=np.concatenate([aa, frame.theta[3:6]]), uv_map=None, mask=None)
