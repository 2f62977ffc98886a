"""Frame records on disk.

Each frame is one little-endian binary file::

    b"NCR1"  uint32 H  uint32 W  uint32 k
    float32 uv_map[2*H*W]  mask[H*W]  image[3*H*W]  theta[6]  expr[k]  cam[3]

next to a ``manifest.txt`` of ``key=value`` lines (frames, fps, seed, ...).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .proxy import HeadProxy, deform_and_pose, make_head_proxy
from .raster import Intrinsics
from .shading import ShadingParams, reference_render
from .trajectory import FrameParams, frame_track, generate_trajectory, rasterize_frame

MAGIC = b"NCR1"
_HEADER = struct.Struct("<4sIII")


class DatasetError(OSError):
    pass


@dataclass
class Frame:
    params: FrameParams
    image: np.ndarray  # 3 x H x W


def render_frames(params: list[FrameParams], proxy: HeadProxy, h: int, w: int,
                  clean: list[FrameParams] | None = None,
                  shading: ShadingParams = ShadingParams()) -> list[Frame]:
    """Rasterize UV maps from ``params`` and shade ground truth from ``clean``
    (the noise-free motion; defaults to ``params``)."""
    clean = clean or params
    framed = frame_track(params, proxy, w)
    out = []
    for p, c in zip(framed, clean):
        p = rasterize_frame(p, proxy, h, w)
        intr: Intrinsics = p.intrinsics(h, w)
        verts = deform_and_pose(proxy, c.theta, c.expr)
        img = reference_render(verts, proxy, c.cam, intr, h, w, shading)
        out.append(Frame(p, img))
    return out


def build_split(seed: int, n_frames: int, fps: int, h: int, w: int, start_frame: int = 0,
                jitter_sigma: float = 0.0, proxy: HeadProxy | None = None, n_expr: int = 4) -> list[Frame]:
    proxy = proxy or make_head_proxy(n_expr=n_expr)
    tracked = generate_trajectory(seed, n_frames, fps, jitter_sigma, start_frame, n_expr)
    clean = generate_trajectory(seed, n_frames, fps, 0.0, start_frame, n_expr) if jitter_sigma > 0 else None
    return render_frames(tracked, proxy, h, w, clean)


def encode_frame(frame: Frame) -> bytes:
    p = frame.params
    _, h, w = frame.image.shape
    k = len(p.expr)
    parts = [p.uv_map, p.mask, frame.image, p.theta, p.expr, p.cam]
    body = b"".join(np.asarray(a, dtype="<f4").tobytes() for a in parts)
    return _HEADER.pack(MAGIC, h, w, k) + body


def decode_frame(buf: bytes, t: int = 0, fps: int = 30) -> Frame:
    if len(buf) < _HEADER.size:
        raise DatasetError("frame record shorter than its header")
    magic, h, w, k = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise DatasetError(f"bad frame magic {magic!r}")
    n = 2 * h * w + h * w + 3 * h * w + 6 + k + 3
    if len(buf) != _HEADER.size + 4 * n:
        raise DatasetError(f"frame record has {len(buf)} bytes, expected {_HEADER.size + 4 * n}")
    vals = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).astype(np.float32)
    o = 0

    def take(count, shape):
        nonlocal o
        a = vals[o:o + count].reshape(shape)
        o += count
        return a

    uv = take(2 * h * w, (2, h, w))
    mask = take(h * w, (h, w))
    img = take(3 * h * w, (3, h, w))
    theta = take(6, (6,)).astype(np.float64)
    expr = take(k, (k,)).astype(np.float64)
    cam = take(3, (3,)).astype(np.float64)
    return Frame(FrameParams(t=t, theta=theta, expr=expr, cam=cam, fps=fps, uv_map=uv, mask=mask), img)


def write_split(frames: list[Frame], directory, manifest: dict) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        (d / f"frame_{i:05d}.ncr").write_bytes(encode_frame(f))
    lines = [f"{k}={v}" for k, v in {"frames": len(frames), **manifest}.items()]
    (d / "manifest.txt").write_text("\n".join(lines) + "\n")
    return d


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.txt"
    if not path.exists():
        raise DatasetError(f"no manifest.txt in {directory}")
    out = {}
    for line in path.read_text().splitlines():
        if line.strip():
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
    return out


@dataclass
class Dataset:
    """A split loaded into memory as stacked arrays plus per-frame params."""
    frames: list[Frame]
    fps: int
    seed: int
    start_frame: int = 0

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i) -> Frame:
        return self.frames[i]

    @property
    def params(self) -> list[FrameParams]:
        return [f.params for f in self.frames]

    @property
    def resolution(self) -> tuple[int, int]:
        return self.frames[0].image.shape[1:]

    def subsample(self, step: int) -> "Dataset":
        frames = [Frame(replace(f.params, fps=self.fps // step), f.image) for f in self.frames[::step]]
        return Dataset(frames, self.fps // step, self.seed, self.start_frame // step)


def load_split(directory) -> Dataset:
    d = Path(directory)
    man = read_manifest(d)
    n = int(man["frames"])
    fps = int(man.get("fps", 30))
    start = int(man.get("start_frame", 0))
    frames = []
    for i in range(n):
        path = d / f"frame_{i:05d}.ncr"
        if not path.exists():
            raise DatasetError(f"missing frame record {path}")
        frames.append(decode_frame(path.read_bytes(), t=start + i, fps=fps))
    return Dataset(frames, fps, int(man.get("seed", 0)), start)


def generate_dataset(out_dir, seed: int, n_frames: int, fps: int = 30, h: int = 64, w: int = 64,
                     n_test: int | None = None, jitter_sigma: float = 0.0, n_expr: int = 4) -> dict[str, Path]:
    """Write ``train/`` (frames 0..n-1) and ``test/`` (the continuation of the
    same motion curves) below ``out_dir``."""
    n_test = n_frames // 4 if n_test is None else n_test
    proxy = make_head_proxy(n_expr=n_expr)
    out = {}
    for split, start, count in (("train", 0, n_frames), ("test", n_frames, n_test)):
        if count <= 0:
            continue
        frames = build_split(seed, count, fps, h, w, start, jitter_sigma, proxy, n_expr)
        out[split] = write_split(frames, Path(out_dir) / split, {
            "fps": fps, "seed": seed, "split": split, "start_frame": start, "height": h, "width": w,
            "expr_dims": n_expr, "jitter_sigma": jitter_sigma,
        })
    return out
