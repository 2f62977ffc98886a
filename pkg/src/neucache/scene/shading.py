"""Classical view-dependent shader that produces the ground-truth images."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .proxy import HeadProxy, vertex_normals
from .raster import Intrinsics, rasterize

BACKGROUND = (0.2, 0.25, 0.3)


@dataclass(frozen=True)
class ShadingParams:
    light_dir: tuple = (0.35, 0.45, 0.82)
    ambient: float = 0.25
    diffuse: float = 0.75
    specular: float = 0.35
    shininess: float = 20.0
    background: tuple = BACKGROUND
    checker_cells: int = 8
    noise_cells: int = 24
    seed: int = 17


def _hash2(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Integer hash -> [0, 1), deterministic across platforms."""
    h = (ix.astype(np.uint64) * np.uint64(73856093)) ^ (iy.astype(np.uint64) * np.uint64(19349663)) \
        ^ np.uint64(seed * 83492791 & 0xFFFFFFFF)
    h = (h ^ (h >> np.uint64(13))) * np.uint64(0x5bd1e995) & np.uint64(0xFFFFFFFF)
    h = h ^ (h >> np.uint64(15))
    return (h & np.uint64(0xFFFF)).astype(np.float64) / 65536.0


def _value_noise(u: np.ndarray, v: np.ndarray, cells: int, seed: int) -> np.ndarray:
    x, y = u * cells, v * cells
    x0, y0 = np.floor(x), np.floor(y)
    fx, fy = x - x0, y - y0
    fx, fy = fx * fx * (3 - 2 * fx), fy * fy * (3 - 2 * fy)
    ix, iy = x0.astype(np.int64) % cells, y0.astype(np.int64)
    ix1 = (ix + 1) % cells
    n00, n10 = _hash2(ix, iy, seed), _hash2(ix1, iy, seed)
    n01, n11 = _hash2(ix, iy + 1, seed), _hash2(ix1, iy + 1, seed)
    return (1 - fy) * ((1 - fx) * n00 + fx * n10) + fy * ((1 - fx) * n01 + fx * n11)


def albedo(uv: np.ndarray, params: ShadingParams = ShadingParams()) -> np.ndarray:
    """Checker-plus-hash procedural albedo, 3 x ... for uv of shape 2 x ..."""
    u, v = uv[0], uv[1]
    n = params.checker_cells
    checker = ((np.floor(u * n * 2) + np.floor(v * n)) % 2)
    noise = _value_noise(u, v, params.noise_cells, params.seed)
    hue = _value_noise(u, v, 6, params.seed + 1)
    base = np.stack([0.85 - 0.25 * hue, 0.6 + 0.1 * hue, 0.45 + 0.35 * hue])
    return np.clip(base * (0.7 + 0.3 * checker) * (0.75 + 0.5 * noise), 0.0, 1.0)


def reference_render(vertices: np.ndarray, proxy: HeadProxy, cam, intr: Intrinsics, h: int, w: int,
                     params: ShadingParams = ShadingParams(), albedo_fn=None) -> np.ndarray:
    """RGB image (3 x H x W, values in [0, 1]) of the posed proxy."""
    frags = rasterize(vertices, proxy.triangles, cam, intr, h, w)
    img = np.empty((3, h, w))
    img[:] = np.asarray(params.background, dtype=np.float64)[:, None, None]
    m = frags.mask
    if not m.any():
        return img.astype(np.float32)
    uv = frags.interpolate(proxy.uv_coords, proxy.triangles)[:, m]
    nrm = frags.interpolate(vertex_normals(vertices, proxy.triangles), proxy.triangles)[:, m]
    nrm /= np.maximum(np.linalg.norm(nrm, axis=0, keepdims=True), 1e-12)
    pos = frags.interpolate(vertices, proxy.triangles)[:, m]
    light = np.asarray(params.light_dir, dtype=np.float64)
    light /= np.linalg.norm(light)
    ndl = np.einsum("c,cn->n", light, nrm)
    lambert = np.maximum(ndl, 0.0)
    view = np.asarray(cam, dtype=np.float64)[:, None] - pos
    view /= np.maximum(np.linalg.norm(view, axis=0, keepdims=True), 1e-12)
    refl = 2.0 * ndl * nrm - light[:, None]
    spec = np.maximum(np.sum(refl * view, axis=0), 0.0) ** params.shininess * (ndl > 0)
    alb = albedo(uv, params) if albedo_fn is None else albedo_fn(uv)
    color = alb * (params.ambient + params.diffuse * lambert) + params.specular * spec
    img[:, m] = np.clip(color, 0.0, 1.0)
    return img.astype(np.float32)
