"""Z-buffered software rasterizer producing UV maps and coverage masks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .proxy import HeadProxy

NEAR = 1e-3


@dataclass(frozen=True)
class Intrinsics:
    focal: float                # pixels
    cx: float                   # principal point, continuous pixel coords
    cy: float
    look_at: tuple = (0.0, 0.0, 0.0)
    up: tuple = (0.0, 1.0, 0.0)

    @classmethod
    def centered(cls, focal: float, h: int, w: int, look_at=(0.0, 0.0, 0.0)) -> "Intrinsics":
        return cls(float(focal), w / 2.0, h / 2.0, tuple(float(v) for v in look_at))


def camera_basis(cam, look_at, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """Rows: right, up, forward (world -> camera rotation)."""
    cam = np.asarray(cam, dtype=np.float64)
    fwd = np.asarray(look_at, dtype=np.float64) - cam
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    return np.stack([right, np.cross(right, fwd), fwd])


def project(points: np.ndarray, cam, intr: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """World points -> (pixel xy, camera depth)."""
    rot = camera_basis(cam, intr.look_at, intr.up)
    pc = (np.asarray(points, dtype=np.float64) - np.asarray(cam, dtype=np.float64)) @ rot.T
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = intr.focal * pc[:, 0] / z + intr.cx
        py = -intr.focal * pc[:, 1] / z + intr.cy
    return np.stack([px, py], -1), z


@dataclass
class Fragments:
    """Per-pixel rasterization result: triangle id (-1 = empty) and
    perspective-correct barycentric weights (3 x H x W)."""
    tri_id: np.ndarray
    bary: np.ndarray
    depth: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return self.tri_id >= 0

    def interpolate(self, attr: np.ndarray, triangles: np.ndarray) -> np.ndarray:
        """Interpolate per-vertex ``attr`` (K x A) -> A x H x W (0 where empty)."""
        h, w = self.tri_id.shape
        out = np.zeros((attr.shape[1], h, w))
        m = self.mask
        tri = triangles[self.tri_id[m]]
        vals = sum(self.bary[k][m][:, None] * attr[tri[:, k]] for k in range(3))
        out[:, m] = vals.T
        return out


def rasterize(vertices: np.ndarray, triangles: np.ndarray, cam, intr: Intrinsics, h: int, w: int) -> Fragments:
    xy, z = project(vertices, cam, intr)
    tri_id = np.full((h, w), -1, dtype=np.int64)
    zbuf = np.full((h, w), np.inf)
    bary = np.zeros((3, h, w))
    for t, (i0, i1, i2) in enumerate(triangles):
        zs = z[[i0, i1, i2]]
        if np.any(zs <= NEAR):
            continue
        a, b, c = xy[i0], xy[i1], xy[i2]
        area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(area) < 1e-12:
            continue
        x0 = max(int(np.floor(min(a[0], b[0], c[0]) - 0.5)), 0)
        x1 = min(int(np.ceil(max(a[0], b[0], c[0]) - 0.5)), w - 1)
        y0 = max(int(np.floor(min(a[1], b[1], c[1]) - 0.5)), 0)
        y1 = min(int(np.ceil(max(a[1], b[1], c[1]) - 0.5)), h - 1)
        if x0 > x1 or y0 > y1:
            continue
        py, px = np.mgrid[y0:y1 + 1, x0:x1 + 1] + 0.5
        l0 = ((b[0] - px) * (c[1] - py) - (b[1] - py) * (c[0] - px)) / area
        l1 = ((c[0] - px) * (a[1] - py) - (c[1] - py) * (a[0] - px)) / area
        l2 = 1.0 - l0 - l1
        inside = (l0 >= -1e-9) & (l1 >= -1e-9) & (l2 >= -1e-9)
        if not inside.any():
            continue
        # perspective-correct weights and depth
        q0, q1, q2 = l0 / zs[0], l1 / zs[1], l2 / zs[2]
        qs = q0 + q1 + q2
        depth = 1.0 / qs
        sub_z = zbuf[y0:y1 + 1, x0:x1 + 1]
        win = inside & (depth < sub_z)
        if not win.any():
            continue
        sub_z[win] = depth[win]
        tri_id[y0:y1 + 1, x0:x1 + 1][win] = t
        for k, q in enumerate((q0, q1, q2)):
            bary[k, y0:y1 + 1, x0:x1 + 1][win] = (q / qs)[win]
    return Fragments(tri_id, bary, zbuf)


def rasterize_uv(vertices, proxy: HeadProxy, cam, intr: Intrinsics, h: int, w: int):
    """Return ``(uv_map 2 x H x W, mask H x W)``; empty pixels carry uv (0, 0)."""
    frags = rasterize(vertices, proxy.triangles, cam, intr, h, w)
    uv = np.clip(frags.interpolate(proxy.uv_coords, proxy.triangles), 0.0, 1.0)
    return uv.astype(np.float32), frags.mask.astype(np.float32)
