"""Deformable head proxy: a lat-long ellipsoid grid with smooth blendshapes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EXPR_CLAMP = 3.0


@dataclass(frozen=True)
class HeadProxy:
    base_vertices: np.ndarray      # K x 3
    triangles: np.ndarray          # T x 3 (int)
    uv_coords: np.ndarray          # K x 2 in [0, 1]
    blendshape_basis: np.ndarray   # k x K x 3
    landmark_left: int
    landmark_right: int
    radius: float = 1.0

    @property
    def n_vertices(self) -> int:
        return len(self.base_vertices)

    @property
    def n_expr(self) -> int:
        return len(self.blendshape_basis)


def _bump(points: np.ndarray, center, width: float) -> np.ndarray:
    c = np.asarray(center, dtype=np.float64)
    c = c / np.linalg.norm(c)
    d2 = np.sum((points - c) ** 2, axis=1)
    return np.exp(-d2 / (2 * width ** 2))


def make_head_proxy(n_lat: int = 20, n_lon: int = 20, n_expr: int = 4) -> HeadProxy:
    """Build the default proxy.  Canonical forward axis is +z, up is +y.

    The longitude seam sits at the back of the head (u = 0 and u = 1 share
    positions), the face points along u = 0.5."""
    v = np.linspace(0.0, 1.0, n_lat)
    u = np.linspace(0.0, 1.0, n_lon)
    vv, uu = np.meshgrid(v, u, indexing="ij")
    polar = np.pi * vv
    azim = 2 * np.pi * uu - np.pi
    sphere = np.stack([np.sin(polar) * np.sin(azim), np.cos(polar), np.sin(polar) * np.cos(azim)], -1).reshape(-1, 3)
    axes = np.array([0.85, 1.1, 0.95])
    base = sphere * axes
    uv = np.stack([uu, vv], -1).reshape(-1, 2)

    tris = []
    for i in range(n_lat - 1):
        for j in range(n_lon - 1):
            a = i * n_lon + j
            b, c, d = a + 1, a + n_lon, a + n_lon + 1
            tris.append((a, c, b))
            tris.append((b, c, d))
    triangles = np.array(tris, dtype=np.int64)

    # smooth displacement fields along the ellipsoid normal
    normals = sphere / axes
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    centers = [
        ((0.0, -0.55, 0.85), 0.35),   # jaw / mouth
        ((0.0, 0.45, 0.9), 0.35),     # brow
        ((0.75, -0.1, 0.65), 0.3),    # cheek (right)
        ((-0.75, -0.1, 0.65), 0.3),   # cheek (left)
    ]
    basis = []
    for j in range(n_expr):
        c, wdt = centers[j % len(centers)]
        sign = 1.0 if j < len(centers) else -1.0
        basis.append(0.1 * sign * _bump(sphere, c, wdt)[:, None] * normals)
    basis = np.array(basis).reshape(n_expr, -1, 3)

    eq = (n_lat - 1) // 2
    jl = int(round(0.25 * (n_lon - 1)))
    jr = (n_lon - 1) - jl
    return HeadProxy(base, triangles, uv, basis, landmark_left=eq * n_lon + jl,
                     landmark_right=eq * n_lon + jr, radius=float(axes.max()))


def rotation_matrix(axis_angle) -> np.ndarray:
    """Rodrigues' formula for an axis-angle 3-vector."""
    r = np.asarray(axis_angle, dtype=np.float64)
    angle = np.linalg.norm(r)
    if angle < 1e-12:
        return np.eye(3)
    k = r / angle
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * kx @ kx


def deform(proxy: HeadProxy, expr) -> np.ndarray:
    """Blendshape combination in the canonical frame (before posing)."""
    e = np.clip(np.asarray(expr, dtype=np.float64), -EXPR_CLAMP, EXPR_CLAMP)
    return proxy.base_vertices + np.tensordot(e, proxy.blendshape_basis, axes=1)


def deform_and_pose(proxy: HeadProxy, theta, expr) -> np.ndarray:
    """``Rot(theta[:3]) (base + sum_j expr_j basis_j) + theta[3:]``, K x 3."""
    theta = np.asarray(theta, dtype=np.float64)
    return deform(proxy, expr) @ rotation_matrix(theta[:3]).T + theta[3:6]


def vertex_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    tri = vertices[triangles]
    fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    vn = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(vn, triangles[:, k], fn)
    n = np.linalg.norm(vn, axis=1, keepdims=True)
    return vn / np.maximum(n, 1e-12)


FORWARD_AXIS = np.array([0.0, 0.0, 1.0])


def head_forward(theta) -> np.ndarray:
    return rotation_matrix(np.asarray(theta)[:3]) @ FORWARD_AXIS
