"""Real spherical harmonics up to band 2.

Ordering: Y00, Y1-1, Y10, Y11, Y2-2, Y2-1, Y20, Y21, Y22.  Real basis with
the usual orthonormal constants and no Condon-Shortley phase.
"""
import numpy as np

from .tensor import ConfigError

SH_C0 = 0.28209479177387814          # 1 / (2 sqrt(pi))
SH_C1 = 0.48860251190291992          # sqrt(3 / (4 pi))
SH_C2 = 1.0925484305920792           # sqrt(15 / (4 pi))
SH_C3 = 0.31539156525252005          # sqrt(5 / (16 pi))
SH_C4 = 0.54627421529603959          # sqrt(15 / (16 pi))


class DomainError(ConfigError):
    pass


def sh_basis9(direction) -> np.ndarray:
    """Evaluate the 9 real SH basis functions at ``direction`` (normalized here)."""
    d = np.asarray(direction, dtype=np.float64).reshape(3)
    n = np.linalg.norm(d)
    if not np.isfinite(n) or n == 0.0:
        raise DomainError("sh_basis9: direction has zero length")
    x, y, z = d / n
    return np.array([
        SH_C0,
        SH_C1 * y,
        SH_C1 * z,
        SH_C1 * x,
        SH_C2 * x * y,
        SH_C2 * y * z,
        SH_C3 * (3.0 * z * z - 1.0),
        SH_C2 * x * z,
        SH_C4 * (x * x - y * y),
    ])
