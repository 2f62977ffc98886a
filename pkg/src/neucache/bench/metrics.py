"""Image quality metrics on [0, 1] images (C x H x W or N x C x H x W)."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..numerics.tensor import UsageError

PSNR_CAP = 99.0
SSIM_SIGMA = 1.5
SSIM_WIN = 11
K1, K2 = 0.01, 0.03


@dataclass(frozen=True)
class MetricsResult:
    l1: float
    psnr: float
    ssim: float

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def mean(cls, results: list["MetricsResult"]) -> "MetricsResult":
        if not results:
            return cls(float("nan"), float("nan"), float("nan"))
        return cls(*(float(np.mean([getattr(r, k) for r in results])) for k in ("l1", "psnr", "ssim")))


def _check(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(gt, dtype=np.float64)
    if a.shape != b.shape:
        raise UsageError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise UsageError(f"expected an H x W or C x H x W image, got shape {a.shape}")
    return a, b


def l1_error(pred, gt) -> float:
    a, b = _check(pred, gt)
    return float(np.mean(np.abs(a - b)))


def psnr(pred, gt) -> float:
    a, b = _check(pred, gt)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable correlation over the last two axes, valid region only
    k = len(g)
    h, w = x.shape[-2:]
    rows = sum(g[i] * x[..., i:h - k + 1 + i, :] for i in range(k))
    return sum(g[j] * rows[..., :, j:w - k + 1 + j] for j in range(k))


def ssim(pred, gt) -> float:
    """Mean SSIM with 11-tap Gaussian weights (sigma 1.5), averaged over
    channels; windows that would cross the image border are skipped."""
    a, b = _check(pred, gt)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[-2:]) < SSIM_WIN:
        raise UsageError(f"SSIM needs images of at least {SSIM_WIN}x{SSIM_WIN}")
    g = gaussian_window()
    c1, c2 = K1 ** 2, K2 ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    # population (biased) local moments
    va = _filter_valid(a * a, g) - mu_a ** 2
    vb = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2))
    return float(s.mean())


def compute_metrics(pred, gt) -> MetricsResult:
    """L1, PSNR and SSIM of one image pair, or the mean over a leading batch axis."""
    a = np.asarray(pred)
    b = np.asarray(gt)
    if a.shape != b.shape:
        raise UsageError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    if a.ndim == 4:
        return MetricsResult.mean([compute_metrics(x, y) for x, y in zip(a, b)])
    return MetricsResult(l1_error(a, b), psnr(a, b), ssim(a, b))
