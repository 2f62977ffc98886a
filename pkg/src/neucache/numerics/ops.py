"""Differentiable operations on :class:`Tensor`.

Image tensors are channel-major, ``C x H x W``; conv-style ops also accept a
leading batch extent ``N x C x H x W``.  Border policy for every resampling
op is clamp-to-edge, bilinear resampling uses the align-corners-false
convention.
"""
from __future__ import annotations

import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ConfigError, Tensor, UsageError, as_tensor, make_result

# ---------------------------------------------------------------------------
# MAC instrumentation (cross-checks the analytic FLOP counter)
# ---------------------------------------------------------------------------

_mac_counters: list[list[int]] = []


@contextlib.contextmanager
def count_macs():
    """Count multiply-accumulates executed by conv and affine ops.

    >>> with count_macs() as c:
    ...     ...
    >>> c[0]
    """
    counter = [0]
    _mac_counters.append(counter)
    try:
        yield counter
    finally:
        _mac_counters.remove(counter)


def _tally(n: int) -> None:
    for c in _mac_counters:
        c[0] += int(n)


# ---------------------------------------------------------------------------
# elementwise & reductions
# ---------------------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return as_tensor(np.asarray(x, dtype=dtype or np.float32))


def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data + b.data
    return make_result(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data - b.data
    return make_result(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data * b.data
    return make_result(
        out, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def square(x: Tensor) -> Tensor:
    return make_result(x.data * x.data, (x,), lambda g: (2.0 * x.data * g,))


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return make_result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def sum(x: Tensor) -> Tensor:  # noqa: A001
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return make_result(out, (x,), lambda g: (np.broadcast_to(g, x.shape).astype(x.dtype),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.asarray(x.data.mean(), dtype=x.dtype)
    return make_result(out, (x,), lambda g: (np.full(x.shape, g / n, dtype=x.dtype),))


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    return make_result(out, (x,), lambda g: (g.reshape(x.shape),))


def index(x: Tensor, idx) -> Tensor:
    out = x.data[idx]

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return make_result(np.ascontiguousarray(out), (x,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return make_result(out, tensors, bw)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, x.data * slope).astype(x.dtype)
    return make_result(out, (x,), lambda g: (np.where(pos, g, g * slope).astype(x.dtype),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_result(y, (x,), lambda g: (g * (1.0 - y * y),))


def squash01(x: Tensor) -> Tensor:
    """(tanh(x) + 1) / 2, mapping the real line into (0, 1)."""
    y = np.tanh(x.data)
    return make_result(0.5 * (y + 1.0), (x,), lambda g: (0.5 * g * (1.0 - y * y),))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``weight @ x + bias`` for a vector ``x`` (or ``N x in`` rows)."""
    xd = x.data
    if xd.shape[-1] != weight.shape[1]:
        raise ConfigError(f"linear: input has {xd.shape[-1]} features, weight expects {weight.shape[1]}")
    out = xd @ weight.data.T
    if bias is not None:
        out = out + bias.data
    _tally(weight.shape[0] * weight.shape[1] * (xd.size // xd.shape[-1]))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gx = g @ weight.data
        g2 = g.reshape(-1, g.shape[-1])
        gw = g2.T @ xd.reshape(-1, xd.shape[-1])
        grads = [gx, gw.astype(weight.dtype)]
        if bias is not None:
            grads.append(g2.sum(axis=0).astype(bias.dtype))
        return tuple(grads)

    return make_result(out.astype(xd.dtype, copy=False), parents, bw)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _as_batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim == 4:
        return x, False
    raise ConfigError(f"expected C x H x W or N x C x H x W, got shape {x.shape}")


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    # xp: N x C x Hp x Wp  ->  N x (C*kh*kw) x (ho*wo)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :ho, :wo]  # N C ho wo kh kw
    n, c = xp.shape[:2]
    return win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, ho * wo)


def _col2im(cols: np.ndarray, shape, kh, kw, stride, ho, wo) -> np.ndarray:
    n, c, hp, wp = shape
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    out = np.zeros(shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
    return out


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation with zero padding."""
    xb, squeezed = _as_batched(x)
    n, cin, h, w = xb.shape
    if weight.ndim != 4:
        raise ConfigError(f"conv2d kernel must be C_out x C_in x kH x kW, got {weight.shape}")
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ConfigError(f"conv2d: input channels {cin} != kernel C_in {wcin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if bias is not None and bias.shape != (cout,):
        raise ConfigError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ConfigError(f"conv2d: input {h}x{w} too small for kernel {kh}x{kw}")

    xd = xb.data
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    wmat = weight.data.reshape(cout, -1)
    cols = None
    if stride == 1 and cout < cin and kh * kw > 1:
        # narrow outputs: project every tap first, then sum shifted planes
        hp, wp = xp.shape[2:]
        wt = weight.data.transpose(2, 3, 0, 1).reshape(kh * kw * cout, cin)
        y = np.matmul(wt, xp.reshape(n, cin, hp * wp)).reshape(n, kh, kw, cout, hp, wp)
        out = np.zeros((n, cout, ho, wo), dtype=y.dtype)
        for i in range(kh):
            for j in range(kw):
                out += y[:, i, j, :, i:i + ho, j:j + wo]
        if bias is not None:
            out += bias.data[None, :, None, None]
    else:
        cols = _im2col(xp, kh, kw, stride, ho, wo)
        out = np.matmul(wmat, cols)  # N x cout x (ho*wo)
        if bias is not None:
            out += bias.data[None, :, None]
        out = out.reshape(n, cout, ho, wo)
    out = out.astype(xd.dtype, copy=False)
    _tally(cout * cin * kh * kw * ho * wo * n)

    def bw(g):
        nonlocal cols
        if cols is None:
            cols = _im2col(xp, kh, kw, stride, ho, wo)
        g2 = g.reshape(n, cout, ho * wo)
        gw = np.einsum("nop,nkp->ok", g2, cols, optimize=True).reshape(weight.shape)
        gcols = np.matmul(wmat.T, g2)
        gxp = _col2im(gcols, xp.shape, kh, kw, stride, ho, wo)
        gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        grads = [np.ascontiguousarray(gx), gw.astype(weight.dtype)]
        if bias is not None:
            grads.append(g2.sum(axis=(0, 2)).astype(bias.dtype))
        return tuple(grads)

    parents = (xb, weight) if bias is None else (xb, weight, bias)
    res = make_result(out, parents, bw)
    return reshape(res, res.shape[1:]) if squeezed else res


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-2 transposed convolution (kernel 3, padding 1, output padding 1),
    doubling the spatial size; ``weight`` is ``C_in x C_out x 3 x 3``."""
    xb, squeezed = _as_batched(x)
    n, cin, h, w = xb.shape
    wcin, cout, kh, kw = weight.shape
    if wcin != cin or (kh, kw) != (3, 3):
        raise ConfigError(f"conv_transpose2d: weight {weight.shape} incompatible with {cin} input channels")
    ho, wo = 2 * h, 2 * w
    wmat = weight.data.reshape(cin, cout * kh * kw)
    xd = xb.data.reshape(n, cin, h * w)
    cols = np.matmul(wmat.T, xd)  # N x (cout*9) x (h*w)
    # scatter into a padded canvas: full = (h-1)*2 + 3 = 2h+1, crop [1, 2h+1)
    canvas = _col2im(cols, (n, cout, 2 * h + 2, 2 * w + 2), kh, kw, 2, h, w)
    out = canvas[:, :, 1:1 + ho, 1:1 + wo]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out).astype(xb.dtype, copy=False)
    _tally(cin * cout * kh * kw * h * w * n)

    def bw(g):
        gcanvas = np.zeros((n, cout, 2 * h + 2, 2 * w + 2), dtype=g.dtype)
        gcanvas[:, :, 1:1 + ho, 1:1 + wo] = g
        gcols = _im2col(gcanvas, kh, kw, 2, h, w)  # N x (cout*9) x (h*w)
        gx = np.matmul(wmat, gcols).reshape(n, cin, h, w)
        gw = np.einsum("nip,nkp->ik", xd, gcols, optimize=True).reshape(weight.shape)
        grads = [gx, gw.astype(weight.dtype)]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)).astype(bias.dtype))
        return tuple(grads)

    parents = (xb, weight) if bias is None else (xb, weight, bias)
    res = make_result(out, parents, bw)
    return reshape(res, res.shape[1:]) if squeezed else res


# ---------------------------------------------------------------------------
# separable linear resampling (upsample, Gaussian blur, area resize)
# ---------------------------------------------------------------------------

def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Row i holds the align-corners-false bilinear weights of output i."""
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    f = src - i0
    m = np.zeros((n_out, n_in), dtype=dtype)
    m[np.arange(n_out), i0] += 1.0 - f
    m[np.arange(n_out), i1] += f
    return m


def gaussian_kernel1d(size: int, sigma: float) -> np.ndarray:
    if size % 2 == 0 or size < 1:
        raise ConfigError(f"Gaussian kernel size must be odd and positive, got {size}")
    if sigma <= 0:
        raise ConfigError(f"Gaussian sigma must be positive, got {sigma}")
    d = np.arange(size) - size // 2
    w = np.exp(-(d ** 2) / (2.0 * sigma ** 2))
    return w / w.sum()


def clamped_filter_matrix(n: int, kernel: np.ndarray) -> np.ndarray:
    """Matrix form of 1D correlation with ``kernel`` under clamp-to-edge."""
    r = len(kernel) // 2
    m = np.zeros((n, n))
    for i in range(n):
        for k, wk in enumerate(kernel):
            m[i, min(max(i + k - r, 0), n - 1)] += wk
    return m


def separable(x: Tensor, my: np.ndarray, mx: np.ndarray) -> Tensor:
    """Apply ``out = My @ X @ Mx^T`` over the two trailing axes."""
    my = my.astype(x.dtype)
    mx = mx.astype(x.dtype)
    out = np.matmul(np.matmul(my, x.data), mx.T)
    return make_result(out, (x,), lambda g: (np.matmul(np.matmul(my.T, g), mx),))


def upsample2x(x: Tensor) -> Tensor:
    h, w = x.shape[-2:]
    if h < 1 or w < 1:
        raise ConfigError(f"upsample2x needs non-empty input, got {h}x{w}")
    return separable(x, bilinear_matrix(h, 2 * h), bilinear_matrix(w, 2 * w))


def upconv2x(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Bilinear 2x upsample followed by a size-preserving convolution."""
    k = weight.shape[-1]
    return conv2d(upsample2x(x), weight, bias, stride=1, padding=k // 2)


def gaussian_lpf(x: Tensor, size: int = 5, sigma: float = 1.0) -> Tensor:
    k = gaussian_kernel1d(size, sigma)
    h, w = x.shape[-2:]
    return separable(x, clamped_filter_matrix(h, k), clamped_filter_matrix(w, k))


def area_downsample(x: np.ndarray, factor: int) -> np.ndarray:
    """Box-average an array over ``factor x factor`` cells (no gradient)."""
    *lead, h, w = x.shape
    if h % factor or w % factor:
        raise ConfigError(f"area_downsample: {h}x{w} not divisible by {factor}")
    return x.reshape(*lead, h // factor, factor, w // factor, factor).mean(axis=(-3, -1))


# ---------------------------------------------------------------------------
# texture sampling
# ---------------------------------------------------------------------------

def grid_sample_bilinear(texture: Tensor, coords) -> Tensor:
    """Sample ``texture`` (C x Ht x Wt) at normalized ``coords`` (2 x H x W,
    u horizontal then v vertical, texel centers at (i + 0.5) / extent).

    Differentiable w.r.t. the texture only."""
    coords = coords.data if isinstance(coords, Tensor) else np.asarray(coords)
    if texture.ndim != 3 or coords.ndim != 3 or coords.shape[0] != 2:
        raise ConfigError(f"grid_sample_bilinear: texture {texture.shape}, coords {coords.shape}")
    c, ht, wt = texture.shape
    _, h, w = coords.shape
    x = np.clip(coords[0].astype(np.float64) * wt - 0.5, 0.0, wt - 1)
    y = np.clip(coords[1].astype(np.float64) * ht - 0.5, 0.0, ht - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, wt - 1)
    y1 = np.minimum(y0 + 1, ht - 1)
    fx = (x - x0).astype(texture.dtype)
    fy = (y - y0).astype(texture.dtype)
    idx = np.stack([y0 * wt + x0, y0 * wt + x1, y1 * wt + x0, y1 * wt + x1]).reshape(4, -1)
    wts = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy]).reshape(4, -1)
    flat = texture.data.reshape(c, -1)
    out = np.zeros((c, h * w), dtype=texture.dtype)
    for k in range(4):
        out += flat[:, idx[k]] * wts[k]
    out = out.reshape(c, h, w)

    def bw(g):
        g2 = g.reshape(c, -1)
        n = ht * wt
        offsets = (np.arange(c) * n)[:, None]
        flat_idx = (offsets[:, :, None] + idx[None]).ravel()   # C x 4 corners x HW
        vals = (g2[:, None, :] * wts[None]).ravel()
        gt = np.bincount(flat_idx, weights=vals, minlength=c * n)
        return (gt.reshape(texture.shape).astype(texture.dtype),)

    return make_result(out, (texture,), bw)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def l1(a: Tensor, b) -> Tensor:
    b = _lift(b, a)
    if a.shape != b.shape:
        raise UsageError(f"l1: shape mismatch {a.shape} vs {b.shape}")
    return mean(abs(sub(a, b)))


def masked_l1(a: Tensor, b, mask: np.ndarray) -> Tensor:
    """Mean absolute error over pixels where ``mask`` (H x W) is set."""
    b = _lift(b, a)
    if a.shape != b.shape:
        raise UsageError(f"masked_l1: shape mismatch {a.shape} vs {b.shape}")
    m = np.broadcast_to(np.asarray(mask, dtype=a.dtype), a.shape)
    denom = float(m.sum())
    if denom == 0:
        return mul(sum(abs(sub(a, b))), 0.0)
    return mul(sum(mul(abs(sub(a, b)), Tensor(m, dtype=a.dtype))), 1.0 / denom)


def isfinite(t: Tensor) -> bool:
    return bool(np.all(np.isfinite(t.data)))
