"""Deferred neural renderer: multi-scale neural texture, SH view modulation and
the U-Net generator whose last three decoder outputs form the neural cache."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import ops
from .numerics.nn import Conv, ConvTranspose, Module, _param
from .numerics.sh import sh_basis9
from .numerics.tensor import ConfigError, Tensor
from .scene.trajectory import FrameParams

N_LEVELS = 4
SH_CHANNELS = slice(3, 12)   # zero-based channels modulated by the 9 SH values
SH_COUNT = 9


class NeuralTexture(Module):
    """Four learnable texture levels; level l is D x S/2^l x S/2^l."""

    def __init__(self, channels: int = 16, size: int = 256, seed: int = 0, init_std: float = 0.01):
        if channels < 12:
            raise ConfigError(f"neural texture needs at least 12 channels, got {channels}")
        if size % 2 ** (N_LEVELS - 1):
            raise ConfigError(f"texture size {size} not divisible by {2 ** (N_LEVELS - 1)}")
        rng = np.random.default_rng(seed)
        self.channels, self.size = channels, size
        self.levels = [_param(rng.normal(0.0, init_std, (channels, size >> l, size >> l)), f"level{l}")
                       for l in range(N_LEVELS)]


def sample_multiscale_texture(tex: NeuralTexture, uv) -> Tensor:
    """Sum of the bilinear samples of every level at ``uv`` (2 x H x W)."""
    out = ops.grid_sample_bilinear(tex.levels[0], uv)
    for level in tex.levels[1:]:
        out = ops.add(out, ops.grid_sample_bilinear(level, uv))
    return out


def sh_scale(coeffs: np.ndarray, channels: int, dtype=np.float32) -> np.ndarray:
    """Per-channel multiplier: ones except ``coeffs`` on channels 3..11.

    ``coeffs`` may be (9,) or (N, 9); the result is (C, 1, 1) or (N, C, 1, 1)."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if channels < SH_CHANNELS.stop:
        raise ConfigError(f"SH modulation needs >= {SH_CHANNELS.stop} channels, got {channels}")
    if coeffs.shape[-1] != SH_COUNT:
        raise ConfigError(f"expected {SH_COUNT} SH coefficients, got {coeffs.shape[-1]}")
    lead = coeffs.shape[:-1]
    s = np.ones(lead + (channels,))
    s[..., SH_CHANNELS] = coeffs
    return s.reshape(lead + (channels, 1, 1)).astype(dtype)


def sh_modulate(x: Tensor, coeffs) -> Tensor:
    """Multiply channels 3..11 of ``x`` (C x H x W or N x C x H x W) by ``coeffs``."""
    return ops.mul(x, Tensor(sh_scale(coeffs, x.shape[-3], x.dtype), dtype=x.dtype))


def sh_view_modulate(features: Tensor, view_dir) -> Tensor:
    return sh_modulate(features, sh_basis9(view_dir))


@dataclass(frozen=True)
class GeneratorConfig:
    depth: int = 10
    base: int = 32
    tex_channels: int = 16
    use_upconv: bool = True
    use_lpf: bool = True
    two_frame_input: bool = False
    lpf_size: int = 5
    lpf_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.depth % 2 or self.depth < 6:
            raise ConfigError(f"generator depth must be even and >= 6, got {self.depth}")
        if self.tex_channels < 12:
            raise ConfigError("tex_channels must be >= 12")

    @property
    def levels(self) -> int:
        return self.depth // 2

    def enc_channels(self) -> list[int]:
        return [min(self.base * 2 ** i, 8 * self.base) for i in range(self.levels)]

    def dec_channels(self) -> list[int]:
        """Output channels of decoder layers 1..L (last three are C3, C4, C5)."""
        n = self.levels
        return [min(self.base * 2 ** (n - j), 8 * self.base) for j in range(1, n + 1)]

    def check_size(self, h: int, w: int) -> None:
        m = 2 ** self.levels
        if h % m or w % m:
            raise ConfigError(f"spatial size {h}x{w} not divisible by {m}")


@dataclass
class Cache:
    """Decoder features of one generator pass plus the parameters of its frame.

    Tensors are C x H x W for a single frame or N x C x H x W for a batch;
    parameter arrays gain a matching leading axis."""
    c3: Tensor
    c4: Tensor
    c5: Tensor
    theta: np.ndarray
    cam: np.ndarray
    expr: np.ndarray
    h_obj: np.ndarray
    uv_map: np.ndarray
    t: int | np.ndarray = 0
    mask: np.ndarray | None = field(default=None, repr=False)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.c5.shape[-2:]

    def detach(self) -> "Cache":
        d = lambda x: Tensor(x.data, dtype=x.dtype)  # noqa: E731
        return Cache(d(self.c3), d(self.c4), d(self.c5), self.theta, self.cam, self.expr, self.h_obj,
                     self.uv_map, self.t, self.mask)


class Generator(Module):
    def __init__(self, config: GeneratorConfig = GeneratorConfig()):
        self.config = config
        rng = np.random.default_rng(config.seed)
        cin = config.tex_channels * (2 if config.two_frame_input else 1)
        enc = config.enc_channels()
        dec = config.dec_channels()
        self.enc = []
        prev = cin
        for c in enc:
            self.enc.append(Conv(prev, c, 3, stride=2, rng=rng))
            prev = c
        # skip at the resolution each decoder layer produces: encoder outputs, then the input
        skips = enc[:-1][::-1] + [cin]
        self.dec = []
        for j, (c, s) in enumerate(zip(dec, skips)):
            if config.use_upconv:
                # bilinear 2x, concat the skip, then a size-preserving 3x3 conv
                self.dec.append(Conv(prev + s, c, 3, rng=rng))
            else:
                # transposed conv doubles resolution on (prev ++ skip at prev resolution)
                s_prev = 0 if j == 0 else skips[j - 1]
                self.dec.append(ConvTranspose(prev + s_prev, c, rng=rng))
            prev = c
        self.out = Conv(prev, 3, 3, rng=rng)

    def layer_macs(self, h: int, w: int) -> list[tuple[str, int]]:
        """Analytic multiply-accumulates per layer for an h x w input."""
        cfg = self.config
        out = []
        hh, ww = h, w
        for i, conv in enumerate(self.enc):
            out.append((f"enc{i}", conv.macs(hh, ww)))
            hh, ww = conv.out_size(hh, ww)
        for j, layer in enumerate(self.dec):
            hh, ww = 2 * hh, 2 * ww
            out.append((f"dec{j}", layer.macs(hh, ww) if cfg.use_upconv else layer.macs(hh // 2, ww // 2)))
        out.append(("out", self.out.macs(hh, ww)))
        if cfg.use_lpf:
            out.append(("lpf", 0))
        return out

    def macs(self, h: int, w: int) -> int:
        return int(sum(m for _, m in self.layer_macs(h, w)))

    def __call__(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        """U-Net over input features (N x C x H x W) -> (image, decoder outputs)."""
        cfg = self.config
        cfg.check_size(*x.shape[-2:])
        act = ops.leaky_relu
        feats = [x]
        h = x
        for conv in self.enc:
            h = act(conv(h))
            feats.append(h)
        if cfg.use_lpf:
            h = ops.gaussian_lpf(h, cfg.lpf_size, cfg.lpf_sigma)
        n = cfg.levels
        decoded = []
        for j, layer in enumerate(self.dec):
            if cfg.use_upconv:
                skip = feats[n - 1 - j]   # encoder output at the target resolution (input for the last)
                h = act(layer(ops.concat([ops.upsample2x(h), skip], axis=1)))
            else:
                src = h if j == 0 else ops.concat([h, feats[n - j]], axis=1)
                h = act(layer(src))
            decoded.append(h)
        return ops.squash01(self.out(h)), decoded


def _stack(tensors: list[Tensor]) -> Tensor:
    return ops.concat([ops.reshape(t, (1,) + t.shape) for t in tensors], axis=0)


def _unbatch(x: Tensor) -> Tensor:
    return ops.reshape(x, x.shape[1:])


def frame_features(tex: NeuralTexture, frame: FrameParams, uv=None) -> Tensor:
    """View-modulated texture features for one frame (D x H x W)."""
    uv = frame.uv_map if uv is None else uv
    if uv is None:
        raise ConfigError("frame carries no rasterized uv_map")
    return sh_view_modulate(sample_multiscale_texture(tex, uv), frame.view_dir)


def generator_forward_batch(tex: NeuralTexture, frames: list[FrameParams], net: Generator,
                            prev_frames: list[FrameParams] | None = None,
                            uvs: list[np.ndarray] | None = None,
                            features: list[Tensor] | None = None) -> tuple[Tensor, Cache, list[Tensor]]:
    """Batched pass; returns (images N x 3 x H x W, batched cache, per-frame raw samples)."""
    uvs = uvs if uvs is not None else [f.uv_map for f in frames]
    raw = features if features is not None else [sample_multiscale_texture(tex, uv) for uv in uvs]
    inputs = [sh_view_modulate(r, f.view_dir) for r, f in zip(raw, frames)]
    if net.config.two_frame_input:
        prev = prev_frames or frames
        prev_uv = [p.uv_map for p in prev] if prev_frames else uvs
        inputs = [ops.concat([x, frame_features(tex, p, u)], axis=0) for x, p, u in zip(inputs, prev, prev_uv)]
    image, decoded = net(_stack(inputs))
    c3, c4, c5 = decoded[-3:]
    cache = Cache(
        c3, c4, c5,
        theta=np.stack([f.theta for f in frames]), cam=np.stack([f.cam for f in frames]),
        expr=np.stack([f.expr for f in frames]), h_obj=np.stack([f.h_obj for f in frames]),
        uv_map=np.stack([np.asarray(u, dtype=np.float32) for u in uvs]),
        t=np.array([f.t for f in frames]),
    )
    return image, cache, raw


def generator_forward(tex: NeuralTexture, frame: FrameParams, net: Generator,
                      prev_frame: FrameParams | None = None) -> tuple[Tensor, Cache]:
    """Render one frame: image (3 x H x W in (0, 1)) and its neural cache."""
    image, cache, _ = generator_forward_batch(tex, [frame], net, [prev_frame] if prev_frame else None)
    return _unbatch(image), unbatch_cache(cache, 0)


def unbatch_cache(cache: Cache, i: int) -> Cache:
    def pick(x: Tensor) -> Tensor:
        return ops.reshape(ops.index(x, slice(i, i + 1)), x.shape[1:])
    return Cache(pick(cache.c3), pick(cache.c4), pick(cache.c5), cache.theta[i], cache.cam[i], cache.expr[i],
                 cache.h_obj[i], cache.uv_map[i], int(np.asarray(cache.t)[i]))
