"""Implicit warp head: turns a neural cache plus the parameters of a later frame
into that frame's image with two up-convolution stages."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .numerics import ops
from .numerics.nn import Conv, Linear, Module
from .numerics.tensor import ConfigError, Tensor
from .renderer import Cache, GeneratorConfig, NeuralTexture, sample_multiscale_texture, sh_modulate
from .scene.trajectory import FrameParams

# Frame-to-frame changes are a few hundredths in every unit used here; this
# fixed gain brings them to the same order as the absolute quantities.
DELTA_GAIN = 10.0
POSE_GROUPS = ("p", "dp", "theta", "dtheta", "e", "de", "h")


@dataclass(frozen=True)
class WarpConfig:
    embed_dim: int = 32
    w1: int = 32
    w2: int = 16
    out_kernel: int = 1
    c3_channels: int = 128
    c4_channels: int = 64
    c5_channels: int = 32
    expr_dims: int = 4
    tex_channels: int = 16
    # component switches (all on except exwarp is the full implicit model)
    concat_uv: bool = True
    use_theta: bool = True
    use_mlp: bool = True
    sh_pose: bool = True
    sh_skips: bool = True
    exwarp: bool = False
    exp: bool = True
    use_c4: bool = True
    use_c5: bool = True
    seed: int = 1

    def __post_init__(self):
        if self.out_kernel % 2 == 0:
            raise ConfigError(f"out_kernel must be odd, got {self.out_kernel}")
        if self.use_mlp and not self.use_theta:
            raise ConfigError("use_mlp requires use_theta")

    @classmethod
    def for_generator(cls, gen: GeneratorConfig, expr_dims: int = 4, **kw) -> "WarpConfig":
        c3, c4, c5 = gen.dec_channels()[-3:]
        return cls(c3_channels=c3, c4_channels=c4, c5_channels=c5, expr_dims=expr_dims,
                   tex_channels=gen.tex_channels, **kw)

    def flags(self) -> dict[str, bool]:
        return {f.name: getattr(self, f.name) for f in fields(self) if isinstance(getattr(self, f.name), bool)}

    def pose_groups(self) -> tuple[str, ...]:
        if not self.use_theta:
            return ()
        groups = ["p", "dp", "theta", "dtheta"]
        if self.exp:
            groups += ["e", "de"]
        if self.sh_pose:
            groups.append("h")
        return tuple(groups)

    def pose_dims(self) -> int:
        size = {"p": 3, "dp": 3, "theta": 6, "dtheta": 6, "e": self.expr_dims, "de": self.expr_dims, "h": 9}
        return sum(size[g] for g in self.pose_groups())

    def w1_in(self) -> int:
        n = self.c3_channels
        n += 2 if self.concat_uv else 0
        if self.use_theta:
            n += self.embed_dim if self.use_mlp else self.pose_dims()
        n += self.tex_channels if self.exwarp else 0
        return n


@dataclass
class WarpInput:
    """A cache (batched, N x ...) and the parameters of the frames to synthesize."""
    cache: Cache
    theta: np.ndarray      # N x 6, target frames
    cam: np.ndarray        # N x 3
    expr: np.ndarray       # N x k
    h_obj: np.ndarray      # N x 9
    uv_map: np.ndarray     # N x 2 x H x W
    d_theta: np.ndarray
    d_cam: np.ndarray
    d_expr: np.ndarray
    d_uv: np.ndarray
    d_h: np.ndarray
    distance: np.ndarray   # N
    single: bool = False   # built from one unbatched cache and one frame

    @property
    def batch(self) -> int:
        return len(self.theta)


def _batched_cache(cache: Cache) -> Cache:
    if cache.c3.ndim == 4:
        return cache
    lift = lambda x: ops.reshape(x, (1,) + x.shape)  # noqa: E731
    return Cache(lift(cache.c3), lift(cache.c4), lift(cache.c5), cache.theta[None], cache.cam[None],
                 cache.expr[None], cache.h_obj[None], np.asarray(cache.uv_map)[None], np.atleast_1d(cache.t))


def make_warp_input(cache: Cache, frames: FrameParams | list[FrameParams], uvs=None) -> WarpInput:
    """Deltas of ``frames`` against exactly the cached frame's values."""
    single = cache.c3.ndim == 3 and isinstance(frames, FrameParams)
    cache = _batched_cache(cache)
    frames = [frames] if isinstance(frames, FrameParams) else list(frames)
    if len(frames) != cache.theta.shape[0]:
        raise ConfigError(f"{len(frames)} target frames for a cache batch of {cache.theta.shape[0]}")
    uv = np.stack([np.asarray(f.uv_map if uvs is None else u, dtype=np.float32)
                   for f, u in zip(frames, uvs if uvs is not None else frames)])
    if uv.shape != cache.uv_map.shape:
        raise ConfigError(f"uv map {uv.shape[1:]} does not match cached {cache.uv_map.shape[1:]}")
    theta = np.stack([f.theta for f in frames])
    cam = np.stack([f.cam for f in frames])
    expr = np.stack([f.expr for f in frames])
    h = np.stack([f.h_obj for f in frames])
    t = np.array([f.t for f in frames])
    return WarpInput(cache, theta, cam, expr, h, uv,
                     d_theta=theta - cache.theta, d_cam=cam - cache.cam, d_expr=expr - cache.expr,
                     d_uv=uv - cache.uv_map, d_h=h - cache.h_obj, distance=t - np.asarray(cache.t), single=single)


def pose_vector(inp: WarpInput, cfg: WarpConfig) -> np.ndarray:
    """N x pose_dims network input in the fixed order (p, dp, theta, dtheta, e, de, h)."""
    parts = {"p": inp.cam, "dp": DELTA_GAIN * inp.d_cam, "theta": inp.theta,
             "dtheta": DELTA_GAIN * inp.d_theta, "e": inp.expr, "de": DELTA_GAIN * inp.d_expr, "h": inp.h_obj}
    groups = cfg.pose_groups()
    if not groups:
        return np.zeros((inp.batch, 0), dtype=np.float32)
    return np.concatenate([parts[g] for g in groups], axis=1).astype(np.float32)


def area_pool(x: Tensor, factor: int) -> Tensor:
    """Differentiable box average over ``factor x factor`` cells."""
    h, w = x.shape[-2:]
    if h % factor or w % factor:
        raise ConfigError(f"area_pool: {h}x{w} not divisible by {factor}")
    my = np.kron(np.eye(h // factor), np.full((1, factor), 1.0 / factor))
    mx = np.kron(np.eye(w // factor), np.full((1, factor), 1.0 / factor))
    return ops.separable(x, my, mx)


def _tile(vec: Tensor, h: int, w: int) -> Tensor:
    """N x m -> N x m x h x w by broadcasting."""
    n, m = vec.shape
    ones = Tensor(np.ones((1, 1, h, w), dtype=vec.dtype), dtype=vec.dtype)
    return ops.mul(ops.reshape(vec, (n, m, 1, 1)), ones)


class WarpNet(Module):
    def __init__(self, config: WarpConfig = WarpConfig()):
        self.config = config
        rng = np.random.default_rng(config.seed)
        if config.use_mlp:
            self.mlp = Linear(config.pose_dims(), config.embed_dim, rng=rng)
        self.w1 = Conv(config.w1_in(), config.w1, 3, rng=rng)
        c4 = config.c4_channels if config.use_c4 else 0
        self.w2 = Conv(config.w1 + c4, config.w2, 3, rng=rng)
        c5 = config.c5_channels if config.use_c5 else 0
        self.out = Conv(config.w2 + c5, 3, config.out_kernel, rng=rng)

    def embed(self, pose: np.ndarray | Tensor) -> Tensor:
        x = pose if isinstance(pose, Tensor) else Tensor(np.atleast_2d(pose), dtype=self.mlp.weight.dtype)
        if x.shape[-1] != self.config.pose_dims():
            raise ConfigError(f"pose vector has {x.shape[-1]} entries, expected {self.config.pose_dims()}")
        return ops.leaky_relu(self.mlp(x))

    def layer_macs(self, h: int, w: int) -> list[tuple[str, int]]:
        cfg = self.config
        out = []
        if cfg.use_mlp:
            out.append(("mlp", self.mlp.macs()))
        out.append(("w1", self.w1.macs(h // 2, w // 2)))
        out.append(("w2", self.w2.macs(h, w)))
        out.append(("out", self.out.macs(h, w)))
        return out

    def macs(self, h: int, w: int) -> int:
        return int(sum(m for _, m in self.layer_macs(h, w)))


def pose_embed(net: WarpNet, p, dp, theta, dtheta, e, de, h_obj) -> Tensor:
    """Embedding of the concatenated pose inputs (one affine layer + leaky ReLU)."""
    vec = np.concatenate([np.atleast_1d(np.asarray(a, dtype=np.float64)) for a in (p, dp, theta, dtheta, e, de, h_obj)])
    return ops.reshape(net.embed(vec[None]), (net.config.embed_dim,))


def _check(inp: WarpInput, net: WarpNet) -> tuple[int, int]:
    cfg = net.config
    c = inp.cache
    n, _, h, w = inp.uv_map.shape
    expect = {"c3": (cfg.c3_channels, h // 4, w // 4), "c4": (cfg.c4_channels, h // 2, w // 2),
              "c5": (cfg.c5_channels, h, w)}
    for name, shape in expect.items():
        got = getattr(c, name).shape[1:]
        if tuple(got) != shape:
            raise ConfigError(f"cache {name} has shape {tuple(got)}, warp net expects {shape}")
    return h, w


def _forward(inp: WarpInput, net: WarpNet, tex_sample: Tensor | None) -> Tensor:
    cfg = net.config
    h, w = _check(inp, net)
    c = inp.cache
    n = inp.batch
    parts = [c.c3]
    if cfg.concat_uv:
        du = ops.area_downsample(DELTA_GAIN * inp.d_uv, 4).astype(np.float32)
        parts.append(Tensor(du))
    if cfg.use_theta:
        pose = pose_vector(inp, cfg)
        vec = net.embed(pose) if cfg.use_mlp else Tensor(pose)
        parts.append(_tile(vec, h // 4, w // 4))
    if tex_sample is not None:
        parts.append(tex_sample)
    x = ops.concat(parts, axis=1) if len(parts) > 1 else parts[0]
    f1 = ops.leaky_relu(net.w1(ops.upsample2x(x)))
    d_h = inp.d_h if cfg.sh_skips else None
    if cfg.use_c4:
        c4 = sh_modulate(c.c4, d_h) if d_h is not None else c.c4
        f1 = ops.concat([f1, c4], axis=1)
    f2 = ops.leaky_relu(net.w2(ops.upsample2x(f1)))
    if cfg.use_c5:
        c5 = sh_modulate(c.c5, d_h) if d_h is not None else c.c5
        f2 = ops.concat([f2, c5], axis=1)
    out = ops.squash01(net.out(f2))
    assert out.shape[0] == n
    return out


def warp_forward(inp: WarpInput, net: WarpNet, tex: NeuralTexture | None = None) -> Tensor:
    """Synthesize the target frames (N x 3 x H x W, or 3 x H x W when the
    input was built from one unbatched cache and one frame).  With ``config.exwarp`` the texture ``tex`` is required."""
    single = inp.single or inp.cache.c3.ndim == 3
    if inp.cache.c3.ndim == 3:
        inp = replace(inp, cache=_batched_cache(inp.cache))
    sample = None
    if net.config.exwarp:
        if tex is None:
            raise ConfigError("explicit warping needs the neural texture")
        sample = exwarp_features(inp, tex)
    out = _forward(inp, net, sample)
    return ops.reshape(out, out.shape[1:]) if single and out.shape[0] == 1 else out


def exwarp_features(inp: WarpInput, tex: NeuralTexture) -> Tensor:
    """Texture sampled at the target UV maps, box-pooled to a quarter resolution."""
    samples = [ops.reshape(sample_multiscale_texture(tex, uv), (1, tex.channels) + uv.shape[1:])
               for uv in inp.uv_map]
    return area_pool(ops.concat(samples, axis=0), 4)


def explicit_warp_baseline(inp: WarpInput, tex: NeuralTexture, net: WarpNet) -> Tensor:
    if not net.config.exwarp:
        raise ConfigError("explicit_warp_baseline needs a net built with exwarp=True")
    return warp_forward(inp, net, tex)
