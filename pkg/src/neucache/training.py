"""Losses, the joint texture + generator + warp training loop, and checkpoints."""
from __future__ import annotations

import csv
import json
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .numerics import ops
from .numerics.nn import Conv, Module
from .numerics.optim import AdamState, adam_step
from .numerics.tensor import Tensor, UsageError, backward, no_grad
from .renderer import (
    Cache, Generator, GeneratorConfig, NeuralTexture, generator_forward_batch, sample_multiscale_texture,
)
from .scene.dataset import Dataset
from .scene.trajectory import FrameParams
from .warp import WarpConfig, WarpNet, make_warp_input, warp_forward


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LossWeights:
    tex: float = 1.0
    img: float = 1.0
    perc: float = 0.1
    base_img: float = 0.1   # warp mode: multiplier on the cached frame's image loss

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise UsageError(f"loss weight {k} must be >= 0, got {v}")


class PerceptualFeatures(Module):
    """Fixed random 3-layer strided conv stack used as a feature-space distance."""

    def __init__(self, seed: int = 1234, widths=(8, 16, 32)):
        rng = np.random.default_rng(seed)
        self.layers = []
        cin = 3
        for c in widths:
            conv = Conv(cin, c, 3, stride=2, rng=rng)
            conv.weight.requires_grad = False
            conv.bias.requires_grad = False
            self.layers.append(conv)
            cin = c

    def distance(self, a: Tensor, b) -> Tensor:
        b = b if isinstance(b, Tensor) else Tensor(b, dtype=a.dtype)
        total = None
        fa, fb = a, b
        for conv in self.layers:
            fa = ops.leaky_relu(conv(fa))
            with no_grad():
                fb = ops.leaky_relu(conv(fb))
            term = ops.l1(fa, fb)
            total = term if total is None else ops.add(total, term)
        return ops.mul(total, 1.0 / len(self.layers))


_PERCEPTUAL = None


def perceptual_features() -> PerceptualFeatures:
    global _PERCEPTUAL
    if _PERCEPTUAL is None:
        _PERCEPTUAL = PerceptualFeatures()
    return _PERCEPTUAL


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


def compute_losses(pred_t, pred_td, tex_rgb, gt_t, gt_td, mask_t, weights: LossWeights = LossWeights(),
                   mode: str = "baseline", features: PerceptualFeatures | None = None) -> tuple[Tensor, dict]:
    """Weighted loss and its per-term values.

    baseline: tex*L_tex(t) + img*L_img(t) + perc*L_p(t)
    warp:     tex*L_tex(t) + base_img*img*L_img(t) + img*L_img(t+d) + perc*L_p(t+d)
    """
    if mode not in ("baseline", "warp"):
        raise UsageError(f"unknown loss mode {mode!r}")
    pred_t, tex_rgb = _as_tensor(pred_t), _as_tensor(tex_rgb)
    gt_t = np.asarray(gt_t, dtype=np.float32)
    for name, arr in (("pred_t", pred_t), ("tex_rgb", tex_rgb)):
        if arr.shape != gt_t.shape:
            raise UsageError(f"{name} shape {arr.shape} != ground truth {gt_t.shape}")
    mask = np.asarray(mask_t, dtype=np.float32)
    if mask.shape != gt_t.shape[:-3] + gt_t.shape[-2:]:
        raise UsageError(f"mask shape {mask.shape} does not match images {gt_t.shape}")
    mask_c = np.broadcast_to(np.expand_dims(mask, -3), gt_t.shape)
    l_tex = ops.masked_l1(tex_rgb, gt_t, mask_c)
    l_img_t = ops.l1(pred_t, gt_t)
    feats = features or perceptual_features()
    terms = {"tex": l_tex, "img_t": l_img_t}
    if mode == "baseline":
        l_p = feats.distance(pred_t, gt_t) if weights.perc > 0 else Tensor(np.float32(0.0))
        terms["perc"] = l_p
        total = ops.add(ops.add(ops.mul(l_tex, weights.tex), ops.mul(l_img_t, weights.img)),
                        ops.mul(l_p, weights.perc))
    else:
        pred_td = _as_tensor(pred_td)
        gt_td = np.asarray(gt_td, dtype=np.float32)
        if pred_td.shape != gt_td.shape or gt_td.shape != gt_t.shape:
            raise UsageError(f"warp target shapes {pred_td.shape} / {gt_td.shape} mismatch {gt_t.shape}")
        l_img_td = ops.l1(pred_td, gt_td)
        l_p = feats.distance(pred_td, gt_td) if weights.perc > 0 else Tensor(np.float32(0.0))
        terms.update(img_td=l_img_td, perc=l_p)
        total = ops.add(ops.mul(l_tex, weights.tex), ops.mul(l_img_t, weights.base_img * weights.img))
        total = ops.add(total, ops.mul(l_img_td, weights.img))
        total = ops.add(total, ops.mul(l_p, weights.perc))
    values = {k: float(v.data) for k, v in terms.items()}
    values["total"] = float(total.data)
    for k, v in values.items():
        if not np.isfinite(v):
            raise TrainingError(f"non-finite loss term {k!r} ({v})")
    return total, values


# ---------------------------------------------------------------------------
# models and optimizers
# ---------------------------------------------------------------------------

@dataclass
class Models:
    texture: NeuralTexture
    generator: Generator
    warp: WarpNet | None = None

    @classmethod
    def build(cls, gen: GeneratorConfig = GeneratorConfig(), warp: WarpConfig | None = None,
              tex_size: int = 256, tex_seed: int = 0, expr_dims: int = 4, with_warp: bool = True) -> "Models":
        tex = NeuralTexture(gen.tex_channels, tex_size, seed=tex_seed)
        if with_warp and warp is None:
            warp = WarpConfig.for_generator(gen, expr_dims)
        return cls(tex, Generator(gen), WarpNet(warp) if with_warp else None)

    def named_parameters(self) -> dict[str, Tensor]:
        out = self.texture.named_parameters("texture/")
        out.update(self.generator.named_parameters("gen/"))
        if self.warp is not None:
            out.update(self.warp.named_parameters("warp/"))
        return out

    def configs(self) -> dict:
        return {
            "texture": {"channels": self.texture.channels, "size": self.texture.size},
            "generator": asdict(self.generator.config),
            "warp": asdict(self.warp.config) if self.warp is not None else None,
        }

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.grad = None


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    lr_nets: float = 1e-4
    lr_texture: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 4
    seed: int = 0
    crop_fraction: float = 0.75
    warp_distances: tuple = (1, 2)
    baseline_fraction: float = 0.2
    mode: str = "joint"            # joint | baseline | warp_only
    max_steps_per_epoch: int = 0   # 0 = one pass over the data

    def __post_init__(self):
        if self.mode not in ("joint", "baseline", "warp_only"):
            raise UsageError(f"unknown training mode {self.mode!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise UsageError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class Optimizers:
    """Separate Adam states so each group's bias correction starts with its
    own first update (the warp head joins training after the warm-up)."""
    texture: AdamState
    gen: AdamState
    warp: AdamState

    @classmethod
    def create(cls, cfg: TrainConfig) -> "Optimizers":
        make = lambda lr: AdamState(lr=lr, beta1=cfg.beta1, beta2=cfg.beta2)  # noqa: E731
        return cls(make(cfg.lr_texture), make(cfg.lr_nets), make(cfg.lr_nets))


def crop_size(size: int, fraction: float, multiple: int) -> int:
    if fraction <= 0 or fraction >= 1:
        return size
    return max(multiple, int(size * fraction) // multiple * multiple)


@dataclass
class Batch:
    frames: list[FrameParams]
    uvs: list[np.ndarray]
    images: np.ndarray          # N x 3 x h x w
    masks: np.ndarray           # N x h x w
    future: list[FrameParams] | None = None
    future_uvs: list[np.ndarray] | None = None
    future_images: np.ndarray | None = None


def make_batch(data: Dataset, idx, future_idx=None, window=None) -> Batch:
    """Gather frames (and optional paired future frames) cropped to ``window``
    = (y0, x0, size) per item or None for the full frame."""
    window = window or [None] * len(idx)

    def cut(a, w):
        if w is None:
            return a
        y0, x0, s = w
        return a[..., y0:y0 + s, x0:x0 + s]

    frames = [data[i].params for i in idx]
    b = Batch(frames, [cut(f.uv_map, w) for f, w in zip(frames, window)],
              np.stack([cut(data[i].image, w) for i, w in zip(idx, window)]),
              np.stack([cut(f.mask, w) for f, w in zip(frames, window)]))
    if future_idx is not None:
        b.future = [data[i].params for i in future_idx]
        b.future_uvs = [cut(f.uv_map, w) for f, w in zip(b.future, window)]
        b.future_images = np.stack([cut(data[i].image, w) for i, w in zip(future_idx, window)])
    return b


def train_step(batch: Batch, models: Models, opt: Optimizers, mode: str = "baseline",
               weights: LossWeights = LossWeights(), freeze: tuple[str, ...] = ()) -> dict:
    """One forward/backward/Adam update.  ``mode`` is baseline (G only) or warp
    (G on frame t, W on the paired future frame).  Names in ``freeze``
    (texture, gen, warp) are left untouched."""
    raw = [sample_multiscale_texture(models.texture, uv) for uv in batch.uvs]
    images, cache, raw = generator_forward_batch(models.texture, batch.frames, models.generator,
                                                 uvs=batch.uvs, features=raw)
    tex_rgb = ops.concat([ops.reshape(ops.index(r, slice(0, 3)), (1, 3) + r.shape[1:]) for r in raw], axis=0)
    pred_td = None
    if mode == "warp":
        if models.warp is None or batch.future is None:
            raise UsageError("warp mode needs a warp net and paired future frames")
        inp = make_warp_input(cache, batch.future, batch.future_uvs)
        pred_td = warp_forward(inp, models.warp, models.texture)
    total, values = compute_losses(images, pred_td, tex_rgb, batch.images, batch.future_images, batch.masks,
                                   weights, mode)
    backward(total)
    groups = [("texture", models.texture, opt.texture), ("gen", models.generator, opt.gen)]
    if mode == "warp":
        groups.append(("warp", models.warp, opt.warp))
    for name, module, state in groups:
        if name not in freeze:
            adam_step(module.parameters(), state)
    models.zero_grad()
    return values


def _pairs(n: int, rng: np.random.Generator, distances) -> tuple[np.ndarray, np.ndarray]:
    d = rng.choice(np.asarray(distances), size=n)
    start = rng.permutation(n)
    keep = start + d < n
    return start[keep], (start + d)[keep]


def train(models: Models, data: Dataset, cfg: TrainConfig = TrainConfig(), weights: LossWeights = LossWeights(),
          log_path: str | Path | None = None, opt: Optimizers | None = None, verbose: bool = False,
          freeze: tuple[str, ...] = ()) -> list[dict]:
    """Run ``cfg.epochs`` epochs; returns one summary row per epoch (also
    written as CSV to ``log_path``)."""
    rng = np.random.default_rng(cfg.seed)
    opt = opt or Optimizers.create(cfg)
    h, w = data.resolution
    mult = 2 ** models.generator.config.levels
    size = crop_size(min(h, w), cfg.crop_fraction, mult)
    n_base = int(round(cfg.baseline_fraction * cfg.epochs)) if cfg.mode == "joint" else 0
    history = []
    writer = None
    fh = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        fh = open(log_path, "w", newline="")
    try:
        for epoch in range(cfg.epochs):
            mode = "baseline" if cfg.mode == "baseline" or epoch < n_base else "warp"
            t0 = time.perf_counter()
            if mode == "baseline":
                idx, fut = rng.permutation(len(data)), None
            else:
                idx, fut = _pairs(len(data), rng, cfg.warp_distances)
            sums: dict[str, float] = {}
            steps = 0
            for s in range(0, len(idx), cfg.batch_size):
                if cfg.max_steps_per_epoch and steps >= cfg.max_steps_per_epoch:
                    break
                sel = idx[s:s + cfg.batch_size]
                if size < min(h, w):
                    win = [(int(rng.integers(0, h - size + 1)), int(rng.integers(0, w - size + 1)), size) for _ in sel]
                else:
                    win = None
                batch = make_batch(data, sel, None if fut is None else fut[s:s + cfg.batch_size], win)
                vals = train_step(batch, models, opt, mode, weights, freeze)
                for k, v in vals.items():
                    sums[k] = sums.get(k, 0.0) + v
                steps += 1
            row = {"epoch": epoch, "mode": mode, "steps": steps,
                   **{k: sums[k] / max(steps, 1) for k in sorted(sums)},
                   "wall_s": time.perf_counter() - t0}
            history.append(row)
            if fh is not None:
                if writer is None:
                    writer = csv.DictWriter(fh, fieldnames=["epoch", "mode", "steps", "total", "tex", "img_t",
                                                            "img_td", "perc", "wall_s"], restval="")
                    writer.writeheader()
                writer.writerow(row)
                fh.flush()
            if verbose:
                print(f"epoch {epoch} {mode} loss {row['total']:.4f} ({row['wall_s']:.1f}s)", flush=True)
    finally:
        if fh is not None:
            fh.close()
    return history


# ---------------------------------------------------------------------------
# warp head on a frozen generator
# ---------------------------------------------------------------------------

@dataclass
class CacheBank:
    """Generator outputs and caches of every frame of a split, kept as arrays
    so warp-only training and evaluation never rerun the generator."""
    images: np.ndarray      # N x 3 x H x W
    c3: np.ndarray
    c4: np.ndarray
    c5: np.ndarray
    frames: list[FrameParams]

    @classmethod
    def build(cls, models: Models, frames: list[FrameParams], batch: int = 8) -> "CacheBank":
        imgs, c3, c4, c5 = [], [], [], []
        with no_grad():
            for s in range(0, len(frames), batch):
                chunk = frames[s:s + batch]
                im, cache, _ = generator_forward_batch(models.texture, chunk, models.generator)
                imgs.append(im.data)
                c3.append(cache.c3.data)
                c4.append(cache.c4.data)
                c5.append(cache.c5.data)
        return cls(np.concatenate(imgs), np.concatenate(c3), np.concatenate(c4), np.concatenate(c5), list(frames))

    def __len__(self):
        return len(self.frames)

    def take(self, idx) -> Cache:
        idx = np.asarray(idx)
        fr = [self.frames[i] for i in idx]
        return Cache(Tensor(self.c3[idx]), Tensor(self.c4[idx]), Tensor(self.c5[idx]),
                     theta=np.stack([f.theta for f in fr]), cam=np.stack([f.cam for f in fr]),
                     expr=np.stack([f.expr for f in fr]), h_obj=np.stack([f.h_obj for f in fr]),
                     uv_map=np.stack([np.asarray(f.uv_map, dtype=np.float32) for f in fr]),
                     t=np.array([f.t for f in fr]))


def warp_only_loss(pred: Tensor, gt: np.ndarray, weights: LossWeights = LossWeights(),
                   features: PerceptualFeatures | None = None) -> tuple[Tensor, dict]:
    feats = features or perceptual_features()
    l_img = ops.l1(pred, gt)
    l_p = feats.distance(pred, gt) if weights.perc > 0 else Tensor(np.float32(0.0))
    total = ops.add(ops.mul(l_img, weights.img), ops.mul(l_p, weights.perc))
    values = {"img_td": float(l_img.data), "perc": float(l_p.data), "total": float(total.data)}
    if not np.isfinite(values["total"]):
        raise TrainingError(f"non-finite warp loss ({values['total']})")
    return total, values


def train_warp_cached(models: Models, data: Dataset, bank: CacheBank, cfg: TrainConfig = TrainConfig(),
                      weights: LossWeights = LossWeights(), verbose: bool = False) -> list[dict]:
    """Fit only the warp head against precomputed caches of ``data``."""
    if models.warp is None:
        raise UsageError("no warp net to train")
    if len(bank) != len(data):
        raise UsageError(f"cache bank has {len(bank)} frames, dataset {len(data)}")
    rng = np.random.default_rng(cfg.seed)
    state = AdamState(lr=cfg.lr_nets, beta1=cfg.beta1, beta2=cfg.beta2)
    tex = models.texture if models.warp.config.exwarp else None
    history = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        src, dst = _pairs(len(data), rng, cfg.warp_distances)
        sums: dict[str, float] = {}
        steps = 0
        for s in range(0, len(src), cfg.batch_size):
            if cfg.max_steps_per_epoch and steps >= cfg.max_steps_per_epoch:
                break
            a, b = src[s:s + cfg.batch_size], dst[s:s + cfg.batch_size]
            inp = make_warp_input(bank.take(a), [data[i].params for i in b])
            pred = warp_forward(inp, models.warp, tex)
            total, vals = warp_only_loss(pred, np.stack([data[i].image for i in b]), weights)
            backward(total)
            adam_step(models.warp.parameters(), state)
            models.zero_grad()
            for k, v in vals.items():
                sums[k] = sums.get(k, 0.0) + v
            steps += 1
        row = {"epoch": epoch, "mode": "warp_only", "steps": steps,
               **{k: sums[k] / max(steps, 1) for k in sorted(sums)}, "wall_s": time.perf_counter() - t0}
        history.append(row)
        if verbose:
            print(f"epoch {epoch} warp_only loss {row['total']:.4f} ({row['wall_s']:.1f}s)", flush=True)
    return history


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"NCKP"
CKPT_VERSION = 1


class CheckpointError(OSError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class ParameterMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


def save_checkpoint(models: Models, path) -> Path:
    """Write every parameter as a named little-endian float32 block."""
    params = models.named_parameters()
    meta = json.dumps(models.configs(), sort_keys=True).encode()
    out = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(meta)), meta, struct.pack("<I", len(params))]
    for name, p in params.items():
        nb = name.encode()
        out.append(struct.pack("<I", len(nb)) + nb)
        out.append(struct.pack("<I", p.ndim) + struct.pack(f"<{p.ndim}I", *p.shape))
        out.append(np.asarray(p.data, dtype="<f4").tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(out))
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedCheckpointError(f"checkpoint truncated at byte {len(self.buf)} (needed {self.pos + n})")
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b

    def u32(self, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else vals


def _models_from_meta(meta: dict) -> Models:
    gen = GeneratorConfig(**meta["generator"])
    tex = meta["texture"]
    warp = WarpConfig(**meta["warp"]) if meta.get("warp") else None
    m = Models(NeuralTexture(tex["channels"], tex["size"]), Generator(gen), WarpNet(warp) if warp else None)
    return m


def load_checkpoint(path, models: Models | None = None) -> Models:
    """Read a checkpoint; parameters are validated before anything is assigned."""
    buf = Path(path).read_bytes()
    r = _Reader(buf)
    magic = r.take(4) if len(buf) >= 4 else buf
    if magic != CKPT_MAGIC:
        raise BadMagicError(f"{path}: bad checkpoint magic {magic!r}")
    version, meta_len = r.u32(2)
    if version != CKPT_VERSION:
        raise VersionMismatchError(f"{path}: checkpoint version {version}, expected {CKPT_VERSION}")
    meta = json.loads(r.take(meta_len))
    models = models or _models_from_meta(meta)
    expected = models.named_parameters()
    n = r.u32()
    loaded: dict[str, np.ndarray] = {}
    for _ in range(n):
        name = r.take(r.u32()).decode()
        rank = r.u32()
        shape = tuple(r.u32(rank)) if rank > 1 else ((r.u32(),) if rank == 1 else ())
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        if name not in expected:
            raise ParameterMismatchError(f"{path}: unexpected parameter {name!r}")
        if tuple(expected[name].shape) != shape:
            raise ParameterMismatchError(f"{path}: parameter {name!r} has shape {shape}, "
                                         f"model expects {tuple(expected[name].shape)}")
        loaded[name] = arr
    if r.pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - r.pos} trailing bytes")
    missing = sorted(set(expected) - set(loaded))
    if missing:
        raise ParameterMismatchError(f"{path}: missing parameter {missing[0]!r}")
    for name, arr in loaded.items():
        expected[name].data = arr.astype(np.float32)
    return models


__all__ = [
    "Batch", "Cache", "CacheBank", "CheckpointError", "BadMagicError", "LossWeights", "Models", "Optimizers",
    "ParameterMismatchError", "PerceptualFeatures", "TrainConfig", "TrainingError", "TruncatedCheckpointError",
    "VersionMismatchError", "compute_losses", "crop_size", "load_checkpoint", "make_batch", "save_checkpoint",
    "train", "train_step", "train_warp_cached", "warp_only_loss",
]
