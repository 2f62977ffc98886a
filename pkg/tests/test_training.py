import csv
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neucache.numerics import Tensor, backward, ops
from neucache.numerics.tensor import UsageError
from neucache.renderer import GeneratorConfig
from neucache.scene import Dataset
from neucache.training import (
    BadMagicError, CacheBank, CheckpointError, LossWeights, Models, Optimizers, ParameterMismatchError,
    PerceptualFeatures, TrainConfig, TrainingError, TruncatedCheckpointError, VersionMismatchError, compute_losses,
    crop_size, load_checkpoint, make_batch, save_checkpoint, train, train_step, train_warp_cached,
)

from conftest import check_grads

TINY = GeneratorConfig(depth=6, base=16)


def tiny_models(seed=0):
    return Models.build(GeneratorConfig(depth=6, base=16, seed=seed), tex_size=64, tex_seed=seed)


@pytest.fixture(scope="module")
def toy(frames32):
    return Dataset(list(frames32), 30, 3)


class FixedPerc:
    """Stand-in perceptual term with a chosen value."""

    def __init__(self, value):
        self.value = value

    def distance(self, a, b):
        return Tensor(np.float32(self.value))


# ---------------------------------------------------------------- weights and config

def test_default_weights():
    w = LossWeights()
    assert (w.tex, w.img, w.perc, w.base_img) == (1.0, 1.0, 0.1, 0.1)
    with pytest.raises(UsageError):
        LossWeights(perc=-1)


def test_train_config_defaults():
    c = TrainConfig()
    assert c.lr_texture / c.lr_nets == pytest.approx(10)
    assert (c.beta1, c.beta2) == (0.9, 0.999)
    with pytest.raises(UsageError):
        TrainConfig(mode="gan")


def test_crop_size():
    assert crop_size(64, 0.75, 32) == 32
    assert crop_size(128, 0.75, 32) == 96
    assert crop_size(64, 1.0, 32) == 64


# ---------------------------------------------------------------- losses

def test_perfect_prediction_zero_loss(rng):
    gt = rng.uniform(size=(2, 3, 8, 8))
    mask = np.ones((2, 8, 8))
    total, vals = compute_losses(gt, None, gt, gt, None, mask)
    assert vals["total"] == 0.0
    total, vals = compute_losses(gt, gt, gt, gt, gt, mask, mode="warp")
    assert vals["total"] == 0.0


def test_baseline_arithmetic():
    gt = np.zeros((1, 3, 2, 2))
    mask = np.ones((1, 2, 2))
    _, vals = compute_losses(np.full_like(gt, 0.1), None, np.full_like(gt, 0.2), gt, None, mask,
                             features=FixedPerc(0.3))
    assert vals["tex"] == pytest.approx(0.2) and vals["img_t"] == pytest.approx(0.1)
    assert vals["total"] == pytest.approx(0.33, abs=1e-6)


def test_warp_arithmetic():
    gt = np.zeros((1, 3, 2, 2))
    mask = np.ones((1, 2, 2))
    _, vals = compute_losses(np.full_like(gt, 0.5), np.full_like(gt, 0.25), np.full_like(gt, 0.2), gt, gt, mask,
                             mode="warp", features=FixedPerc(0.3))
    assert vals["total"] == pytest.approx(0.2 + 0.1 * 0.5 + 0.25 + 0.1 * 0.3, abs=1e-6)


def test_zero_vs_one_is_unit_l1():
    gt = np.ones((3, 4, 4))
    _, vals = compute_losses(np.zeros_like(gt), None, gt, gt, None, np.ones((4, 4)))
    assert vals["img_t"] == 1.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["baseline", "warp"]),
       st.floats(0, 2), st.floats(0, 2), st.floats(0, 2), st.floats(0, 2))
def test_total_is_weighted_sum(seed, mode, wt, wi, wp, wb):
    r = np.random.default_rng(seed)
    shape = (1, 3, 8, 8)
    a, b, c, d, e = (r.uniform(size=shape) for _ in range(5))
    mask = (r.uniform(size=(1, 8, 8)) > 0.3).astype(float)
    w = LossWeights(wt, wi, wp, wb)
    _, v = compute_losses(a, b if mode == "warp" else None, c, d, e if mode == "warp" else None, mask, w, mode)
    if mode == "baseline":
        expect = wt * v["tex"] + wi * v["img_t"] + wp * v["perc"]
    else:
        expect = wt * v["tex"] + wb * wi * v["img_t"] + wi * v["img_td"] + wp * v["perc"]
    assert v["total"] == pytest.approx(expect, abs=1e-6)


def test_pure_l1_by_hand_on_2x2():
    gt = np.array([[[0.0, 1.0], [0.5, 0.5]]] * 3)[None]
    pred = np.array([[[0.5, 1.0], [0.0, 0.5]]] * 3)[None]
    tex = np.array([[[0.0, 0.0], [0.5, 1.0]]] * 3)[None]
    mask = np.array([[[1.0, 1.0], [0.0, 1.0]]])
    _, v = compute_losses(pred, None, tex, gt, None, mask, LossWeights(perc=0.0))
    assert v["img_t"] == pytest.approx(0.25)           # (0.5 + 0 + 0.5 + 0) / 4
    assert v["tex"] == pytest.approx((0 + 1 + 0.5) / 3)  # masked-in pixels only
    assert v["total"] == pytest.approx(0.25 + 0.5)


def test_masked_tex_ignores_background(rng):
    gt = rng.uniform(size=(1, 3, 8, 8))
    tex = rng.uniform(size=(1, 3, 8, 8))
    mask = np.zeros((1, 8, 8))
    mask[:, 2:6, 2:6] = 1
    _, a = compute_losses(gt, None, tex, gt, None, mask)
    gt2 = gt.copy()
    gt2[:, :, 0, :] = rng.uniform(size=(3, 8))
    _, b = compute_losses(gt2, None, tex, gt2, None, mask)
    assert a["tex"] == b["tex"]


def test_shape_mismatch_is_usage_error():
    with pytest.raises(UsageError):
        compute_losses(np.zeros((3, 4, 4)), None, np.zeros((3, 4, 4)), np.zeros((3, 4, 5)), None, np.ones((4, 5)))
    with pytest.raises(UsageError):
        compute_losses(np.zeros((3, 4, 4)), np.zeros((3, 2, 2)), np.zeros((3, 4, 4)), np.zeros((3, 4, 4)),
                       np.zeros((3, 4, 4)), np.ones((4, 4)), mode="warp")


def test_non_finite_term_named():
    gt = np.zeros((3, 4, 4))
    bad = gt.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(TrainingError, match="img_t"):
        compute_losses(bad, None, gt, gt, None, np.ones((4, 4)))


def test_loss_grads_finite_differences(rng):
    gt = rng.uniform(size=(1, 3, 8, 8))
    mask = (rng.uniform(size=(1, 8, 8)) > 0.4).astype(float)
    feats = PerceptualFeatures(widths=(2, 2, 2))
    for layer in feats.layers:
        layer.weight.data = layer.weight.data.astype(np.float64)
        layer.bias.data = layer.bias.data.astype(np.float64)

    def build(p, t):
        total, _ = compute_losses(p, None, t, gt, None, mask, features=feats)
        return total
    # keep inputs away from the L1 kink
    p0 = gt + rng.choice([-1, 1], size=gt.shape) * rng.uniform(0.05, 0.2, gt.shape)
    t0 = gt + rng.choice([-1, 1], size=gt.shape) * rng.uniform(0.05, 0.2, gt.shape)
    assert max(check_grads(build, [p0, t0], eps=1e-6)) < 1e-3


def test_perceptual_features_fixed():
    a, b = PerceptualFeatures(), PerceptualFeatures()
    assert all(np.array_equal(x.weight.data, y.weight.data) for x, y in zip(a.layers, b.layers))
    assert not any(l.weight.requires_grad for l in a.layers)


# ---------------------------------------------------------------- train step and loop

def test_warp_step_updates_texture_and_generator_when_warp_frozen(toy):
    m = tiny_models()
    before = {k: v.data.copy() for k, v in m.named_parameters().items()}
    opt = Optimizers.create(TrainConfig())
    batch = make_batch(toy, [0, 1], [1, 3])
    train_step(batch, m, opt, "warp", freeze=("warp",))
    after = m.named_parameters()
    assert any(not np.array_equal(before[k], after[k].data) for k in after if k.startswith("texture/"))
    assert any(not np.array_equal(before[k], after[k].data) for k in after if k.startswith("gen/"))
    assert all(np.array_equal(before[k], after[k].data) for k in after if k.startswith("warp/"))
    assert all(p.grad is None for p in after.values())


def test_warp_step_reaches_all_groups(toy):
    m = tiny_models()
    opt = Optimizers.create(TrainConfig())
    before = {k: v.data.copy() for k, v in m.named_parameters().items()}
    vals = train_step(make_batch(toy, [2, 3], [3, 5]), m, opt, "warp")
    assert set(vals) >= {"tex", "img_t", "img_td", "perc", "total"}
    changed = {k.split("/")[0] for k, v in m.named_parameters().items() if not np.array_equal(before[k], v.data)}
    assert changed == {"texture", "gen", "warp"}


def test_train_is_deterministic(toy, tmp_path):
    cfg = TrainConfig(epochs=3, batch_size=4, crop_fraction=1.0, max_steps_per_epoch=2)
    h1 = train(tiny_models(), toy, cfg, log_path=tmp_path / "a.csv")
    h2 = train(tiny_models(), toy, cfg, log_path=tmp_path / "b.csv")
    assert [r["total"] for r in h1] == [r["total"] for r in h2]
    rows = list(csv.DictReader(open(tmp_path / "a.csv")))
    assert [r["mode"] for r in rows] == ["baseline", "warp", "warp"]
    assert set(rows[0]) == {"epoch", "mode", "steps", "total", "tex", "img_t", "img_td", "perc", "wall_s"}


def test_training_reduces_loss(toy):
    m = tiny_models()
    cfg = TrainConfig(lr_nets=1e-3, lr_texture=1e-2)
    opt = Optimizers.create(cfg)
    rng = np.random.default_rng(0)
    losses = []
    for step in range(200):
        idx = rng.choice(len(toy), size=2, replace=False)
        losses.append(train_step(make_batch(toy, idx), m, opt, "baseline")["total"])
    assert np.mean(losses[-10:]) < np.mean(losses[:10])


def test_warp_only_training_leaves_generator(toy):
    m = tiny_models()
    bank = CacheBank.build(m, toy.params)
    gen_before = {k: v.data.copy() for k, v in m.generator.named_parameters().items()}
    warp_before = {k: v.data.copy() for k, v in m.warp.named_parameters().items()}
    hist = train_warp_cached(m, toy, bank, TrainConfig(epochs=1, batch_size=4, max_steps_per_epoch=2))
    assert hist[0]["steps"] == 2
    assert all(np.array_equal(gen_before[k], v.data) for k, v in m.generator.named_parameters().items())
    assert any(not np.array_equal(warp_before[k], v.data) for k, v in m.warp.named_parameters().items())


def test_cache_bank_matches_forward(toy):
    from neucache.numerics import no_grad
    from neucache.renderer import generator_forward
    m = tiny_models()
    bank = CacheBank.build(m, toy.params[:5], batch=2)
    with no_grad():
        img, cache = generator_forward(m.texture, toy.params[3], m.generator)
    assert np.allclose(bank.images[3], img.data, atol=1e-5)
    c = bank.take([3])
    assert np.allclose(c.c4.data[0], cache.c4.data, atol=1e-5)
    assert c.t[0] == toy.params[3].t


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_roundtrip(tmp_path):
    m = tiny_models(seed=3)
    for p in m.named_parameters().values():
        p.data = p.data + np.float32(0.125)
    path = save_checkpoint(m, tmp_path / "m.nckp")
    loaded = load_checkpoint(path)
    a, b = m.named_parameters(), loaded.named_parameters()
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)
    assert loaded.generator.config == m.generator.config
    assert loaded.warp.config == m.warp.config


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "x.nckp"
    p.write_bytes(b"XXXX" + b"\0" * 20)
    with pytest.raises(BadMagicError):
        load_checkpoint(p)


def test_checkpoint_version_mismatch(tmp_path):
    path = save_checkpoint(tiny_models(), tmp_path / "m.nckp")
    buf = bytearray(path.read_bytes())
    buf[4:8] = struct.pack("<I", 99)
    path.write_bytes(bytes(buf))
    with pytest.raises(VersionMismatchError):
        load_checkpoint(path)


def test_checkpoint_truncated(tmp_path):
    path = save_checkpoint(tiny_models(), tmp_path / "m.nckp")
    path.write_bytes(path.read_bytes()[:-1])
    target = tiny_models(seed=5)
    before = {k: v.data.copy() for k, v in target.named_parameters().items()}
    with pytest.raises(TruncatedCheckpointError):
        load_checkpoint(path, target)
    assert all(np.array_equal(before[k], v.data) for k, v in target.named_parameters().items())


def test_checkpoint_renamed_parameter(tmp_path):
    path = save_checkpoint(tiny_models(), tmp_path / "m.nckp")
    buf = path.read_bytes()
    old = b"gen/out/weight"
    assert old in buf
    path.write_bytes(buf.replace(old, b"gen/out/weighX"))
    with pytest.raises(ParameterMismatchError, match="weighX"):
        load_checkpoint(path)


def test_checkpoint_shape_mismatch(tmp_path):
    path = save_checkpoint(tiny_models(), tmp_path / "m.nckp")
    other = Models.build(GeneratorConfig(depth=6, base=24), tex_size=64)
    with pytest.raises(ParameterMismatchError):
        load_checkpoint(path, other)


def test_checkpoint_errors_are_distinct():
    kinds = {BadMagicError, VersionMismatchError, ParameterMismatchError, TruncatedCheckpointError}
    assert len(kinds) == 4 and all(issubclass(k, CheckpointError) for k in kinds)
