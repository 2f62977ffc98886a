import os
import time
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

from neucache.numerics import Tensor, backward


def numeric_grad(f, x: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central finite differences of scalar ``f`` at ``x`` (float64)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f(x)
        x[i] = old - eps
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


def check_grads(build, arrays: list[np.ndarray], eps: float = 1e-4) -> list[float]:
    """Compare autodiff gradients of ``build(*tensors)`` (a scalar Tensor) with
    central differences for every input array; returns relative errors."""
    tensors = [Tensor(a.copy(), requires_grad=True, dtype=np.float64) for a in arrays]
    backward(build(*tensors))
    errs = []
    for k, a in enumerate(arrays):
        def f(v, k=k):
            args = [Tensor(b if j != k else v, dtype=np.float64) for j, b in enumerate(arrays)]
            return float(build(*args).data)
        num = numeric_grad(f, a.copy(), eps)
        errs.append(rel_err(tensors[k].grad, num))
    return errs


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def frames32():
    from neucache.scene import build_split
    return build_split(seed=3, n_frames=16, fps=30, h=32, w=32)


@pytest.fixture(scope="session")
def frames64():
    from neucache.scene import build_split
    return build_split(seed=3, n_frames=4, fps=30, h=64, w=64)


# ---------------------------------------------------------------- desk-scale trained model (slow; built once)

@pytest.fixture(scope="session")
def cache_dir(request) -> Path:
    env = os.environ.get("NEUCACHE_CACHE_DIR")
    path = Path(env) if env else Path(request.config.cache.mkdir("neucache-acceptance"))
    path.mkdir(parents=True, exist_ok=True)
    return path


@pytest.fixture(scope="session")
def trained(cache_dir):
    """512 training frames at 64x64 trained for 30 epochs; kept in pytest's
    cache directory (or $NEUCACHE_CACHE_DIR) so later runs reuse it."""
    from neucache.scene import generate_dataset, load_split
    from neucache.training import CacheBank, Models, TrainConfig, load_checkpoint, save_checkpoint, train
    data_dir = cache_dir / "data64"
    if not (data_dir / "test" / "manifest.txt").exists():
        generate_dataset(data_dir, seed=7, n_frames=512, n_test=128)
    train_set, test_set = load_split(data_dir / "train"), load_split(data_dir / "test")
    ckpt = cache_dir / "model_e30.nckp"
    if ckpt.exists():
        models = load_checkpoint(ckpt)
    else:
        models = Models.build()
        train(models, train_set, TrainConfig(epochs=30))
        save_checkpoint(models, ckpt)
    return SimpleNamespace(models=models, train=train_set, test=test_set,
                           test_bank=CacheBank.build(models, test_set.params))


@pytest.fixture(scope="session")
def ablation(trained):
    """Ablation rows at the reduced budget (10 epochs each), keyed by name,
    plus the harness wall time.
    C3+C4+C5 has the full row's flags, so it is not trained twice."""
    from neucache.bench import CACHE_ROWS, COMPONENT_ROWS, run_ablation
    from neucache.training import CacheBank
    t0 = time.perf_counter()
    train_bank = CacheBank.build(trained.models, trained.train.params)
    rows = run_ablation(trained.models, trained.train, trained.test, COMPONENT_ROWS + CACHE_ROWS[:2], epochs=10,
                        train_bank=train_bank, test_bank=trained.test_bank)
    return SimpleNamespace(rows={r.name: r for r in rows}, seconds=time.perf_counter() - t0)
