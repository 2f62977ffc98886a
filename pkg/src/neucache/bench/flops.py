"""Analytic multiply-accumulate counts."""
from __future__ import annotations

from ..numerics import ops
from ..numerics.nn import Conv, Linear
from ..numerics.tensor import no_grad


def conv_macs(cin: int, cout: int, k: int, h_out: int, w_out: int) -> int:
    return cout * cin * k * k * h_out * w_out


def affine_macs(n_in: int, n_out: int) -> int:
    return n_in * n_out


def count_flops(model, shape: tuple[int, int]) -> int:
    """MACs of one forward pass of ``model`` (a Generator, WarpNet, Conv or
    Linear) for a single H x W frame."""
    h, w = shape
    if isinstance(model, Linear):
        return model.macs()
    if isinstance(model, Conv):
        return model.macs(h, w)
    return int(model.macs(h, w))


def layer_table(model, shape: tuple[int, int]) -> list[tuple[str, int]]:
    return list(model.layer_macs(*shape))


def traced_macs(fn, *args) -> int:
    """MACs actually executed by conv/affine ops inside ``fn(*args)``."""
    with no_grad(), ops.count_macs() as c:
        fn(*args)
    return c[0]


def flop_ratio(generator, warp, shape: tuple[int, int]) -> float:
    return count_flops(generator, shape) / count_flops(warp, shape)
