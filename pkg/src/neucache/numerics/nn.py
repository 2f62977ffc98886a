"""Parameter containers for the renderer and warp networks."""
from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor


class Module:
    """Owns named parameters and child modules, registered as attributes."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out[prefix + key] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(prefix + key + "/"))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{prefix}{key}{i}/"))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out[f"{prefix}{key}{i}"] = item
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def _param(arr: np.ndarray, name: str) -> Tensor:
    return Tensor(arr.astype(np.float32), requires_grad=True, name=name)


class Conv(Module):
    """Convolution layer; ``up=True`` makes it an up-convolution."""

    def __init__(self, cin: int, cout: int, k: int = 3, stride: int = 1, rng=None, up: bool = False):
        rng = rng or np.random.default_rng(0)
        fan_in = cin * k * k
        self.cin, self.cout, self.k, self.stride, self.up = cin, cout, k, stride, up
        self.weight = _param(rng.normal(0.0, np.sqrt(2.0 / fan_in), (cout, cin, k, k)), "weight")
        self.bias = _param(np.zeros(cout), "bias")

    def __call__(self, x: Tensor) -> Tensor:
        if self.up:
            return ops.upconv2x(x, self.weight, self.bias)
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.k // 2)

    def out_size(self, h: int, w: int) -> tuple[int, int]:
        if self.up:
            return 2 * h, 2 * w
        return (ops.conv_output_size(h, self.k, self.stride, self.k // 2),
                ops.conv_output_size(w, self.k, self.stride, self.k // 2))

    def macs(self, h: int, w: int) -> int:
        ho, wo = self.out_size(h, w)
        return self.cout * self.cin * self.k * self.k * ho * wo


class ConvTranspose(Module):
    """Stride-2 transposed convolution (the non-DNR+ decoder layer)."""

    def __init__(self, cin: int, cout: int, rng=None):
        rng = rng or np.random.default_rng(0)
        self.cin, self.cout, self.k = cin, cout, 3
        self.weight = _param(rng.normal(0.0, np.sqrt(2.0 / (cin * 9 / 4)), (cin, cout, 3, 3)), "weight")
        self.bias = _param(np.zeros(cout), "bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv_transpose2d(x, self.weight, self.bias)

    def out_size(self, h: int, w: int) -> tuple[int, int]:
        return 2 * h, 2 * w

    def macs(self, h: int, w: int) -> int:
        return self.cout * self.cin * 9 * h * w


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng=None):
        rng = rng or np.random.default_rng(0)
        self.n_in, self.n_out = n_in, n_out
        self.weight = _param(rng.normal(0.0, np.sqrt(1.0 / n_in), (n_out, n_in)), "weight")
        self.bias = _param(np.zeros(n_out), "bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)

    def macs(self) -> int:
        return self.n_in * self.n_out
