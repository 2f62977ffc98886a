"""Dense tensors, reverse-mode autodiff and the image ops the renderer needs."""
from .optim import AdamState, adam_step
from .ops import (
    area_downsample,
    concat,
    conv2d,
    conv_transpose2d,
    count_macs,
    gaussian_lpf,
    grid_sample_bilinear,
    l1,
    leaky_relu,
    linear,
    masked_l1,
    squash01,
    upconv2x,
    upsample2x,
)
from .sh import DomainError, sh_basis9
from .tensor import ConfigError, Tensor, UsageError, backward, no_grad, zero_grad

__all__ = [
    "AdamState", "ConfigError", "DomainError", "Tensor", "UsageError", "adam_step",
    "area_downsample", "backward", "concat", "conv2d", "conv_transpose2d", "count_macs",
    "gaussian_lpf", "grid_sample_bilinear", "l1", "leaky_relu", "linear", "masked_l1",
    "no_grad", "sh_basis9", "squash01", "upconv2x", "upsample2x", "zero_grad",
]
