"""Primitive layer operations on (B, C, H, W) feature maps.

Every op here is a thin, validated wrapper over ``torch.nn.functional`` so the
network modules and the tests share one set of conventions:

* convolution is cross-correlation with zero padding (no kernel flip),
* max pooling pads with -inf,
* bilinear resizing is corner aligned (``align_corners=True``).

Gradients come from autograd.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Tuple, Union

import torch
import torch.nn.functional as F

from .errors import ConfigError, NumericError, ShapeError, StateError

FeatureMap = torch.Tensor

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


def _pair(v: Union[int, Tuple[int, int]]) -> Tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    return (int(v[0]), int(v[1]))


def conv_output_size(n: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    return (n + 2 * padding - kernel) // stride + 1


def _check_feature_map(x: torch.Tensor, name: str = "x") -> None:
    if x.dim() != 4:
        raise ShapeError(f"{name} must be rank 4 (B, C, H, W), got shape {tuple(x.shape)}")
    if min(x.shape) < 1:
        raise ShapeError(f"{name} has an empty dimension: {tuple(x.shape)}")


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: Union[int, Tuple[int, int]] = 1
    stride: int = 1
    padding: int = 0
    groups: int = 1
    bias: bool = False

    def __post_init__(self):
        if self.groups < 1 or self.in_channels % self.groups or self.out_channels % self.groups:
            raise ShapeError(
                f"in_channels={self.in_channels} and out_channels={self.out_channels} "
                f"must both be divisible by groups={self.groups}"
            )
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ConfigError(f"padding must be >= 0, got {self.padding}")

    @property
    def kernel_size(self) -> Tuple[int, int]:
        return _pair(self.kernel)

    @property
    def weight_shape(self) -> Tuple[int, int, int, int]:
        kh, kw = self.kernel_size
        return (self.out_channels, self.in_channels // self.groups, kh, kw)

    def output_hw(self, h: int, w: int) -> Tuple[int, int]:
        kh, kw = self.kernel_size
        return (
            conv_output_size(h, kh, self.stride, self.padding),
            conv_output_size(w, kw, self.stride, self.padding),
        )

    def num_params(self) -> int:
        n = 1
        for d in self.weight_shape:
            n *= d
        return n + (self.out_channels if self.bias else 0)


def conv2d(
    x: FeatureMap, spec: ConvSpec, weight: torch.Tensor, bias: Optional[torch.Tensor] = None
) -> FeatureMap:
    _check_feature_map(x)
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, spec expects {spec.in_channels}")
    if tuple(weight.shape) != spec.weight_shape:
        raise ShapeError(f"weight shape {tuple(weight.shape)} != expected {spec.weight_shape}")
    if spec.bias:
        if bias is None or tuple(bias.shape) != (spec.out_channels,):
            raise ShapeError(f"bias must have shape ({spec.out_channels},)")
    elif bias is not None:
        raise ShapeError("bias given but spec.bias is False")
    if not torch.isfinite(weight).all() or (bias is not None and not torch.isfinite(bias).all()):
        raise NumericError("convolution weights contain non-finite values")
    kh, kw = spec.kernel_size
    if x.shape[2] + 2 * spec.padding < kh or x.shape[3] + 2 * spec.padding < kw:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {tuple(x.shape[2:])}")
    return F.conv2d(x, weight, bias, stride=spec.stride, padding=spec.padding, groups=spec.groups)


@dataclass
class BatchNormState:
    """Per-channel affine parameters and running statistics.

    ``running_mean``/``running_var`` may be ``None`` (uninitialised); eval mode
    then refuses to run. Train mode updates them in place.
    """

    gamma: torch.Tensor
    beta: torch.Tensor
    running_mean: Optional[torch.Tensor] = None
    running_var: Optional[torch.Tensor] = None
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS
    training: bool = True

    @classmethod
    def fresh(cls, channels: int, dtype=torch.float32, training: bool = True) -> "BatchNormState":
        return cls(
            gamma=torch.ones(channels, dtype=dtype),
            beta=torch.zeros(channels, dtype=dtype),
            running_mean=torch.zeros(channels, dtype=dtype),
            running_var=torch.ones(channels, dtype=dtype),
            training=training,
        )

    def __post_init__(self):
        if self.eps <= 0:
            raise ConfigError("batch norm epsilon must be > 0")


def batch_norm(x: FeatureMap, st: BatchNormState) -> FeatureMap:
    _check_feature_map(x)
    c = x.shape[1]
    for name in ("gamma", "beta", "running_mean", "running_var"):
        v = getattr(st, name)
        if v is not None and tuple(v.shape) != (c,):
            raise ShapeError(f"batch norm {name} has shape {tuple(v.shape)}, expected ({c},)")
    if not st.training and (st.running_mean is None or st.running_var is None):
        raise StateError("eval-mode batch norm requires initialised running statistics")
    return F.batch_norm(
        x, st.running_mean, st.running_var, st.gamma, st.beta,
        training=st.training, momentum=st.momentum, eps=st.eps,
    )


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    """Logistic function kept strictly inside (0, 1).

    Plain ``torch.sigmoid`` rounds to exactly 1 (or 0) once |x| is large; the
    clamp pins those tails to the nearest representable values inside the
    open interval and leaves every other entry untouched.
    """
    fi = torch.finfo(x.dtype)
    return torch.sigmoid(x).clamp(fi.tiny, 1.0 - fi.eps / 2)


def activation(x: FeatureMap, kind: Literal["relu", "sigmoid"]) -> FeatureMap:
    if kind == "relu":
        return torch.relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ConfigError(f"unknown activation {kind!r}; expected 'relu' or 'sigmoid'")


def max_pool2d(x: FeatureMap, kernel: int = 3, stride: int = 2, padding: int = 1) -> FeatureMap:
    _check_feature_map(x)
    return F.max_pool2d(x, kernel_size=kernel, stride=stride, padding=padding)


def directional_pool(
    x: FeatureMap,
    axis: Literal["horizontal", "vertical"],
    mode: Literal["avg", "max"],
) -> FeatureMap:
    """Collapse one spatial axis.

    ``horizontal`` squeezes the width (B, C, H, 1); ``vertical`` squeezes the
    height (B, C, 1, W).
    """
    _check_feature_map(x)
    if axis == "horizontal":
        dim = 3
    elif axis == "vertical":
        dim = 2
    else:
        raise ConfigError(f"unknown pooling axis {axis!r}")
    if mode == "avg":
        return x.mean(dim=dim, keepdim=True)
    if mode == "max":
        return x.amax(dim=dim, keepdim=True)
    raise ConfigError(f"unknown pooling mode {mode!r}")


def bilinear_resize(x: FeatureMap, size: Tuple[int, int]) -> FeatureMap:
    _check_feature_map(x)
    if tuple(size) == tuple(x.shape[2:]):
        return x
    return F.interpolate(x, size=tuple(size), mode="bilinear", align_corners=True)


def bilinear_upsample(x: FeatureMap, scale: int = 2) -> FeatureMap:
    if not isinstance(scale, int) or scale < 1:
        raise ConfigError(f"scale must be a positive integer, got {scale!r}")
    _check_feature_map(x)
    return bilinear_resize(x, (x.shape[2] * scale, x.shape[3] * scale))
