"""Grouped Coordinate Attention and the baseline attention blocks used in ablations.

All variants share the constructor signature ``(channels, cfg)`` and map a
(B, C, H, W) tensor to a tensor of the same shape.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import numerics
from .errors import ConfigError, ShapeError

ATTENTION_VARIANTS = ("none", "se", "cbam", "coordatt", "gca")

COORDATT_MIN_HIDDEN = 8
CBAM_SPATIAL_KERNEL = 7


@dataclass(frozen=True)
class GCAConfig:
    """Grouping and reduction settings.

    ``reduction`` is also used as the reduction ratio of the SE, CBAM and
    CoordAtt baselines so that ablations compare at matched r.
    """

    groups: int = 4
    reduction: int = 16
    min_hidden: int = 4

    def __post_init__(self):
        if self.groups < 1:
            raise ConfigError(f"groups must be >= 1, got {self.groups}")
        if self.reduction < 1:
            raise ConfigError(f"reduction must be >= 1, got {self.reduction}")
        if self.min_hidden < 1:
            raise ConfigError(f"min_hidden must be >= 1, got {self.min_hidden}")

    def group_channels(self, channels: int) -> int:
        if channels % self.groups:
            raise ConfigError(f"channels={channels} not divisible by groups={self.groups}")
        return channels // self.groups

    def hidden(self, channels: int) -> int:
        return max(self.group_channels(channels) // self.reduction, self.min_hidden)


class DirectionalDescriptors(NamedTuple):
    h_avg: torch.Tensor  # (B, C, H, 1)
    h_max: torch.Tensor
    w_avg: torch.Tensor  # (B, C, 1, W)
    w_max: torch.Tensor

    @property
    def h(self) -> torch.Tensor:
        return self.h_avg + self.h_max

    @property
    def w(self) -> torch.Tensor:
        return self.w_avg + self.w_max


class AttentionMaps(NamedTuple):
    h: torch.Tensor  # (B, C, H, 1)
    w: torch.Tensor  # (B, C, 1, W)


def gca_descriptors(x: torch.Tensor) -> DirectionalDescriptors:
    return DirectionalDescriptors(
        numerics.directional_pool(x, "horizontal", "avg"),
        numerics.directional_pool(x, "horizontal", "max"),
        numerics.directional_pool(x, "vertical", "avg"),
        numerics.directional_pool(x, "vertical", "max"),
    )


def gca_apply(x: torch.Tensor, maps: AttentionMaps) -> torch.Tensor:
    return x * maps.h * maps.w


class GroupSharedBatchNorm(nn.Module):
    """Batch norm over ``groups`` stacked copies of a ``num_features`` wide layer.

    The affine scale/shift is shared by all groups while batch statistics and
    running statistics are tracked per (group, feature) so that one group's
    activations never influence another group's output.
    """

    def __init__(self, num_features: int, groups: int, momentum=numerics.BN_MOMENTUM,
                 eps=numerics.BN_EPS):
        super().__init__()
        self.num_features = num_features
        self.groups = groups
        self.momentum = momentum
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(num_features))
        self.bias = nn.Parameter(torch.zeros(num_features))
        self.register_buffer("running_mean", torch.zeros(groups * num_features))
        self.register_buffer("running_var", torch.ones(groups * num_features))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.batch_norm(
            x, self.running_mean, self.running_var,
            self.weight.repeat(self.groups), self.bias.repeat(self.groups),
            training=self.training, momentum=self.momentum, eps=self.eps,
        )


class GroupedCoordAttention(nn.Module):
    """Grouped Coordinate Attention.

    Channels are split into ``cfg.groups`` contiguous groups. Each group owns a
    1x1 reduce -> BN -> ReLU -> 1x1 expand -> sigmoid excitation that is shared
    between the horizontal and vertical descriptors. Grouped convolutions keep
    the groups independent, so concatenation in group order is implicit.
    """

    def __init__(self, channels: int, cfg: GCAConfig = GCAConfig()):
        super().__init__()
        self.channels = channels
        self.cfg = cfg
        g = cfg.groups
        self.group_channels = cfg.group_channels(channels)
        self.hidden = cfg.hidden(channels)
        self.reduce = nn.Conv2d(channels, g * self.hidden, 1, groups=g, bias=False)
        self.bn = GroupSharedBatchNorm(self.hidden, g)
        self.expand = nn.Conv2d(g * self.hidden, channels, 1, groups=g, bias=False)

    def _z(self, f: torch.Tensor) -> torch.Tensor:
        return numerics.sigmoid(self.expand(torch.relu(self.bn(self.reduce(f)))))

    def excite(self, f_h: torch.Tensor, f_w: torch.Tensor) -> AttentionMaps:
        # one excitation path, applied to each direction on its own; in train
        # mode each call normalises with that direction's batch statistics
        return AttentionMaps(self._z(f_h), self._z(f_w))

    def attention_maps(self, x: torch.Tensor) -> AttentionMaps:
        d = gca_descriptors(x)
        return self.excite(d.h, d.w)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {x.shape[1]}")
        return gca_apply(x, self.attention_maps(x))


def gca_excite(d: DirectionalDescriptors, module: GroupedCoordAttention) -> AttentionMaps:
    return module.excite(d.h, d.w)


class SEAttention(nn.Module):
    def __init__(self, channels: int, cfg: GCAConfig = GCAConfig()):
        super().__init__()
        self.hidden = max(channels // cfg.reduction, 1)
        self.fc1 = nn.Linear(channels, self.hidden, bias=False)
        self.fc2 = nn.Linear(self.hidden, channels, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        s = x.mean(dim=(2, 3))
        s = numerics.sigmoid(self.fc2(torch.relu(self.fc1(s))))
        return x * s[:, :, None, None]


class CBAMAttention(nn.Module):
    """Channel attention (shared MLP on avg and max pooled vectors) followed by
    spatial attention (7x7 conv over channel-wise mean and max)."""

    def __init__(self, channels: int, cfg: GCAConfig = GCAConfig()):
        super().__init__()
        self.hidden = max(channels // cfg.reduction, 1)
        self.fc1 = nn.Linear(channels, self.hidden, bias=False)
        self.fc2 = nn.Linear(self.hidden, channels, bias=False)
        k = CBAM_SPATIAL_KERNEL
        self.spatial = nn.Conv2d(2, 1, k, padding=k // 2, bias=False)

    def _mlp(self, v: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.relu(self.fc1(v)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        ca = numerics.sigmoid(self._mlp(x.mean(dim=(2, 3))) + self._mlp(x.amax(dim=(2, 3))))
        x = x * ca[:, :, None, None]
        pooled = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return x * numerics.sigmoid(self.spatial(pooled))


class CoordAttention(nn.Module):
    """Coordinate attention: both directional average descriptors go through
    one joint bottleneck, then split into per-direction expand convs."""

    def __init__(self, channels: int, cfg: GCAConfig = GCAConfig()):
        super().__init__()
        self.hidden = max(channels // cfg.reduction, COORDATT_MIN_HIDDEN)
        self.conv1 = nn.Conv2d(channels, self.hidden, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(self.hidden)
        self.conv_h = nn.Conv2d(self.hidden, channels, 1, bias=False)
        self.conv_w = nn.Conv2d(self.hidden, channels, 1, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[2], x.shape[3]
        x_h = numerics.directional_pool(x, "horizontal", "avg")
        x_w = numerics.directional_pool(x, "vertical", "avg").transpose(2, 3)
        y = torch.relu(self.bn1(self.conv1(torch.cat([x_h, x_w], dim=2))))
        y_h, y_w = torch.split(y, [h, w], dim=2)
        a_h = numerics.sigmoid(self.conv_h(y_h))
        a_w = numerics.sigmoid(self.conv_w(y_w.transpose(2, 3)))
        return x * a_h * a_w


_VARIANT_CLASSES = {
    "se": SEAttention,
    "cbam": CBAMAttention,
    "coordatt": CoordAttention,
    "gca": GroupedCoordAttention,
}


def check_variant(variant: str) -> str:
    v = variant.lower()
    if v not in ATTENTION_VARIANTS:
        raise ConfigError(
            f"unknown attention variant {variant!r}; valid: {', '.join(ATTENTION_VARIANTS)}"
        )
    return v


def build_attention(variant: str, channels: int, cfg: GCAConfig = GCAConfig()) -> nn.Module:
    v = check_variant(variant)
    if v == "none":
        return nn.Identity()
    return _VARIANT_CLASSES[v](channels, cfg)
