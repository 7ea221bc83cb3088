"""ResNet50 encoder with attention inside every bottleneck and no classifier head."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Tuple

import torch
import torch.nn as nn

from . import numerics
from .attention import GCAConfig, GroupSharedBatchNorm, build_attention, check_variant
from .errors import ConfigError, InputError

EXPANSION = 4
INPUT_MULTIPLE = 32


@dataclass(frozen=True)
class BackboneConfig:
    stage_depths: Tuple[int, ...] = (3, 4, 6, 3)
    stage_planes: Tuple[int, ...] = (64, 128, 256, 512)
    stem_channels: int = 64

    def __post_init__(self):
        object.__setattr__(self, "stage_depths", tuple(int(d) for d in self.stage_depths))
        object.__setattr__(self, "stage_planes", tuple(int(p) for p in self.stage_planes))
        if len(self.stage_depths) != 4 or len(self.stage_planes) != 4:
            raise ConfigError("stage_depths and stage_planes must both have 4 entries")
        if min(self.stage_depths) < 1 or min(self.stage_planes) < 1 or self.stem_channels < 1:
            raise ConfigError("stage depths, planes and stem width must be positive")

    @property
    def out_channels(self) -> Tuple[int, ...]:
        """Channel widths of feat1..feat5."""
        return (self.stem_channels,) + tuple(p * EXPANSION for p in self.stage_planes)


MINI_BACKBONE = BackboneConfig(stage_depths=(2, 2, 2, 2))


@dataclass(frozen=True)
class BottleneckSpec:
    in_channels: int
    planes: int
    stride: int = 1
    attention: str = "none"
    gca: GCAConfig = GCAConfig()

    @property
    def out_channels(self) -> int:
        return self.planes * EXPANSION

    @property
    def has_projection(self) -> bool:
        return self.stride != 1 or self.in_channels != self.out_channels


class FeaturePyramid(NamedTuple):
    feat1: torch.Tensor  # stride 2
    feat2: torch.Tensor  # stride 4
    feat3: torch.Tensor  # stride 8
    feat4: torch.Tensor  # stride 16
    feat5: torch.Tensor  # stride 32


class Bottleneck(nn.Module):
    """1x1 reduce -> 3x3 (strided) -> 1x1 expand -> BN -> attention, plus shortcut."""

    def __init__(self, spec: BottleneckSpec):
        super().__init__()
        self.spec = spec
        planes, out = spec.planes, spec.out_channels
        self.conv1 = nn.Conv2d(spec.in_channels, planes, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, 3, stride=spec.stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.conv3 = nn.Conv2d(planes, out, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(out)
        self.attn = build_attention(spec.attention, out, spec.gca)
        if spec.has_projection:
            self.downsample = nn.Sequential(
                nn.Conv2d(spec.in_channels, out, 1, stride=spec.stride, bias=False),
                nn.BatchNorm2d(out),
            )
        else:
            self.downsample = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = torch.relu(self.bn1(self.conv1(x)))
        out = torch.relu(self.bn2(self.conv2(out)))
        out = self.attn(self.bn3(self.conv3(out)))
        shortcut = x if self.downsample is None else self.downsample(x)
        assert out.shape == shortcut.shape, (out.shape, shortcut.shape)
        return torch.relu(out + shortcut)


def make_stage(in_channels: int, planes: int, depth: int, stride: int,
               attention: str, gca: GCAConfig) -> nn.Sequential:
    blocks = []
    for i in range(depth):
        spec = BottleneckSpec(in_channels, planes, stride if i == 0 else 1, attention, gca)
        blocks.append(Bottleneck(spec))
        in_channels = spec.out_channels
    return nn.Sequential(*blocks)


class ResNetBackbone(nn.Module):
    def __init__(self, cfg: BackboneConfig = BackboneConfig(), attention: str = "gca",
                 gca: GCAConfig = GCAConfig()):
        super().__init__()
        self.cfg = cfg
        self.attention = check_variant(attention)
        self.conv1 = nn.Conv2d(3, cfg.stem_channels, 7, stride=2, padding=3, bias=False)
        self.bn1 = nn.BatchNorm2d(cfg.stem_channels)
        in_ch = cfg.stem_channels
        for i, (depth, planes) in enumerate(zip(cfg.stage_depths, cfg.stage_planes)):
            stage = make_stage(in_ch, planes, depth, 1 if i == 0 else 2, self.attention, gca)
            self.add_module(f"layer{i + 1}", stage)
            in_ch = planes * EXPANSION

    def forward(self, x: torch.Tensor) -> FeaturePyramid:
        check_input(x)
        feat1 = torch.relu(self.bn1(self.conv1(x)))
        y = numerics.max_pool2d(feat1, 3, 2, 1)
        feat2 = self.layer1(y)
        feat3 = self.layer2(feat2)
        feat4 = self.layer3(feat3)
        feat5 = self.layer4(feat4)
        return FeaturePyramid(feat1, feat2, feat3, feat4, feat5)


def check_input(x: torch.Tensor) -> None:
    if x.dim() != 4 or x.shape[1] != 3:
        raise InputError(f"expected a (B, 3, H, W) image batch, got shape {tuple(x.shape)}")
    h, w = x.shape[2], x.shape[3]
    if h % INPUT_MULTIPLE or w % INPUT_MULTIPLE:
        ph = -h % INPUT_MULTIPLE
        pw = -w % INPUT_MULTIPLE
        raise InputError(
            f"input height and width must be divisible by {INPUT_MULTIPLE}; got {h}x{w}, "
            f"pad by {ph} rows and {pw} columns (to {h + ph}x{w + pw})"
        )


def he_init_(module: nn.Module, seed: int) -> nn.Module:
    """He-normal (fan-in) init for conv/linear weights, zero biases, identity BN.

    Deterministic given ``seed``; modules are visited in registration order.
    """
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu", generator=gen)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, (nn.BatchNorm2d, GroupSharedBatchNorm)):
                m.weight.fill_(1.0)
                m.bias.zero_()
                m.running_mean.zero_()
                m.running_var.fill_(1.0)
    return module


def init_backbone(cfg: BackboneConfig = BackboneConfig(), seed: int = 0, attention: str = "gca",
                  gca: GCAConfig = GCAConfig()) -> ResNetBackbone:
    return he_init_(ResNetBackbone(cfg, attention, gca), seed)
