"""U-Net decoder: bilinear upsample + skip concat + two 3x3 conv/ReLU per level."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import torch
import torch.nn as nn

from . import numerics
from .backbone import FeaturePyramid
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class DecoderConfig:
    # up-block widths, finest (up1) to coarsest (up4)
    out_filters: Tuple[int, ...] = (64, 128, 256, 512)
    num_classes: int = 9
    refine_channels: int = 64

    def __post_init__(self):
        object.__setattr__(self, "out_filters", tuple(int(f) for f in self.out_filters))
        if len(self.out_filters) != 4 or min(self.out_filters) < 1:
            raise ConfigError("out_filters must hold 4 positive widths")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")

    def in_filters(self, pyramid_channels: Tuple[int, ...]) -> Tuple[int, ...]:
        """Concatenated input width of up1..up4 given feat1..feat5 widths."""
        f = self.out_filters
        below = f[1:] + (pyramid_channels[4],)
        return tuple(pyramid_channels[i] + below[i] for i in range(4))


class UnetUp(nn.Module):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)

    def forward(self, low: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        up = numerics.bilinear_upsample(low, 2)
        if up.shape[2:] != skip.shape[2:]:
            raise ShapeError(
                f"upsampled map {tuple(up.shape[2:])} does not match skip {tuple(skip.shape[2:])}"
            )
        x = torch.cat([skip, up], dim=1)
        x = torch.relu(self.conv1(x))
        return torch.relu(self.conv2(x))


class Decoder(nn.Module):
    def __init__(self, cfg: DecoderConfig, pyramid_channels: Tuple[int, ...]):
        super().__init__()
        self.cfg = cfg
        self.pyramid_channels = tuple(pyramid_channels)
        ins = cfg.in_filters(self.pyramid_channels)
        self.up1 = UnetUp(ins[0], cfg.out_filters[0])
        self.up2 = UnetUp(ins[1], cfg.out_filters[1])
        self.up3 = UnetUp(ins[2], cfg.out_filters[2])
        self.up4 = UnetUp(ins[3], cfg.out_filters[3])
        self.refine = nn.Conv2d(cfg.out_filters[0], cfg.refine_channels, 3, padding=1)
        self.head = nn.Conv2d(cfg.refine_channels, cfg.num_classes, 1)

    def forward(self, p: FeaturePyramid) -> torch.Tensor:
        for k, (f, c) in enumerate(zip(p, self.pyramid_channels), start=1):
            if f.shape[1] != c:
                raise ShapeError(f"feat{k} has {f.shape[1]} channels, expected {c}")
        x = self.up4(p.feat5, p.feat4)
        x = self.up3(x, p.feat3)
        x = self.up2(x, p.feat2)
        x = self.up1(x, p.feat1)
        x = torch.relu(self.refine(numerics.bilinear_upsample(x, 2)))
        return self.head(x)
