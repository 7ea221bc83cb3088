"""GCA-ResUNet assembly and model configuration."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any, Dict

import torch
import torch.nn as nn

from ._digest import fnv1a64
from .attention import GCAConfig, check_variant
from .backbone import INPUT_MULTIPLE, MINI_BACKBONE, BackboneConfig, ResNetBackbone, he_init_
from .decoder import Decoder, DecoderConfig
from .errors import ConfigError, InputError


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    attention: str = "gca"
    gca: GCAConfig = field(default_factory=GCAConfig)
    input_size: int = 224
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "attention", check_variant(self.attention))
        if self.input_size < INPUT_MULTIPLE or self.input_size % INPUT_MULTIPLE:
            raise ConfigError(f"input_size must be a positive multiple of {INPUT_MULTIPLE}")

    @property
    def num_classes(self) -> int:
        return self.decoder.num_classes

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        d = dataclasses.asdict(self)
        d["backbone"]["stage_depths"] = list(self.backbone.stage_depths)
        d["backbone"]["stage_planes"] = list(self.backbone.stage_planes)
        d["decoder"]["out_filters"] = list(self.decoder.out_filters)
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ModelConfig":
        d = dict(d)
        kw: Dict[str, Any] = {}
        for key, sub in (("backbone", BackboneConfig), ("decoder", DecoderConfig), ("gca", GCAConfig)):
            if key in d:
                kw[key] = build_dataclass(sub, d.pop(key), f"model.{key}")
        kw.update(d)
        return build_dataclass(cls, kw, "model")

    def canonical_text(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> int:
        return fnv1a64(self.canonical_text().encode("utf-8"))


def build_dataclass(cls, values: Any, where: str):
    """Instantiate ``cls`` from a mapping, rejecting unknown keys."""
    if isinstance(values, cls):
        return values
    if not isinstance(values, dict):
        raise ConfigError(f"{where} must be an object, got {type(values).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def mini_config(num_classes: int = 4, input_size: int = 64, attention: str = "gca",
                seed: int = 0, gca: GCAConfig = GCAConfig()) -> ModelConfig:
    return ModelConfig(
        backbone=MINI_BACKBONE,
        decoder=DecoderConfig(num_classes=num_classes),
        attention=attention,
        gca=gca,
        input_size=input_size,
        seed=seed,
    )


class GCAResUNet(nn.Module):
    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        self.backbone = ResNetBackbone(cfg.backbone, cfg.attention, cfg.gca)
        self.decoder = Decoder(cfg.decoder, cfg.backbone.out_channels)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        """Raw class logits (B, K, H, W). Single-channel images are replicated to 3."""
        if image.dim() != 4:
            raise InputError(f"expected a (B, C, H, W) batch, got shape {tuple(image.shape)}")
        if image.shape[1] == 1:
            image = image.expand(-1, 3, -1, -1)
        return self.decoder(self.backbone(image))


def build_model(cfg: ModelConfig = ModelConfig()) -> GCAResUNet:
    return he_init_(GCAResUNet(cfg), cfg.seed)


def num_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
