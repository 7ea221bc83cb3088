"""GCA-ResUNet: ResNet50 U-Net with Grouped Coordinate Attention."""
from .attention import GCAConfig, GroupedCoordAttention, build_attention
from .backbone import BackboneConfig, ResNetBackbone
from .checkpoint import load_checkpoint, load_model, save_checkpoint
from .decoder import DecoderConfig
from .losses import LossConfig, ce_loss, dice_loss, dsc_metric, total_loss
from .model import GCAResUNet, ModelConfig, build_model, mini_config

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig", "DecoderConfig", "GCAConfig", "GCAResUNet", "GroupedCoordAttention",
    "LossConfig", "ModelConfig", "ResNetBackbone", "build_attention", "build_model",
    "ce_loss", "dice_loss", "dsc_metric", "load_checkpoint", "load_model", "mini_config",
    "save_checkpoint", "total_loss",
]
