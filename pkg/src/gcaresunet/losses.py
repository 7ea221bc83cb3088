"""Dice + cross-entropy training objective and the hard Dice similarity metric."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, InputError, ShapeError


@dataclass(frozen=True)
class LossConfig:
    dice_weight: float = 0.5
    ce_weight: float = 0.5
    epsilon: float = 1e-5
    include_background_in_loss: bool = True
    include_background_in_metric: bool = False
    absent_class_dsc: float = 1.0

    def __post_init__(self):
        if self.dice_weight < 0 or self.ce_weight < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.dice_weight == 0 and self.ce_weight == 0:
            raise ConfigError("dice_weight and ce_weight cannot both be zero")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be > 0")


def _check_target(logits: torch.Tensor, target: torch.Tensor) -> int:
    if logits.dim() != 4:
        raise ShapeError(f"logits must be (B, K, H, W), got {tuple(logits.shape)}")
    k = logits.shape[1]
    if k < 2:
        raise ShapeError("need at least 2 classes")
    if tuple(target.shape) != (logits.shape[0],) + tuple(logits.shape[2:]):
        raise ShapeError(f"target shape {tuple(target.shape)} does not match logits {tuple(logits.shape)}")
    if target.numel() and (int(target.min()) < 0 or int(target.max()) >= k):
        raise InputError(f"target labels must lie in [0, {k}), got range "
                         f"[{int(target.min())}, {int(target.max())}]")
    return k


def ce_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel negative log-likelihood of the target class."""
    _check_target(logits, target)
    logp = torch.log_softmax(logits, dim=1)
    return -logp.gather(1, target.long().unsqueeze(1)).mean()


def dice_loss_from_probs(probs: torch.Tensor, target: torch.Tensor,
                         cfg: LossConfig = LossConfig()) -> torch.Tensor:
    k = _check_target(probs, target)
    onehot = F.one_hot(target.long(), k).permute(0, 3, 1, 2).to(probs.dtype)
    dims = (0, 2, 3)
    inter = (probs * onehot).sum(dims)
    denom = probs.sum(dims) + onehot.sum(dims)
    d = (2.0 * inter + cfg.epsilon) / (denom + cfg.epsilon)
    if not cfg.include_background_in_loss:
        d = d[1:]
    return 1.0 - d.mean()


def dice_loss(logits: torch.Tensor, target: torch.Tensor,
              cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """Soft Dice over softmax probabilities, pooled over the whole batch per class."""
    return dice_loss_from_probs(torch.softmax(logits, dim=1), target, cfg)


def total_loss(logits: torch.Tensor, target: torch.Tensor,
               cfg: LossConfig = LossConfig()) -> torch.Tensor:
    out = logits.new_zeros(())
    if cfg.dice_weight:
        out = out + cfg.dice_weight * dice_loss(logits, target, cfg)
    if cfg.ce_weight:
        out = out + cfg.ce_weight * ce_loss(logits, target)
    return out


class DSCResult(NamedTuple):
    per_class: List[float]  # one entry per class 0..K-1
    mean: float             # over classes 1..K-1 (or 0..K-1 with background)


def dsc_metric(pred, target, num_classes: int, include_background: bool = False,
               absent_value: float = 1.0) -> DSCResult:
    """Hard Dice 2|P∩G|/(|P|+|G|) per class; classes absent from both get ``absent_value``."""
    p = np.asarray(pred.cpu() if isinstance(pred, torch.Tensor) else pred).astype(np.int64).ravel()
    g = np.asarray(target.cpu() if isinstance(target, torch.Tensor) else target).astype(np.int64).ravel()
    if p.shape != g.shape:
        raise ShapeError("pred and target must have the same shape")
    p_count = np.bincount(p, minlength=num_classes)[:num_classes]
    g_count = np.bincount(g, minlength=num_classes)[:num_classes]
    both = np.bincount(p[p == g], minlength=num_classes)[:num_classes]
    scores = []
    for c in range(num_classes):
        denom = p_count[c] + g_count[c]
        scores.append(float(absent_value) if denom == 0 else 2.0 * both[c] / denom)
    chosen = scores if include_background else scores[1:]
    return DSCResult(scores, float(np.mean(chosen)))
