"""Adam training loop, evaluation, and the attention ablation runner."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn

from . import profiler
from .attention import check_variant
from .checkpoint import load_model, save_checkpoint
from .data import Dataset, batches
from .errors import ConfigError, NumericError
from .losses import LossConfig, dsc_metric, total_loss
from .model import GCAResUNet, ModelConfig, build_dataclass, build_model, num_parameters

log = logging.getLogger(__name__)

TEST_MODE_ENV = "GCARESUNET_TEST_MODE"
FULL_BUDGET_EPOCHS = 300
BEST_CKPT = "best.gcar"
LAST_CKPT = "last.gcar"
HISTORY_FILE = "history.jsonl"


def test_mode() -> bool:
    return os.environ.get(TEST_MODE_ENV, "") not in ("", "0")


def configure_determinism(force: bool = False) -> None:
    """Single-thread, deterministic kernels. Applied in test mode or when forced."""
    if force or test_mode():
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


class NonFiniteLossError(NumericError):
    def __init__(self, msg: str, history: "RunHistory"):
        super().__init__(msg)
        self.history = history


# --- Adam --------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, torch.Tensor] = field(default_factory=dict)
    v: Dict[str, torch.Tensor] = field(default_factory=dict)


@torch.no_grad()
def adam_step(params: Dict[str, torch.Tensor], grads: Dict[str, Optional[torch.Tensor]],
              st: AdamState):
    """Bias-corrected Adam update applied in place. Returns ``(params, st)``.

    Parameters whose gradient is ``None`` are treated as having zero gradient.
    """
    for name, g in grads.items():
        if g is not None and not torch.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    st.t += 1
    bc1 = 1.0 - st.beta1 ** st.t
    bc2 = 1.0 - st.beta2 ** st.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = torch.zeros_like(p)
        m = st.m.get(name)
        if m is None:
            m = st.m[name] = torch.zeros_like(p)
            st.v[name] = torch.zeros_like(p)
        v = st.v[name]
        m.mul_(st.beta1).add_(g, alpha=1.0 - st.beta1)
        v.mul_(st.beta2).addcmul_(g, g, value=1.0 - st.beta2)
        denom = (v / bc2).sqrt_().add_(st.eps)
        p.sub_(st.lr * (m / bc1) / denom)
    return params, st


# --- configs and history -----------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    epochs: int = 1
    batch_size: int = 8
    lr: float = 1e-4
    seed: int = 0
    eval_every: int = 1
    eval_split: str = "val"
    checkpoint_dir: Optional[str] = None
    clip_grad_norm: Optional[float] = None
    stop_at_dsc: Optional[float] = None  # end early once the eval mean reaches this

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "loss": dict(self.loss.__dict__),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "seed": self.seed,
            "eval_every": self.eval_every,
            "eval_split": self.eval_split,
            "checkpoint_dir": self.checkpoint_dir,
            "clip_grad_norm": self.clip_grad_norm,
            "stop_at_dsc": self.stop_at_dsc,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "model" in d:
            d["model"] = ModelConfig.from_dict(d["model"])
        if "loss" in d:
            d["loss"] = build_dataclass(LossConfig, d["loss"], "train.loss")
        return build_dataclass(cls, d, "train")


@dataclass
class RunHistory:
    records: List[dict] = field(default_factory=list)

    def append(self, rec: dict) -> None:
        if rec.get("epoch") is not None:
            last = [r["epoch"] for r in self.records if r.get("epoch") is not None]
            if last and rec["epoch"] < last[-1]:
                raise ValueError("epoch numbering must be monotone")
        self.records.append(rec)

    @property
    def epochs(self) -> List[dict]:
        return [r for r in self.records if r.get("event") == "epoch"]

    @property
    def losses(self) -> List[float]:
        return [r["train_loss"] for r in self.epochs]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    @classmethod
    def from_jsonl(cls, text: str) -> "RunHistory":
        return cls([json.loads(line) for line in text.splitlines() if line.strip()])

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


@dataclass
class TrainResult:
    history: RunHistory
    model: GCAResUNet
    best_checkpoint: Optional[Path] = None
    last_checkpoint: Optional[Path] = None


# --- evaluation --------------------------------------------------------------

@dataclass
class EvalResult:
    per_class: List[float]          # mean over samples, classes 0..K-1
    mean: float                     # mean over samples of the per-sample foreground mean
    per_sample: Dict[str, List[float]]

    def table_rows(self) -> List[List[str]]:
        rows = [["class", "dsc"]]
        rows += [[str(c), f"{d:.6f}"] for c, d in enumerate(self.per_class)]
        rows.append(["mean", f"{self.mean:.6f}"])
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(self.table_rows())
        return buf.getvalue()

    def to_text(self) -> str:
        return format_table(self.table_rows())


@torch.no_grad()
def evaluate(model: Union[GCAResUNet, str, os.PathLike], dataset: Dataset, split: str = "test",
             batch_size: int = 8, loss_cfg: LossConfig = LossConfig()) -> EvalResult:
    if not isinstance(model, nn.Module):
        model = load_model(model)
    k = model.cfg.num_classes
    if k != dataset.num_classes:
        raise ConfigError(f"model predicts {k} classes but dataset has {dataset.num_classes}")
    was_training = model.training
    model.eval()
    per_sample: Dict[str, List[float]] = {}
    means = []
    try:
        for b in batches(dataset, split, batch_size, seed=0, epoch=0,
                         target_size=model.cfg.input_size, shuffle=False):
            pred = model(b.images).argmax(dim=1)
            for i, sid in enumerate(b.ids):
                r = dsc_metric(pred[i], b.masks[i], k, loss_cfg.include_background_in_metric,
                               loss_cfg.absent_class_dsc)
                per_sample[sid] = r.per_class
                means.append(r.mean)
    finally:
        model.train(was_training)
    per_class = np.mean(np.array(list(per_sample.values())), axis=0).tolist()
    return EvalResult(per_class, float(np.mean(means)), per_sample)


# --- training ----------------------------------------------------------------

def _eval_split(cfg: TrainConfig, dataset: Dataset) -> str:
    if cfg.eval_split in dataset.manifest.splits and dataset.ids(cfg.eval_split):
        return cfg.eval_split
    return "train"


def train(cfg: TrainConfig, dataset: Dataset) -> TrainResult:
    if cfg.model.num_classes != dataset.num_classes:
        raise ConfigError(
            f"model has {cfg.model.num_classes} classes, dataset has {dataset.num_classes}"
        )
    configure_determinism()
    model = build_model(cfg.model)
    model.train()
    params = dict(model.named_parameters())
    state = AdamState(lr=cfg.lr)
    history = RunHistory()
    out = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    best_path = last_path = None
    best = -math.inf
    val_split = _eval_split(cfg, dataset)

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        batch_losses = []
        for bi, b in enumerate(batches(dataset, "train", cfg.batch_size, cfg.seed, epoch,
                                       target_size=cfg.model.input_size)):
            model.zero_grad(set_to_none=True)
            loss = total_loss(model(b.images), b.masks, cfg.loss)
            value = float(loss.item())
            if not math.isfinite(value):
                history.append({"event": "abort", "epoch": epoch, "batch": bi,
                                "reason": f"non-finite loss {value}"})
                if out is not None:
                    history.save(out / HISTORY_FILE)
                raise NonFiniteLossError(f"non-finite loss at epoch {epoch}, batch {bi}", history)
            loss.backward()
            if cfg.clip_grad_norm is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_grad_norm)
            adam_step(params, {n: p.grad for n, p in params.items()}, state)
            batch_losses.append(value)
        rec = {"event": "epoch", "epoch": epoch, "train_loss": float(np.mean(batch_losses)),
               "batch_losses": batch_losses}
        if (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
            ev = evaluate(model, dataset, val_split, cfg.batch_size, cfg.loss)
            rec.update({"val_split": val_split, "val_dsc": ev.per_class, "val_mean": ev.mean})
            if out is not None and ev.mean > best:
                best = ev.mean
                best_path = save_checkpoint(model, cfg.model, out / BEST_CKPT)
        rec["wall_time"] = time.perf_counter() - t0
        history.append(rec)
        log.info("epoch %d loss %.5f val %s", epoch, rec["train_loss"], rec.get("val_mean"))
        if cfg.stop_at_dsc is not None and rec.get("val_mean", -math.inf) >= cfg.stop_at_dsc:
            break
    if out is not None:
        last_path = save_checkpoint(model, cfg.model, out / LAST_CKPT)
        history.save(out / HISTORY_FILE)
    return TrainResult(history, model, best_path, last_path)


# --- ablation ----------------------------------------------------------------

@dataclass
class AblationRow:
    variant: str
    dsc: float
    class_dsc: List[float]
    params: int
    param_delta: int
    macs: int
    wall_time: float
    epochs: int
    note: str = ""


@dataclass
class AblationTable:
    rows: List[AblationRow]
    num_classes: int

    def header(self) -> List[str]:
        return (["variant", "DSC"] + [f"class_{c}" for c in range(1, self.num_classes)]
                + ["params", "param_delta", "MACs", "wall_time_s", "epochs", "note"])

    def as_rows(self) -> List[List[str]]:
        out = [self.header()]
        for r in self.rows:
            out.append([r.variant, f"{100 * r.dsc:.2f}"]
                       + [f"{100 * d:.2f}" for d in r.class_dsc[1:]]
                       + [str(r.params), str(r.param_delta), str(r.macs),
                          f"{r.wall_time:.1f}", str(r.epochs), r.note])
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(self.as_rows())
        return buf.getvalue()

    def to_text(self) -> str:
        return format_table(self.as_rows())


def ablate(base: TrainConfig, variants: Sequence[str], dataset: Dataset,
           out_dir: Optional[Union[str, os.PathLike]] = None) -> AblationTable:
    """Train one model per attention variant; everything but the tag is identical."""
    if len(variants) < 2:
        raise ConfigError("ablation needs at least 2 variants")
    variants = [check_variant(v) for v in variants]
    baseline_params = num_parameters(GCAResUNet(base.model.replace(attention="none")))
    note = "" if base.epochs >= FULL_BUDGET_EPOCHS else f"reduced budget ({base.epochs} epochs)"
    rows = []
    for i, v in enumerate(variants):
        mcfg = base.model.replace(attention=v)
        ckdir = None if out_dir is None else str(Path(out_dir) / f"{i:02d}_{v}")
        cfg = dataclasses.replace(base, model=mcfg, checkpoint_dir=ckdir)
        t0 = time.perf_counter()
        result = train(cfg, dataset)
        wall = time.perf_counter() - t0
        ev = evaluate(result.model, dataset, _eval_split(cfg, dataset), cfg.batch_size, cfg.loss)
        n = num_parameters(result.model)
        rows.append(AblationRow(
            variant=v, dsc=ev.mean, class_dsc=ev.per_class, params=n,
            param_delta=n - baseline_params,
            macs=profiler.count_macs(mcfg, mcfg.input_size).total_macs,
            wall_time=wall, epochs=cfg.epochs, note=note,
        ))
    table = AblationTable(rows, base.model.num_classes)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "ablation.csv").write_text(table.to_csv(), encoding="utf-8")
        (Path(out_dir) / "ablation.txt").write_text(table.to_text(), encoding="utf-8")
    return table


def format_table(rows: List[List[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    return "\n".join(lines) + "\n"
