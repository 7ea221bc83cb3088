"""Command-line entry point: ``gcaresunet <command> [flags]``.

Exit codes: 0 ok, 2 config/usage, 3 I/O, 4 numeric failure, 5 checkpoint integrity.
"""
from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch
from filelock import FileLock, Timeout

from . import profiler
from .attention import ATTENTION_VARIANTS
from .backbone import MINI_BACKBONE
from .errors import CheckpointError, ConfigError, DatasetError, InputError, NumericError
from .model import GCAResUNet, num_parameters

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_CHECKPOINT = 5

CONFIG_KEYS = ("model", "gca", "loss", "train")
TRAIN_KEYS = ("epochs", "batch_size", "lr", "seed", "eval_every", "eval_split", "clip_grad_norm",
              "stop_at_dsc")

log = logging.getLogger("gcaresunet")


# --- config handling ---------------------------------------------------------

def load_config(path: Optional[str]):
    """Parse a JSON config file into a TrainConfig (defaults when ``path`` is None)."""
    from .training import TrainConfig

    doc = {}
    if path:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
    unknown = sorted(set(doc) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}; "
                          f"allowed: {', '.join(CONFIG_KEYS)}")
    model_doc = dict(doc.get("model", {}))
    if "gca" in doc:
        model_doc["gca"] = doc["gca"]
    train_doc = dict(doc.get("train", {}))
    bad = sorted(set(train_doc) - set(TRAIN_KEYS))
    if bad:
        raise ConfigError(f"unknown key(s) in train: {', '.join(bad)}")
    train_doc["model"] = model_doc
    if "loss" in doc:
        train_doc["loss"] = doc["loss"]
    return TrainConfig.from_dict(train_doc)


def config_document(cfg) -> dict:
    """Inverse of :func:`load_config`."""
    model = cfg.model.to_dict()
    gca = model.pop("gca")
    train = {k: getattr(cfg, k) for k in TRAIN_KEYS}
    return {"model": model, "gca": gca, "loss": dataclasses.asdict(cfg.loss), "train": train}


def apply_overrides(cfg, args):
    model = cfg.model
    if getattr(args, "mini", False):
        model = model.replace(backbone=MINI_BACKBONE)
    if getattr(args, "attn", None):
        model = model.replace(attention=args.attn)
    if getattr(args, "classes", None):
        model = model.replace(decoder=dataclasses.replace(model.decoder, num_classes=args.classes))
    if getattr(args, "input_size", None):
        model = model.replace(input_size=args.input_size)
    if getattr(args, "seed", None) is not None:
        model = model.replace(seed=args.seed)
    changes = {"model": model}
    for key in ("epochs", "batch_size", "lr", "seed"):
        v = getattr(args, key, None)
        if v is not None:
            changes[key] = v
    try:
        return dataclasses.replace(cfg, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


@contextlib.contextmanager
def locked(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(out_dir / ".lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout as exc:
        raise OSError(f"output directory {out_dir} is in use by another command") from exc
    try:
        yield
    finally:
        lock.release()


# --- plots -------------------------------------------------------------------

def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_losses(history, path: Path) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([r["epoch"] for r in history.epochs], history.losses, label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("Dice + CE loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_ablation(table, path: Path) -> None:
    plt = _plt()
    names = [r.variant for r in table.rows]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 4))
    a1.bar(names, [100 * r.dsc for r in table.rows])
    a1.set_ylabel("mean foreground DSC (%)")
    a2.bar(names, [r.param_delta for r in table.rows])
    a2.set_ylabel("parameter delta vs none")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


PALETTE = np.array([
    [0, 0, 0], [230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200],
    [245, 130, 48], [145, 30, 180], [70, 240, 240], [240, 50, 230], [210, 245, 60],
], dtype=np.float32)


def overlay(image: np.ndarray, labels: np.ndarray, alpha: float = 0.45) -> np.ndarray:
    gray = np.repeat((image * 255.0)[..., None], 3, axis=2)
    colors = PALETTE[labels % len(PALETTE)]
    fg = (labels > 0)[..., None]
    out = np.where(fg, (1 - alpha) * gray + alpha * colors, gray)
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


# --- commands ----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    from .data import gen_synthetic

    if not 2 <= args.classes <= 10:
        raise ConfigError(f"--classes must be in [2, 10] (got {args.classes})")
    if args.size < 64:
        raise ConfigError(f"--size must be >= 64 (got {args.size})")
    out = Path(args.out)
    with locked(out):
        m = gen_synthetic(args.seed, args.n, args.size, args.classes, out,
                          args.val_frac, args.test_frac)
    print(f"wrote {len(m.samples)} samples to {out}")
    print(f"digest {m.digest}")
    return EXIT_OK


def _summary(cfg) -> dict:
    return {"params": num_parameters(GCAResUNet(cfg.model)), "attention": cfg.model.attention,
            "config_digest": f"{cfg.model.digest():016x}"}


def cmd_train(args) -> int:
    from .data import load_dataset
    from .training import NonFiniteLossError, train

    cfg = apply_overrides(load_config(args.config), args)
    out = Path(args.out)
    with locked(out):
        ds = load_dataset(args.data)
        cfg = dataclasses.replace(cfg, checkpoint_dir=str(out))
        (out / "config.json").write_text(json.dumps(config_document(cfg), indent=2) + "\n")
        summary = _summary(cfg)
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        print(f"attention {summary['attention']}  params {summary['params']}")
        try:
            result = train(cfg, ds)
        except NonFiniteLossError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        plot_losses(result.history, out / "loss_curve.png")
    last = result.history.epochs[-1]
    print(f"final train loss {last['train_loss']:.6f}")
    print(f"final DSC ({last['val_split']}) {last['val_mean']:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .checkpoint import load_model
    from .data import load_dataset
    from .training import evaluate

    model = load_model(args.ckpt)
    ds = load_dataset(args.data)
    res = evaluate(model, ds, args.split)
    print(res.to_text(), end="")
    print(res.to_csv(), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"eval_{args.split}.csv").write_text(res.to_csv())
        (out / f"eval_{args.split}.txt").write_text(res.to_text())
    print(f"mean DSC {res.mean:.4f}")
    return EXIT_OK


@torch.no_grad()
def cmd_predict(args) -> int:
    from PIL import Image

    from .checkpoint import load_model
    from .data import Sample, nearest_indices, preprocess

    model = load_model(args.ckpt).eval()
    with Image.open(args.image) as im:
        img = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    h, w = img.shape
    size = model.cfg.input_size
    s = Sample(img[None], np.zeros((h, w), np.uint8), "predict")
    x = preprocess(s, size).image if (h, w) != (size, size) else s.image
    logits = model(torch.from_numpy(np.ascontiguousarray(x))[None])
    labels = logits.argmax(1)[0].numpy().astype(np.uint8)
    labels = labels[nearest_indices(size, h)[:, None], nearest_indices(size, w)[None, :]]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(labels).save(out)
    ov = out.with_name(out.stem + "_overlay.png")
    Image.fromarray(overlay(img, labels)).save(ov)
    print(f"mask {out} ({h}x{w}), overlay {ov}")
    return EXIT_OK


def _parse_variants(text: str) -> List[str]:
    vs = [v.strip().lower() for v in text.split(",") if v.strip()]
    bad = [v for v in vs if v not in ATTENTION_VARIANTS]
    if bad:
        raise ConfigError(f"unknown variant(s) {', '.join(bad)}; valid tags: "
                          f"{', '.join(ATTENTION_VARIANTS)}")
    if len(vs) < 2:
        raise ConfigError("--variants needs at least 2 entries")
    return vs


def cmd_ablate(args) -> int:
    from .data import load_dataset
    from .training import ablate

    variants = _parse_variants(args.variants)
    cfg = apply_overrides(load_config(args.config), args)
    out = Path(args.out)
    with locked(out):
        ds = load_dataset(args.data)
        (out / "config.json").write_text(json.dumps(config_document(cfg), indent=2) + "\n")
        table = ablate(cfg, variants, ds, out)
        plot_ablation(table, out / "ablation.png")
    print(table.to_text(), end="")
    return EXIT_OK


def cmd_profile(args) -> int:
    cfg = apply_overrides(load_config(args.config), args).model
    size = args.input or cfg.input_size
    if size % 32:
        raise ConfigError("--input must be divisible by 32")
    rep = profiler.count_macs(cfg, size)
    print(f"attention variant: {cfg.attention}  input: {size}x{size}")
    print(rep.summary(), end="")
    _, deltas = profiler.compare_attention(cfg, ATTENTION_VARIANTS, size)
    rows = profiler.delta_table(deltas)
    from .training import format_table
    print(format_table(rows), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "profile.csv").write_text(rep.to_csv())
        import csv
        with open(out / "attention_deltas.csv", "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
    return EXIT_OK


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gcaresunet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=16)
    g.add_argument("--size", type=int, default=224)
    g.add_argument("--classes", type=int, default=9)
    g.add_argument("--val-frac", type=float, default=0.1)
    g.add_argument("--test-frac", type=float, default=0.1)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    def model_flags(sp, with_train=True):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--mini", action="store_true", help="depths [2,2,2,2] backbone")
        sp.add_argument("--classes", type=int)
        sp.add_argument("--input-size", type=int)
        if with_train:
            sp.add_argument("--epochs", type=int)
            sp.add_argument("--batch-size", type=int)
            sp.add_argument("--lr", type=float)
            sp.add_argument("--seed", type=int)

    t = sub.add_parser("train", help="train a model")
    model_flags(t)
    t.add_argument("--attn", choices=ATTENTION_VARIANTS)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="per-class DSC of a checkpoint on a split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="segment one PNG image")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--image", required=True)
    pr.add_argument("--out", required=True, help="output mask PNG path")
    pr.set_defaults(func=cmd_predict)

    a = sub.add_parser("ablate", help="train and compare attention variants")
    model_flags(a)
    a.add_argument("--data", required=True)
    a.add_argument("--variants", required=True, help="comma separated, e.g. none,se,gca")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)

    pf = sub.add_parser("profile", help="analytic parameter / MAC report")
    model_flags(pf, with_train=False)
    pf.add_argument("--attn", choices=ATTENTION_VARIANTS)
    pf.add_argument("--input", type=int)
    pf.add_argument("--out")
    pf.set_defaults(func=cmd_profile)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error ({exc.code}): {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
