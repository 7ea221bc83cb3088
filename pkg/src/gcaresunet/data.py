"""Synthetic multi-organ dataset, on-disk PNG layout, preprocessing and batching.

Directory layout::

    <root>/manifest.json
    <root>/images/<id>.png   8-bit grayscale, intensity / 255
    <root>/masks/<id>.png    8-bit, raw class indices

The manifest digest is FNV-1a 64 over the lines ``"<id>\\t<sha256 image>\\t<sha256 mask>\\n"``
for all samples sorted by id.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import torch
from PIL import Image
from scipy.ndimage import gaussian_filter

from . import numerics
from ._digest import fnv1a64_hex
from .errors import (ConfigError, DatasetDigestError, DatasetError, LabelRangeError,
                     MissingFileError)

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "gcaresunet-dataset"
MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")

NOISE_SIGMA = 0.05
BLUR_SIGMA = 1.0
BACKGROUND_LEVEL = 0.08


@dataclass
class Sample:
    image: np.ndarray  # (1, S, S) float32 in [0, 1]
    mask: np.ndarray   # (S, S) integer class indices
    id: str


@dataclass
class DatasetManifest:
    num_classes: int
    size: int
    samples: List[Dict[str, str]]
    splits: Dict[str, List[str]]
    digest: str = ""
    seed: Optional[int] = None
    version: int = MANIFEST_VERSION

    def to_json(self) -> str:
        doc = {
            "format": MANIFEST_FORMAT,
            "version": self.version,
            "num_classes": self.num_classes,
            "size": self.size,
            "seed": self.seed,
            "samples": self.samples,
            "splits": self.splits,
            "digest": self.digest,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        doc = json.loads(text)
        if doc.get("format") != MANIFEST_FORMAT:
            raise DatasetError("manifest has wrong format tag")
        if doc.get("version") != MANIFEST_VERSION:
            raise DatasetError(f"unsupported manifest version {doc.get('version')}")
        return cls(
            num_classes=int(doc["num_classes"]),
            size=int(doc["size"]),
            samples=list(doc["samples"]),
            splits={k: list(v) for k, v in doc["splits"].items()},
            digest=doc["digest"],
            seed=doc.get("seed"),
        )

    @property
    def ids(self) -> List[str]:
        return [s["id"] for s in self.samples]


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def content_digest(root: Path, samples: Sequence[Dict[str, str]]) -> str:
    lines = []
    for rec in sorted(samples, key=lambda r: r["id"]):
        img, msk = root / rec["image"], root / rec["mask"]
        for p in (img, msk):
            if not p.is_file():
                raise MissingFileError(f"dataset file missing: {p}")
        lines.append(f"{rec['id']}\t{_sha256_file(img)}\t{_sha256_file(msk)}\n")
    return fnv1a64_hex("".join(lines).encode("utf-8"))


# --- generator -------------------------------------------------------------

def _blob_mask(rng: np.random.Generator, size: int, scale: float) -> np.ndarray:
    """One ellipse or rounded rectangle with random pose, as a boolean (S, S) mask."""
    a = rng.uniform(0.6, 1.0) * scale
    b = a * rng.uniform(0.55, 1.0)
    theta = rng.uniform(0.0, math.pi)
    margin = a + 2.0
    cy = rng.uniform(margin, size - 1 - margin)
    cx = rng.uniform(margin, size - 1 - margin)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    u = dx * math.cos(theta) + dy * math.sin(theta)
    v = -dx * math.sin(theta) + dy * math.cos(theta)
    if rng.uniform() < 0.5:
        return (u / a) ** 2 + (v / b) ** 2 <= 1.0
    radius = 0.35 * min(a, b)
    qu = np.maximum(np.abs(u) - (a - radius), 0.0)
    qv = np.maximum(np.abs(v) - (b - radius), 0.0)
    return qu ** 2 + qv ** 2 <= radius ** 2


def _class_levels(num_classes: int) -> np.ndarray:
    n_fg = num_classes - 1
    return 0.3 + 0.65 * np.arange(n_fg) / max(n_fg - 1, 1)


def synth_sample(seed: int, index: int, size: int, num_classes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Return (image uint8 (S, S), mask uint8 (S, S)) for one sample."""
    rng = np.random.default_rng([seed, index])
    mask = np.zeros((size, size), dtype=np.uint8)
    scale = size * 0.3 / math.sqrt(num_classes)
    for c in range(1, num_classes):
        for _attempt in range(50):
            blob = _blob_mask(rng, size, scale)
            # keep every earlier class mostly visible; later classes win overlaps
            ok = True
            for prev in range(1, c):
                visible = mask == prev
                if visible.sum() and (blob & visible).sum() > 0.4 * visible.sum():
                    ok = False
                    break
            if ok:
                break
        mask[blob] = c
    levels = _class_levels(num_classes)
    jitter = 0.2 * (levels[1] - levels[0]) if num_classes > 2 else 0.05
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    gy, gx = rng.uniform(-0.05, 0.05, size=2)
    img = BACKGROUND_LEVEL + gy * yy + gx * xx
    for c in range(1, num_classes):
        img = np.where(mask == c, levels[c - 1] + rng.uniform(-jitter, jitter), img)
    img = gaussian_filter(img, BLUR_SIGMA, mode="nearest")
    img = img + rng.normal(0.0, NOISE_SIGMA, size=img.shape)
    img8 = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    return img8, mask


def _split_ids(ids: List[str], seed: int, val_fraction: float, test_fraction: float):
    n = len(ids)
    order = np.random.default_rng([seed, 0x5EED]).permutation(n)
    n_val = int(round(n * val_fraction))
    n_test = int(round(n * test_fraction))
    if n_val + n_test >= n:
        raise ConfigError("val_fraction + test_fraction leaves no room for a train split")
    shuffled = [ids[i] for i in order]
    val = sorted(shuffled[:n_val])
    test = sorted(shuffled[n_val:n_val + n_test])
    train = sorted(shuffled[n_val + n_test:])
    return {"train": train, "val": val, "test": test}


def gen_synthetic(seed: int, n_samples: int, size: int, num_classes: int, out_dir,
                  val_fraction: float = 0.1, test_fraction: float = 0.1) -> DatasetManifest:
    if not 2 <= num_classes <= 10:
        raise ConfigError(f"num_classes must be in [2, 10], got {num_classes}")
    if size < 64:
        raise ConfigError(f"size must be >= 64, got {size}")
    if n_samples < 1:
        raise ConfigError(f"n_samples must be >= 1, got {n_samples}")
    if not (0 <= val_fraction <= 1 and 0 <= test_fraction <= 1):
        raise ConfigError("split fractions must lie in [0, 1]")
    splits = _split_ids([f"s{i:05d}" for i in range(n_samples)], seed, val_fraction, test_fraction)
    root = Path(out_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(n_samples):
        sid = f"s{i:05d}"
        img, msk = synth_sample(seed, i, size, num_classes)
        rec = {"id": sid, "image": f"images/{sid}.png", "mask": f"masks/{sid}.png"}
        Image.fromarray(img).save(root / rec["image"])
        Image.fromarray(msk).save(root / rec["mask"])
        records.append(rec)
    manifest = DatasetManifest(
        num_classes=num_classes, size=size, samples=records, splits=splits, seed=seed,
    )
    manifest.digest = content_digest(root, records)
    (root / MANIFEST_NAME).write_text(manifest.to_json(), encoding="utf-8")
    return manifest


# --- loading ---------------------------------------------------------------

def _read_png(path: Path) -> np.ndarray:
    if not path.is_file():
        raise MissingFileError(f"dataset file missing: {path}")
    with Image.open(path) as im:
        if im.mode != "L":
            raise DatasetError(f"{path}: expected 8-bit single-channel PNG, got mode {im.mode}")
        return np.array(im, dtype=np.uint8)


class Dataset:
    """Samples addressed by id, loaded lazily from disk (or held in memory)."""

    def __init__(self, manifest: DatasetManifest, root: Optional[Path] = None,
                 samples: Optional[Dict[str, Sample]] = None):
        self.manifest = manifest
        self.root = root
        self._cache: Dict[str, Sample] = dict(samples or {})
        self._records = {r["id"]: r for r in manifest.samples}

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], num_classes: int,
                     splits: Optional[Dict[str, List[str]]] = None) -> "Dataset":
        ids = [s.id for s in samples]
        for s in samples:
            _check_labels(s.mask, num_classes, s.id)
        splits = splits or {"train": list(ids), "val": [], "test": []}
        manifest = DatasetManifest(
            num_classes=num_classes, size=int(samples[0].mask.shape[-1]) if samples else 0,
            samples=[{"id": i, "image": "", "mask": ""} for i in ids], splits=splits,
        )
        return cls(manifest, None, {s.id: s for s in samples})

    @property
    def num_classes(self) -> int:
        return self.manifest.num_classes

    def ids(self, split: Optional[str] = None) -> List[str]:
        if split is None:
            return self.manifest.ids
        if split not in self.manifest.splits:
            raise ConfigError(f"unknown split {split!r}; available: {sorted(self.manifest.splits)}")
        return list(self.manifest.splits[split])

    def __len__(self) -> int:
        return len(self._records)

    def __getitem__(self, sid: str) -> Sample:
        if sid in self._cache:
            return self._cache[sid]
        if sid not in self._records or self.root is None:
            raise KeyError(sid)
        rec = self._records[sid]
        img_path, msk_path = self.root / rec["image"], self.root / rec["mask"]
        image = _read_png(img_path).astype(np.float32)[None] / np.float32(255.0)
        mask = _read_png(msk_path)
        _check_labels(mask, self.num_classes, str(msk_path))
        sample = Sample(image, mask, sid)
        self._cache[sid] = sample
        return sample


def _check_labels(mask: np.ndarray, num_classes: int, where: str) -> None:
    if mask.size and int(mask.max()) >= num_classes:
        raise LabelRangeError(
            f"{where}: label {int(mask.max())} out of range for num_classes={num_classes}"
        )


def load_dataset(root, verify: bool = True) -> Dataset:
    root = Path(root)
    mpath = root / MANIFEST_NAME
    if not mpath.is_file():
        raise MissingFileError(f"manifest not found: {mpath}")
    manifest = DatasetManifest.from_json(mpath.read_text(encoding="utf-8"))
    ids = manifest.ids
    if len(set(ids)) != len(ids):
        raise DatasetError("manifest has duplicate sample ids")
    split_ids = [i for s in manifest.splits.values() for i in s]
    if len(set(split_ids)) != len(split_ids) or set(split_ids) != set(ids):
        raise DatasetError("manifest splits must be disjoint and cover every sample id")
    if verify:
        actual = content_digest(root, manifest.samples)
        if actual != manifest.digest:
            raise DatasetDigestError(
                f"dataset digest mismatch in {root}: manifest {manifest.digest}, files {actual}"
            )
    return Dataset(manifest, root)


# --- preprocessing and batching --------------------------------------------

def nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    return (np.arange(n_out) * n_in) // n_out


def preprocess(sample: Sample, target_size: int = 224) -> Sample:
    """Resize image (corner-aligned bilinear) and mask (nearest) to ``target_size``."""
    s = sample.mask.shape
    if s == (target_size, target_size) and sample.image.shape[-2:] == s:
        return sample
    img = torch.from_numpy(np.ascontiguousarray(sample.image, dtype=np.float32))[None]
    img = numerics.bilinear_resize(img, (target_size, target_size))[0].numpy()
    ri = nearest_indices(s[0], target_size)
    ci = nearest_indices(s[1], target_size)
    mask = sample.mask[ri[:, None], ci[None, :]]
    return Sample(np.clip(img, 0.0, 1.0), mask, sample.id)


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Shuffle order for one epoch, a pure function of (seed, epoch).

    Consecutive epochs never repeat the same order when n >= 2: a draw equal to
    the previous epoch's order is rotated by one position.
    """
    prev = None
    order = np.arange(n)
    for e in range(epoch + 1):
        order = np.random.default_rng([seed, e]).permutation(n)
        if prev is not None and n >= 2 and np.array_equal(order, prev):
            order = np.roll(order, 1)
        prev = order
    return order


class Batch(NamedTuple):
    ids: List[str]
    images: torch.Tensor  # (B, 3, S, S) float32
    masks: torch.Tensor   # (B, S, S) int64


def batches(dataset: Dataset, split: str, batch_size: int, seed: int, epoch: int,
            target_size: Optional[int] = None, shuffle: bool = True) -> Iterator[Batch]:
    ids = dataset.ids(split)
    if not ids:
        raise ConfigError(f"split {split!r} is empty")
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    order = epoch_order(len(ids), seed, epoch) if shuffle else np.arange(len(ids))
    size = target_size or dataset.manifest.size
    for start in range(0, len(ids), batch_size):
        chunk = [ids[i] for i in order[start:start + batch_size]]
        samples = [preprocess(dataset[i], size) for i in chunk]
        images = torch.from_numpy(np.stack([s.image for s in samples]).astype(np.float32))
        masks = torch.from_numpy(np.stack([s.mask for s in samples]).astype(np.int64))
        yield Batch(chunk, images.expand(-1, 3, -1, -1).contiguous(), masks)
