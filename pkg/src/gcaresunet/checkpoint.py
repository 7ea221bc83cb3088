"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"GCAR"                     magic
    u16   version               (currently 1)
    u64   config digest         FNV-1a 64 of the canonical config JSON
    u32   config length, bytes  canonical config JSON (UTF-8)
    u32   entry count
    entry*:
        u16 name length, name (UTF-8)
        u8  kind                0 = learned parameter, 1 = buffer (BN statistics)
        u8  dtype               0 = float32, 1 = float64, 2 = int64
        u8  ndim, u32 * ndim    dims
        payload                 row-major values
    u32   CRC-32 of every preceding byte
"""
from __future__ import annotations

import json
import os
import struct
import zlib
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import torch
import torch.nn as nn

from ._digest import fnv1a64
from .errors import CheckpointFormatError, ChecksumError, DigestMismatchError, VersionError
from .model import GCAResUNet, ModelConfig

MAGIC = b"GCAR"
VERSION = 1

KIND_PARAM = 0
KIND_BUFFER = 1

_DTYPES = {
    0: (torch.float32, np.dtype("<f4")),
    1: (torch.float64, np.dtype("<f8")),
    2: (torch.int64, np.dtype("<i8")),
}
_TAG_OF = {torch_dt: tag for tag, (torch_dt, _) in _DTYPES.items()}

PathLike = Union[str, os.PathLike]


@dataclass
class Checkpoint:
    config: ModelConfig
    digest: int
    tensors: "OrderedDict[str, torch.Tensor]"
    kinds: Dict[str, int]

    def num_parameters(self) -> int:
        return sum(t.numel() for n, t in self.tensors.items() if self.kinds[n] == KIND_PARAM)

    def parameter_names(self):
        return [n for n in self.tensors if self.kinds[n] == KIND_PARAM]

    def build_model(self) -> GCAResUNet:
        model = GCAResUNet(self.config)
        model.load_state_dict(self.tensors, strict=True)
        return model


def _entries(model: nn.Module):
    params = {n for n, _ in model.named_parameters()}
    for name, t in model.state_dict().items():
        yield name, (KIND_PARAM if name in params else KIND_BUFFER), t.detach().cpu()


def encode(model: nn.Module, cfg: ModelConfig) -> bytes:
    cfg_text = cfg.canonical_text().encode("utf-8")
    parts = [MAGIC, struct.pack("<HQI", VERSION, cfg.digest(), len(cfg_text)), cfg_text]
    entries = list(_entries(model))
    parts.append(struct.pack("<I", len(entries)))
    for name, kind, t in entries:
        if t.dtype not in _TAG_OF:
            raise CheckpointFormatError(f"unsupported dtype {t.dtype} for {name}")
        tag = _TAG_OF[t.dtype]
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<BBB", kind, tag, t.dim()))
        parts.append(struct.pack(f"<{t.dim()}I", *t.shape))
        parts.append(t.contiguous().numpy().astype(_DTYPES[tag][1], copy=False).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(model: nn.Module, cfg: ModelConfig, path: PathLike) -> Path:
    path = Path(path)
    data = encode(model, cfg)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointFormatError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(data: bytes, expected: Optional[ModelConfig] = None) -> Checkpoint:
    if len(data) < 4 + 2 + 8 + 4 + 4 + 4 or data[:4] != MAGIC:
        raise CheckpointFormatError("not a GCAR checkpoint (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("checkpoint checksum mismatch: file is corrupted")
    r = _Reader(body)
    r.take(4)
    version, digest, cfg_len = r.unpack("<HQI")
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version} (expected {VERSION})")
    cfg_text = r.take(cfg_len)
    if fnv1a64(cfg_text) != digest:
        raise DigestMismatchError("stored config does not match its digest")
    if expected is not None and expected.digest() != digest:
        raise DigestMismatchError(
            f"checkpoint config digest {digest:016x} != expected {expected.digest():016x}"
        )
    cfg = ModelConfig.from_dict(json.loads(cfg_text.decode("utf-8")))
    (count,) = r.unpack("<I")
    tensors: "OrderedDict[str, torch.Tensor]" = OrderedDict()
    kinds: Dict[str, int] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        kind, tag, ndim = r.unpack("<BBB")
        if tag not in _DTYPES or kind not in (KIND_PARAM, KIND_BUFFER):
            raise CheckpointFormatError(f"bad entry header for {name}")
        dims = r.unpack(f"<{ndim}I")
        np_dt = _DTYPES[tag][1]
        n = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(r.take(n * np_dt.itemsize), dtype=np_dt).reshape(dims)
        if name in tensors:
            raise CheckpointFormatError(f"duplicate entry {name}")
        tensors[name] = torch.from_numpy(arr.astype(np_dt.newbyteorder("="), copy=True))
        kinds[name] = kind
    if r.pos != len(body):
        raise CheckpointFormatError("trailing bytes after last entry")
    return Checkpoint(cfg, digest, tensors, kinds)


def load_checkpoint(path: PathLike, expected: Optional[ModelConfig] = None) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode(fh.read(), expected)


def load_model(path: PathLike, expected: Optional[ModelConfig] = None) -> GCAResUNet:
    return load_checkpoint(path, expected).build_model()
