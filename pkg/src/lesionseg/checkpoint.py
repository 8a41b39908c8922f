"""Versioned binary checkpoints: config echo plus named float64 buffers.

Layout, all little-endian:

    8s   magic "LSEGCKPT"
    u32  format version (currently 1)
    u32  header length, then that many bytes of UTF-8 JSON
         {"config": {...}, "meta": {...}}
    u32  buffer count, then per buffer:
         u16 name length, name bytes (UTF-8, dotted path)
         u8  ndim, then ndim u32 dims
         dims-product float64 values

Only arrays the model actually registers are written, so an ablated run
stores nothing for the modules it disabled.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .errors import CheckpointError

MAGIC = b"LSEGCKPT"
VERSION = 1


def save_checkpoint(path, model, cfg: ModelConfig, meta: dict = None):
    header = json.dumps({"config": cfg.to_dict(), "meta": meta or {}},
                        sort_keys=True).encode("utf-8")
    arrays = model.state_arrays()
    chunks = [MAGIC, struct.pack("<I", VERSION),
              struct.pack("<I", len(header)), header,
              struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(
                f"{self.path}: truncated at byte {self.pos} "
                f"(wanted {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        vals = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return vals[0] if len(vals) == 1 else vals


def load_checkpoint(path):
    """Returns (config, meta, arrays) without touching any model."""
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(
            f"{path}: format version {version} is not supported "
            f"(this build reads {VERSION})")
    header_len = r.unpack("<I")
    try:
        header = json.loads(r.take(header_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    if "config" not in header:
        raise CheckpointError(f"{path}: header is missing the config echo")
    cfg = ModelConfig.from_dict(header["config"])

    arrays = {}
    count = r.unpack("<I")
    for _ in range(count):
        name = r.take(r.unpack("<H")).decode("utf-8")
        ndim = r.unpack("<B")
        dims = [r.unpack("<I") for _ in range(ndim)]
        numel = 1
        for d in dims:
            numel *= d
        data = np.frombuffer(r.take(numel * 8), dtype="<f8")
        arrays[name] = data.reshape(dims).astype(np.float64)
    if r.pos != len(r.buf):
        raise CheckpointError(
            f"{path}: {len(r.buf) - r.pos} trailing bytes after the last "
            "buffer")
    return cfg, header.get("meta", {}), arrays


def load_model(path):
    """Rebuilds the network a checkpoint describes and fills its state."""
    from .network import SegmentationNetwork

    cfg, meta, arrays = load_checkpoint(path)
    model = SegmentationNetwork(cfg)
    model.load_state(arrays)
    return model, cfg, meta
