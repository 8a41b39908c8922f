"""Minimal image files: 8-bit PNG plus binary PGM/PPM.

Enough of the PNG format to write our own outputs (filter 0 scanlines)
and to read anything a standard tool writes for 8-bit grayscale, RGB,
or alpha variants, including all five scanline filters. Palette images,
16-bit depths and interlacing are rejected rather than guessed at.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import IngestionError

PNG_SIG = b"\x89PNG\r\n\x1a\n"

# color type -> samples per pixel
_CHANNELS = {0: 1, 2: 3, 4: 2, 6: 4}


def _chunk(tag: bytes, payload: bytes) -> bytes:
    return struct.pack(">I", len(payload)) + tag + payload \
        + struct.pack(">I", zlib.crc32(tag + payload))


def write_png(path, arr: np.ndarray):
    """Write (h, w) grayscale or (h, w, 3) RGB uint8 data."""
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise IngestionError(f"png writer needs uint8 data, got {arr.dtype}")
    if arr.ndim == 2:
        color, px = 0, arr[:, :, None]
    elif arr.ndim == 3 and arr.shape[2] == 3:
        color, px = 2, arr
    else:
        raise IngestionError(
            f"png writer needs (h, w) or (h, w, 3) data, got {arr.shape}")
    h, w = px.shape[:2]
    ihdr = struct.pack(">IIBBBBB", w, h, 8, color, 0, 0, 0)
    raw = b"".join(b"\x00" + px[r].tobytes() for r in range(h))
    Path(path).write_bytes(
        PNG_SIG + _chunk(b"IHDR", ihdr)
        + _chunk(b"IDAT", zlib.compress(raw, 6)) + _chunk(b"IEND", b""))


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _defilter(raw: bytes, h: int, w: int, ch: int, path) -> np.ndarray:
    stride = w * ch
    if len(raw) != h * (stride + 1):
        raise IngestionError(
            f"{path}: decompressed to {len(raw)} bytes, expected "
            f"{h * (stride + 1)}")
    out = np.zeros((h, stride), dtype=np.uint8)
    pos = 0
    for r in range(h):
        f = raw[pos]
        row = bytearray(raw[pos + 1:pos + 1 + stride])
        pos += 1 + stride
        above = out[r - 1] if r else np.zeros(stride, dtype=np.uint8)
        if f == 0:
            pass
        elif f == 1:
            for i in range(ch, stride):
                row[i] = (row[i] + row[i - ch]) & 0xFF
        elif f == 2:
            for i in range(stride):
                row[i] = (row[i] + int(above[i])) & 0xFF
        elif f == 3:
            for i in range(stride):
                left = row[i - ch] if i >= ch else 0
                row[i] = (row[i] + ((left + int(above[i])) >> 1)) & 0xFF
        elif f == 4:
            for i in range(stride):
                left = row[i - ch] if i >= ch else 0
                ul = int(above[i - ch]) if i >= ch else 0
                row[i] = (row[i] + _paeth(left, int(above[i]), ul)) & 0xFF
        else:
            raise IngestionError(f"{path}: unknown scanline filter {f}")
        out[r] = np.frombuffer(bytes(row), dtype=np.uint8)
    return out.reshape(h, w, ch)


def read_png(path) -> np.ndarray:
    """Read an 8-bit PNG; alpha channels are dropped.

    Returns (h, w) for grayscale input, (h, w, 3) for color.
    """
    blob = Path(path).read_bytes()
    if blob[:8] != PNG_SIG:
        raise IngestionError(f"{path}: not a png file")
    pos = 8
    meta = None
    idat = []
    while pos + 8 <= len(blob):
        length, tag = struct.unpack(">I4s", blob[pos:pos + 8])
        payload = blob[pos + 8:pos + 8 + length]
        if len(payload) != length:
            raise IngestionError(f"{path}: truncated chunk {tag!r}")
        pos += 12 + length
        if tag == b"IHDR":
            w, h, depth, color, comp, filt, interlace = struct.unpack(
                ">IIBBBBB", payload)
            if depth != 8:
                raise IngestionError(
                    f"{path}: only 8-bit depth is supported, got {depth}")
            if color not in _CHANNELS:
                raise IngestionError(
                    f"{path}: unsupported color type {color} "
                    "(palette images are not)")
            if interlace:
                raise IngestionError(f"{path}: interlaced png not supported")
            meta = (h, w, _CHANNELS[color])
        elif tag == b"IDAT":
            idat.append(payload)
        elif tag == b"IEND":
            break
    if meta is None or not idat:
        raise IngestionError(f"{path}: missing IHDR or IDAT")
    h, w, ch = meta
    try:
        raw = zlib.decompress(b"".join(idat))
    except zlib.error as exc:
        raise IngestionError(f"{path}: corrupt image data: {exc}") from exc
    px = _defilter(raw, h, w, ch, path)
    if ch == 1:
        return px[:, :, 0]
    if ch == 2:
        return px[:, :, 0]     # gray + alpha: keep the gray
    if ch == 4:
        return px[:, :, :3]    # rgba: keep the color
    return px


def _read_netpbm_header(blob: bytes, path, magic: bytes):
    if not blob.startswith(magic):
        raise IngestionError(f"{path}: expected {magic.decode()} header")
    # header tokens may be separated by whitespace or '#' comments
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise IngestionError(f"{path}: truncated header")
        fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace byte after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise IngestionError(f"{path}: only maxval 255 supported")
    return w, h, pos


def write_pgm(path, arr: np.ndarray):
    arr = np.asarray(arr, dtype=np.uint8)
    h, w = arr.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + arr.tobytes())


def write_ppm(path, arr: np.ndarray):
    arr = np.asarray(arr, dtype=np.uint8)
    h, w = arr.shape[:2]
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + arr.tobytes())


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    w, h, pos = _read_netpbm_header(blob, path, b"P5")
    data = blob[pos:pos + h * w]
    if len(data) != h * w:
        raise IngestionError(f"{path}: pixel data truncated")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


def read_ppm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    w, h, pos = _read_netpbm_header(blob, path, b"P6")
    data = blob[pos:pos + h * w * 3]
    if len(data) != h * w * 3:
        raise IngestionError(f"{path}: pixel data truncated")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).copy()


def read_image(path) -> np.ndarray:
    """Dispatch on the magic bytes: PNG, PGM (P5) or PPM (P6)."""
    head = Path(path).read_bytes()[:8]
    if head.startswith(PNG_SIG[:4]):
        return read_png(path)
    if head.startswith(b"P5"):
        return read_pgm(path)
    if head.startswith(b"P6"):
        return read_ppm(path)
    raise IngestionError(f"{path}: unrecognized image format")
