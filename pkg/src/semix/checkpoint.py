"""Binary checkpoint format.

Layout (all integers little-endian):

    magic            4 bytes  b"SEMX"
    version          u16      currently 1
    config_len       u32      followed by that many UTF-8 bytes (config echo)
    tensor_count     u32
    per tensor:
        name_len     u32      followed by UTF-8 name
        rank         u32
        extents      u32 * rank
        data         float32 little-endian, C order

Round trips are bit-exact: floats are stored verbatim.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError, LengthError

MAGIC = b"SEMX"
VERSION = 1


def save_checkpoint(path, params, config_text: str):
    """params: iterable of (name, ndarray) in a deterministic order."""
    cfg = config_text.encode("utf-8")
    items = list(params)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(items)))
        for name, arr in items:
            # asarray, not ascontiguousarray: the latter turns rank 0 into rank 1
            arr = np.asarray(arr, dtype="<f4")
            nm = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nm)))
            fh.write(nm)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


class _Reader:
    def __init__(self, blob, path):
        self.blob = blob
        self.off = 0
        self.path = path

    def take(self, n, what):
        if self.off + n > len(self.blob):
            raise LengthError(
                f"{self.path}: truncated reading {what} at offset {self.off} "
                f"(need {n} bytes, {len(self.blob) - self.off} left)")
        out = self.blob[self.off:self.off + n]
        self.off += n
        return out

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path):
    """Returns (config_text, {name: float32 ndarray}) preserving tensor order."""
    with open(path, "rb") as fh:
        blob = fh.read()
    rd = _Reader(blob, path)
    magic = rd.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    version = rd.u16("version")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}, expected {VERSION}")
    cfg_len = rd.u32("config length")
    config_text = rd.take(cfg_len, "config echo").decode("utf-8")
    count = rd.u32("tensor count")
    tensors = {}
    for i in range(count):
        name_len = rd.u32(f"tensor {i} name length")
        name = rd.take(name_len, f"tensor {i} name").decode("utf-8")
        rank = rd.u32(f"{name} rank")
        if rank > 8:
            raise FormatError(f"{path}: tensor {name!r} claims rank {rank}")
        shape = struct.unpack(f"<{rank}I", rd.take(4 * rank, f"{name} extents"))
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        raw = rd.take(4 * size, f"{name} data")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    if rd.off != len(blob):
        raise LengthError(f"{path}: {len(blob) - rd.off} trailing bytes after last tensor")
    return config_text, tensors
