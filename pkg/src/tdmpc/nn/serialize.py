"""Versioned binary parameter container.

Layout (all integers little-endian): magic "TDM2", version u32, header byte
length u32 + UTF-8 header text (empty for bare parameter dumps; checkpoints
put their config key-values here), entry count u32, then per entry:
name length u16, name bytes, dtype tag u8 (0=f32, 1=f64), rank u8,
dims u32 each, raw little-endian values. Entry order is insertion order.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"TDM2"
VERSION = 1

_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class ContainerError(ValueError):
    pass


def save_tensors(path, named_arrays, header=""):
    """Write an ordered {name: ndarray} mapping; order is preserved exactly."""
    hdr = header.encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(hdr)))
        f.write(hdr)
        f.write(struct.pack("<I", len(named_arrays)))
        for name, arr in named_arrays.items():
            arr = np.asarray(arr)
            if arr.dtype not in _TAG_FOR:
                raise ContainerError(f"unsupported dtype {arr.dtype} for {name!r}")
            nb = name.encode("utf-8")
            if len(nb) > 0xFFFF:
                raise ContainerError(f"name too long: {name!r}")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<BB", _TAG_FOR[arr.dtype], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def load_tensors(path):
    """Read back (ordered {name: ndarray}, header text)."""
    with open(path, "rb") as f:
        data = f.read()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(data):
            raise ContainerError("truncated container")
        chunk = data[off:off + n]
        off += n
        return chunk

    if take(4) != MAGIC:
        raise ContainerError("bad magic (not a TDM2 container)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    (hlen,) = struct.unpack("<I", take(4))
    header = take(hlen).decode("utf-8")
    (count,) = struct.unpack("<I", take(4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        tag, rank = struct.unpack("<BB", take(2))
        if tag not in _DTYPE_TAGS:
            raise ContainerError(f"unknown dtype tag {tag}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        dt = _DTYPE_TAGS[tag]
        n = int(np.prod(dims, dtype=np.int64)) if dims else 1
        arr = np.frombuffer(take(n * dt.itemsize), dtype=dt).reshape(dims)
        out[name] = arr.astype(dt.newbyteorder("="))
    if off != len(data):
        raise ContainerError("trailing bytes after final entry")
    return out, header
