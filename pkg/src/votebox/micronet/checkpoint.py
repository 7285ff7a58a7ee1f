"""Flat binary weight checkpoints.

Layout (all integers little-endian):

    magic   4 bytes  b"VBWT"
    version u32      currently 1
    count   u32      number of entries
    entry table, repeated count times:
        name_len u16, name utf-8 bytes, ndim u8, dims u32 * ndim
    payloads: float64 little-endian arrays, C order, in table order

The header table carries every name and shape, so a reader can validate the
file before touching any payload bytes.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

MAGIC = b"VBWT"
VERSION = 1

__all__ = ["save_weights", "load_weights"]


def save_weights(path, weights: dict) -> None:
    """Write a name -> array mapping; arrays are stored as float64."""
    header = [MAGIC, struct.pack("<II", VERSION, len(weights))]
    payloads = []
    for name, value in weights.items():
        arr = np.asarray(value, dtype="<f8")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"weight name too long: {name[:32]}...")
        header.append(struct.pack("<H", len(encoded)))
        header.append(encoded)
        header.append(struct.pack("<B", arr.ndim))
        header.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        payloads.append(arr.tobytes())
    blob = b"".join(header) + b"".join(payloads)
    directory = os.path.dirname(os.path.abspath(str(path)))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".votebox-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, str(path))
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_weights(path) -> dict:
    """Read a checkpoint written by save_weights; returns name -> float64 array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)
    if bytes(view[:4]) != MAGIC:
        raise ValueError(f"{path}: not a weight checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", view, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    entries = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", view, offset)
        offset += 2
        name = bytes(view[offset : offset + name_len]).decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", view, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", view, offset)
        offset += 4 * ndim
        entries.append((name, shape))
    out = {}
    for name, shape in entries:
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(view, dtype="<f8", count=n, offset=offset)
        offset += 8 * n
        out[name] = arr.reshape(shape).astype(np.float64)
    if offset != len(blob):
        raise ValueError(f"{path}: {len(blob) - offset} trailing bytes")
    return out
