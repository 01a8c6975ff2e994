"""Binary checkpoint I/O for named parameter sets.

Layout (all integers little-endian): magic ``I2PT``, version u32, parameter
count u32, then per parameter: name length u32, UTF-8 name, rank u32,
extents u64 each, payload as little-endian float64.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"I2PT"
VERSION = 1


def save_checkpoint(params: dict[str, np.ndarray], path) -> None:
    """Write named arrays in a stable (insertion) order."""
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(params)))
        for name, arr in params.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into name → float64 array."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    off = 4

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise FormatError(f"{path}: truncated at byte {off}")
        piece = blob[off:off + n]
        off += n
        return piece

    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    (count,) = struct.unpack("<I", take(4))
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank)) if rank else ()
        n_items = int(np.prod(shape)) if shape else 1
        payload = take(8 * n_items)
        params[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes")
    return params
