"""Binary checkpoint format for named tensors.

Layout: magic bytes ``SDPM``, a little-endian uint32 format version, then one
record per tensor: uint32 name length, UTF-8 name, uint32 rank, uint32 dims,
raw little-endian float64 values in row-major order. Round-trips are
bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SDPM"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed checkpoint file or mismatch against the expected tensors."""


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named arrays to ``path`` in a stable (insertion) order."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name, arr in tensors.items():
            a = np.asarray(arr, dtype=np.float64)
            if not a.flags.c_contiguous:
                a = np.ascontiguousarray(a)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", a.ndim))
            for d in a.shape:
                fh.write(struct.pack("<I", d))
            fh.write(a.astype("<f8", copy=False).tobytes(order="C"))


def load_tensors(path) -> dict[str, np.ndarray]:
    """Read back a dict of name -> float64 array, preserving file order."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    pos = 8
    out: dict[str, np.ndarray] = {}
    total = len(blob)
    while pos < total:
        (name_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", blob, pos) if rank else ()
        pos += 4 * rank
        count = 1
        for d in dims:
            count *= d
        end = pos + 8 * count
        if end > total:
            raise CheckpointError(f"{path}: truncated record for tensor {name!r}")
        arr = np.frombuffer(blob[pos:end], dtype="<f8").reshape(dims).copy()
        pos = end
        if name in out:
            raise CheckpointError(f"{path}: duplicate tensor name {name!r}")
        out[name] = arr
    return out
