"""Binary parameter checkpoints.

Layout: the line ``NNCKPT1\\n``, then per array: u32 name length, UTF-8
name, u32 rank, u32 dims, little-endian float64 values.  Records run to EOF.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"NNCKPT1\n"


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, value in arrays.items():
            value = np.asarray(value, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", value.ndim))
            fh.write(struct.pack(f"<{value.ndim}I", *value.shape))
            fh.write(np.ascontiguousarray(value).tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(MAGIC):
        raise ValueError(f"{path}: not an NNCKPT1 checkpoint")
    pos = len(MAGIC)
    out = {}
    try:
        while pos < len(raw):
            (n,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            if pos + 8 * count > len(raw):
                raise ValueError(f"{path}: truncated record {name!r}")
            out[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(dims).copy()
            pos += 8 * count
    except struct.error:
        raise ValueError(f"{path}: truncated checkpoint") from None
    return out
