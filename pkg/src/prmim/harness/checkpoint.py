"""Binary checkpoint format: portable little-endian float32 records.

Layout: magic b"PRMIM1", then per array (sorted by name): name length
(u32 LE), utf-8 name bytes, rank (u32), one u32 per dim, raw float32
little-endian data.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"PRMIM1"


class CheckpointError(ValueError):
    """Malformed checkpoint payload."""


def save_checkpoint(params, path):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name in sorted(params):
            arr = np.asarray(params[name].data, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path):
    """Read a checkpoint into a name -> float64 ndarray map."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"bad magic {buf[:len(MAGIC)]!r}")
    pos = len(MAGIC)
    out = {}
    while pos < len(buf):
        if pos + 4 > len(buf):
            raise CheckpointError("truncated record header")
        (name_len,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        end = pos + 4 * count
        if end > len(buf):
            raise CheckpointError(f"truncated data for {name!r}")
        arr = np.frombuffer(buf[pos:end], dtype="<f4").reshape(shape)
        out[name] = arr.astype(np.float64)
        pos = end
    return out


def apply_checkpoint(params, arrays):
    for name, arr in arrays.items():
        if name not in params:
            raise CheckpointError(f"checkpoint names unknown parameter {name!r}")
        if params[name].data.shape != arr.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: {params[name].data.shape} vs {arr.shape}"
            )
        params[name].data = arr.copy()
