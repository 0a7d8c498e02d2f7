"""Flat binary parameter checkpoints.

Layout (all integers little-endian unsigned 32-bit)::

    b"UPN1" | precision (bytes per value: 4 or 8) | record count
    per record: name length | name (utf-8) | rank | dims... | raw values (LE)
"""
import struct

import numpy as np

MAGIC = b"UPN1"
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


def save(path, state, precision=None):
    """Write ``state`` (name -> array) in insertion order."""
    if precision is None:
        precision = next(iter(state.values())).dtype.itemsize if state else 4
    dt = _DTYPES[precision]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", precision, len(state)))
        for name, arr in state.items():
            raw = name.encode("utf-8")
            arr = np.asarray(arr)
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def load(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    precision, count = struct.unpack_from("<II", blob, 4)
    if precision not in _DTYPES:
        raise CheckpointError(f"{path}: unsupported precision {precision}")
    dt = _DTYPES[precision]
    pos = 12
    state = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            nbytes = size * dt.itemsize
            if pos + nbytes > len(blob):
                raise CheckpointError(f"{path}: truncated record {name!r}")
            state[name] = np.frombuffer(blob, dtype=dt, count=size, offset=pos).reshape(dims).astype(dt.newbyteorder("="))
            pos += nbytes
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated file") from exc
    return state
