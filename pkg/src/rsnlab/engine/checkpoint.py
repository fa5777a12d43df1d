"""Binary tensor archive used for checkpoints and heatmap-free state dumps.

Layout (all integers little-endian):

  magic  4 bytes  b"RSN1"
  u32    format version (currently 1)
  u32    record count
  then per record:
    u32      name length in bytes
    bytes    UTF-8 name
    u8       dtype code (0 = float32, 1 = float64)
    4 x u32  shape (every stored tensor is 4D)
    payload  IEEE-754 little-endian, C order

Round-trips are bit-exact: loading returns the very bytes that were saved.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import CheckpointError

MAGIC = b"RSN1"
VERSION = 1

_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def save_checkpoint(path: str, tensors: dict[str, np.ndarray]) -> None:
    """Write named 4D float arrays; insertion order is preserved on disk."""
    records = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        if arr.ndim != 4:
            raise CheckpointError(f"tensor {name!r} is {arr.ndim}D; the format stores 4D tensors only")
        code = _DTYPE_CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        nb = name.encode("utf-8")
        head = struct.pack("<I", len(nb)) + nb + struct.pack("<B4I", code, *arr.shape)
        records.append(head + arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(tensors)))
        for rec in records:
            f.write(rec)


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 12:
        raise CheckpointError(f"{path}: truncated header")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    out: dict[str, np.ndarray] = {}
    off = 12
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off:off + name_len].decode("utf-8")
            if len(blob[off:off + name_len]) != name_len:
                raise CheckpointError(f"{path}: truncated record name")
            off += name_len
            code, *shape = struct.unpack_from("<B4I", blob, off)
            off += 17
        except struct.error as exc:
            raise CheckpointError(f"{path}: truncated record header") from exc
        dtype = _CODE_DTYPES.get(code)
        if dtype is None:
            raise CheckpointError(f"{path}: record {name!r} has unknown dtype code {code}")
        nbytes = int(np.prod(shape)) * dtype.itemsize
        payload = blob[off:off + nbytes]
        if len(payload) != nbytes:
            raise CheckpointError(f"{path}: record {name!r} payload truncated")
        off += nbytes
        if name in out:
            raise CheckpointError(f"{path}: duplicate record name {name!r}")
        out[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes after last record")
    return out
