"""On-disk tensor container and checkpoint files.

Tensor container ("RDT1"): magic ``RDT1``, u32-LE rank, rank u32-LE dims,
then row-major little-endian float32 payload.

Checkpoint: a sequence of records (u32-LE name length, UTF-8 name, embedded
RDT1 tensor) terminated by a zero name length.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

MAGIC = b"RDT1"


def tensor_to_bytes(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim < 1:
        arr = arr.reshape(1)
    dims = arr.shape
    head = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *dims)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return head + payload


def write_tensor(path, arr):
    with open(path, "wb") as f:
        f.write(tensor_to_bytes(arr))


class _Reader:
    def __init__(self, data: bytes, name: str):
        self.data = data
        self.name = name
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.name}: truncated at byte offset {self.pos} (needed {n} more bytes)")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def _read_tensor_from(r: _Reader) -> np.ndarray:
    start = r.pos
    magic = r.take(4)
    if magic != MAGIC:
        raise FormatError(f"{r.name}: bad magic {magic!r} at byte offset {start}")
    rank = r.u32()
    if rank == 0 or rank > 8:
        raise FormatError(f"{r.name}: implausible rank {rank} at byte offset {start + 4}")
    dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
    count = 1
    for d in dims:
        count *= d
    payload = r.take(4 * count)
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data, str(path))
    arr = _read_tensor_from(r)
    if r.pos != len(data):
        raise FormatError(f"{path}: {len(data) - r.pos} trailing bytes at offset {r.pos}")
    return arr


def write_checkpoint(path, named_tensors):
    """``named_tensors``: iterable of (name, array); order is preserved."""
    with open(path, "wb") as f:
        for name, arr in named_tensors:
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(tensor_to_bytes(arr))
        f.write(struct.pack("<I", 0))


def read_checkpoint(path) -> dict:
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data, str(path))
    out = {}
    while True:
        nlen = r.u32()
        if nlen == 0:
            break
        name = r.take(nlen).decode("utf-8")
        out[name] = _read_tensor_from(r)
    if r.pos != len(data):
        raise FormatError(f"{path}: {len(data) - r.pos} trailing bytes at offset {r.pos}")
    return out
