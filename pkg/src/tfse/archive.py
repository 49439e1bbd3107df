"""Flat tensor archive: a text manifest followed by raw payloads.

Layout (all header lines are UTF-8, newline-terminated):

    tensor-archive 1
    tensors <N>
    <name> <dtype> <shape> <offset> <nbytes>     x N
    payload
    <concatenated little-endian IEEE-754 buffers>

shape is 'x'-joined extents ('scalar' for rank 0); offsets are relative to
the first payload byte. Names must be whitespace-free. Round trips are
bit-exact for float32 and float64.
"""

from __future__ import annotations

import os
from typing import Mapping

import numpy as np

from .errors import FormatError
from .tensor import Tensor

MAGIC = "tensor-archive 1"

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def _shape_str(shape: tuple[int, ...]) -> str:
    return "x".join(str(n) for n in shape) if shape else "scalar"


def _parse_shape(s: str) -> tuple[int, ...]:
    if s == "scalar":
        return ()
    try:
        return tuple(int(p) for p in s.split("x"))
    except ValueError:
        raise FormatError(f"bad shape field {s!r}") from None


def save_tensors(path: str, tensors: Mapping[str, "np.ndarray | Tensor"]) -> None:
    """Write named arrays to `path`. Iteration order is preserved."""
    entries = []
    payloads = []
    offset = 0
    for name, t in tensors.items():
        if any(c.isspace() for c in name) or not name:
            raise FormatError(f"tensor name {name!r} must be non-empty and whitespace-free")
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise FormatError(f"unsupported dtype {dtype} for tensor {name!r}")
        buf = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        entries.append(f"{name} {dtype} {_shape_str(arr.shape)} {offset} {len(buf)}")
        payloads.append(buf)
        offset += len(buf)
    header = [MAGIC, f"tensors {len(entries)}", *entries, "payload"]
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("utf-8"))
        for buf in payloads:
            fh.write(buf)
    os.replace(tmp, path)


def load_tensors(path: str) -> dict[str, np.ndarray]:
    """Read an archive back into {name: ndarray} in manifest order."""
    with open(path, "rb") as fh:
        def line() -> str:
            raw = fh.readline()
            if not raw:
                raise FormatError(f"{path}: truncated archive header")
            return raw.decode("utf-8").rstrip("\n")

        if line() != MAGIC:
            raise FormatError(f"{path}: not a tensor archive")
        head = line().split()
        if len(head) != 2 or head[0] != "tensors":
            raise FormatError(f"{path}: bad tensor count line")
        count = int(head[1])
        entries = []
        for _ in range(count):
            parts = line().split()
            if len(parts) != 5:
                raise FormatError(f"{path}: bad manifest entry {parts!r}")
            name, dtype, shape_s, off_s, nbytes_s = parts
            if dtype not in _DTYPES:
                raise FormatError(f"{path}: unsupported dtype {dtype}")
            entries.append((name, dtype, _parse_shape(shape_s), int(off_s), int(nbytes_s)))
        if line() != "payload":
            raise FormatError(f"{path}: missing payload marker")
        blob = fh.read()
    out: dict[str, np.ndarray] = {}
    for name, dtype, shape, off, nbytes in entries:
        if off + nbytes > len(blob):
            raise FormatError(f"{path}: payload shorter than manifest entry {name!r}")
        arr = np.frombuffer(blob[off:off + nbytes], dtype=_DTYPES[dtype])
        expect = int(np.prod(shape)) if shape else 1
        if arr.size != expect:
            raise FormatError(f"{path}: size mismatch for {name!r}")
        out[name] = arr.reshape(shape).astype(dtype, copy=True)
    return out
