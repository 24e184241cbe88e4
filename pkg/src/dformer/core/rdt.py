"""RDT raw-tensor files and named-tensor checkpoints.

RDT layout (little-endian): magic ``RDT1``, dtype u8 (0=f32, 1=u8, 2=i32),
rank u8, reserved u16 = 0, ``rank`` u32 dims, row-major payload.
A checkpoint is a sequence of (u32 name length, UTF-8 name, RDT tensor).
"""

from __future__ import annotations

import io
import os
import struct
from typing import BinaryIO, Mapping

import numpy as np

MAGIC = b"RDT1"
_CODES = {0: np.dtype("<f4"), 1: np.dtype("u1"), 2: np.dtype("<i4")}
_KINDS = {np.dtype(np.float32): 0, np.dtype(np.uint8): 1, np.dtype(np.int32): 2}


class RDTError(ValueError):
    pass


class BadMagicError(RDTError):
    pass


class BadDTypeError(RDTError):
    pass


class TruncatedError(RDTError):
    pass


def _dtype_code(arr: np.ndarray) -> int:
    try:
        return _KINDS[np.dtype(arr.dtype).newbyteorder("=")]
    except KeyError:
        raise BadDTypeError(f"unsupported dtype {arr.dtype}; RDT stores f32, u8, i32") from None


def write_rdt(fh: BinaryIO, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    code = _dtype_code(arr)
    if arr.ndim > 255:
        raise RDTError("rank exceeds 255")
    fh.write(MAGIC + struct.pack("<BBH", code, arr.ndim, 0))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes())


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedError(f"truncated {what}: expected {n} bytes, got {len(buf)}")
    return buf


def read_rdt(fh: BinaryIO) -> np.ndarray:
    magic = fh.read(4)
    if magic != MAGIC:
        if len(magic) < 4:
            raise TruncatedError(f"truncated header: expected 4 bytes, got {len(magic)}")
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    code, rank, reserved = struct.unpack("<BBH", _read_exact(fh, 4, "header"))
    if code not in _CODES:
        raise BadDTypeError(f"unknown dtype code {code}")
    if reserved != 0:
        raise RDTError(f"reserved header field must be 0, got {reserved}")
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "dims"))
    dt = _CODES[code]
    n = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    payload = _read_exact(fh, n, "payload")
    return np.frombuffer(payload, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))


def save_rdt(arr, path: str | os.PathLike) -> None:
    if hasattr(arr, "data") and not isinstance(arr, np.ndarray):
        arr = arr.data
    with open(path, "wb") as fh:
        write_rdt(fh, arr)


def load_rdt(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        arr = read_rdt(fh)
        if fh.read(1):
            raise RDTError(f"{path}: trailing bytes after payload")
    return arr


def dumps_checkpoint(tensors: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        write_rdt(buf, arr)
    return buf.getvalue()


def save_checkpoint(tensors: Mapping[str, np.ndarray], path: str | os.PathLike) -> None:
    data = dumps_checkpoint(tensors)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) < 4:
                raise TruncatedError("truncated checkpoint entry header")
            (n,) = struct.unpack("<I", head)
            name = _read_exact(fh, n, "entry name").decode("utf-8")
            out[name] = read_rdt(fh)
    return out
