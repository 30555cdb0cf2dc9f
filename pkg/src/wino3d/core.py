"""Dense tensor IO and the seeded random stream shared by every module.

Tensors are plain row-major numpy arrays of dtype float32 or float64.
The ``.lrt`` file layout is::

    b"LRT1" | dtype u8 (0=f32, 1=f64) | ndim u8 | dims u64 LE * ndim | payload LE

"""
from __future__ import annotations

import os
import struct

import numpy as np

from .errors import FormatError, ShapeError, TensorIOError

MAGIC = b"LRT1"
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def as_tensor(data, dtype=np.float64) -> np.ndarray:
    """Coerce to a C-contiguous float array and check the shape invariants."""
    arr = np.ascontiguousarray(data, dtype=dtype)
    if arr.ndim == 0 or any(d < 1 for d in arr.shape):
        raise ShapeError(f"tensor dims must be non-empty and positive, got {arr.shape}")
    return arr


def tensor_bytes(t: np.ndarray) -> bytes:
    t = np.asarray(t)
    if t.dtype not in _DTYPE_CODES:
        raise ShapeError(f"unsupported dtype {t.dtype}; use float32 or float64")
    if t.ndim == 0 or t.ndim > 255:
        raise ShapeError(f"unsupported rank {t.ndim}")
    header = MAGIC + struct.pack("<BB", _DTYPE_CODES[t.dtype], t.ndim)
    header += struct.pack(f"<{t.ndim}Q", *t.shape)
    payload = np.ascontiguousarray(t, dtype=t.dtype.newbyteorder("<")).tobytes()
    return header + payload


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise FormatError("bad magic, not an .lrt tensor file")
    code, ndim = struct.unpack_from("<BB", buf, 4)
    if code not in _CODE_DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    if ndim == 0:
        raise FormatError("tensor must have at least one axis")
    off = 6 + 8 * ndim
    if len(buf) < off:
        raise FormatError("truncated header")
    dims = struct.unpack_from(f"<{ndim}Q", buf, 6)
    if any(d < 1 for d in dims):
        raise FormatError(f"non-positive dimension in {dims}")
    dt = _CODE_DTYPES[code]
    expected = int(np.prod(dims)) * dt.itemsize
    if len(buf) - off != expected:
        raise FormatError(f"payload is {len(buf) - off} bytes, expected {expected}")
    arr = np.frombuffer(buf, dtype=dt, offset=off).reshape(dims)
    return arr.astype(dt.newbyteorder("="), copy=True)


def save_tensor(t: np.ndarray, path: str | os.PathLike) -> None:
    data = tensor_bytes(t)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise TensorIOError(exc.errno, f"cannot write tensor to {path}: {exc.strerror}") from exc


def load_tensor(path: str | os.PathLike) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise TensorIOError(exc.errno, f"cannot read tensor from {path}: {exc.strerror}") from exc
    return tensor_from_bytes(buf)


class Rng:
    """Seeded counter-based generator (Philox4x64) with a stable stream.

    ``spawn`` derives independent child streams by key, so adding a consumer
    does not shift the draws seen by the others.
    """

    def __init__(self, seed: int = 0):
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def spawn(self, key: int) -> "Rng":
        child = Rng.__new__(Rng)
        child.seed = self.seed
        child._gen = np.random.Generator(np.random.Philox(key=self.seed, counter=[0, 0, 0, int(key) + 1]))
        return child

    def normal(self, size=None, scale: float = 1.0) -> np.ndarray:
        return self._gen.standard_normal(size) * scale

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def rng_normal(rng: Rng, n: int) -> np.ndarray:
    """Return ``n`` standard-normal float64 draws from ``rng``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    return rng.normal(int(n))
