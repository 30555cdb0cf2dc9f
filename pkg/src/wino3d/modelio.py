"""Binary ``.lrw`` model files.

Layout (little-endian, floats f32, row-major)::

    b"LRW3" | version u16 | layer count u16 | records...

    record: kind u8 | C_o u32 | C_i u32 | m u8 | r u8 | pad u8 | payload
      0 spatial conv      kernel (C_o, C_i, r, r, r)
      1 winograd dense    G_W (C_o C_i, t^3)
      2 winograd low-rank s u16 | G_W | G_r (C_o C_i, s) | G_c (s, t^3) | mask bitset, LSB first
      3 winograd compact  l u16 | kept u16 * l (ascending) | G_bar (C_o C_i, l)
      4 average pool      r = pool size, no payload
      5 linear            C_o = outputs, C_i = inputs | weight (C_o, C_i) | bias (C_o)

Kinds 0-3 carry a ReLU after the convolution. The first spatial conv of a
model holding Winograd layers is frozen on load.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .errors import FormatError, TensorIOError
from .layer import CompactLayer, WinogradLayer
from .model import AvgPool, CompactConv, Linear, Model, SpatialConv, WinoConv
from .transform import WinogradSpec, make_transform_set

MAGIC = b"LRW3"
VERSION = 1
_HEAD = struct.Struct("<BIIBBB")
KIND_SPATIAL, KIND_WINO_DENSE, KIND_WINO_LOWRANK, KIND_WINO_COMPACT, KIND_POOL, KIND_LINEAR = range(6)
_F32 = np.dtype("<f4")


def _floats(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype=_F32).tobytes()


def mask_bits(mask: np.ndarray) -> bytes:
    return np.packbits(np.asarray(mask, dtype=bool), bitorder="little").tobytes()


def layer_record(L) -> bytes:
    if isinstance(L, SpatialConv):
        co, ci, r = L.kernel.shape[:3]
        return _HEAD.pack(KIND_SPATIAL, co, ci, 0, r, L.pad) + _floats(L.kernel)
    if isinstance(L, WinoConv):
        w = L.layer
        sp = w.spec
        if w.rank == 0 and w.mask.all():
            return _HEAD.pack(KIND_WINO_DENSE, w.co, w.ci, sp.m, sp.r, w.pad) + _floats(w.G_W)
        head = _HEAD.pack(KIND_WINO_LOWRANK, w.co, w.ci, sp.m, sp.r, w.pad) + struct.pack("<H", w.rank)
        return head + _floats(w.G_W) + _floats(w.G_r) + _floats(w.G_c) + mask_bits(w.mask)
    if isinstance(L, CompactConv):
        cl = L.cl
        head = _HEAD.pack(KIND_WINO_COMPACT, cl.co, cl.ci, cl.spec.m, cl.spec.r, cl.pad)
        idx = np.asarray(cl.kept, dtype="<u2").tobytes()
        return head + struct.pack("<H", cl.l) + idx + _floats(cl.G_bar)
    if isinstance(L, AvgPool):
        return _HEAD.pack(KIND_POOL, 0, 0, 0, L.size, 0)
    if isinstance(L, Linear):
        co, ci = L.weight.shape
        return _HEAD.pack(KIND_LINEAR, co, ci, 0, 0, 0) + _floats(L.weight) + _floats(L.bias)
    raise FormatError(f"cannot serialise layer of type {type(L).__name__}")


def model_bytes(model: Model) -> bytes:
    out = [MAGIC, struct.pack("<HH", VERSION, len(model.layers))]
    out.extend(layer_record(L) for L in model.layers)
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("file is truncated")
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, st):
        if isinstance(st, str):
            st = struct.Struct(st)
        return st.unpack(self.take(st.size))

    def floats(self, *shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(4 * n), dtype=_F32).astype(np.float32).reshape(shape)


def _spec(m, r) -> WinogradSpec:
    try:
        return WinogradSpec(m, r).check()
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def model_from_bytes(buf: bytes) -> Model:
    rd = _Reader(buf)
    if rd.take(4) != MAGIC:
        raise FormatError("bad magic, not an .lrw model file")
    version, n_layers = rd.unpack("<HH")
    if version != VERSION:
        raise FormatError(f"unsupported model version {version}")
    layers = []
    kinds = []
    for _ in range(n_layers):
        kind, co, ci, m, r, pad = rd.unpack(_HEAD)
        kinds.append(kind)
        if kind == KIND_SPATIAL:
            layers.append(SpatialConv(rd.floats(co, ci, r, r, r), pad))
        elif kind in (KIND_WINO_DENSE, KIND_WINO_LOWRANK):
            sp = _spec(m, r)
            t3 = sp.t ** 3
            if kind == KIND_WINO_DENSE:
                G_W = rd.floats(co * ci, t3)
                layers.append(WinoConv(WinogradLayer.from_winograd(G_W, co, ci, 0, pad, sp, train_gw=True)))
            else:
                (s,) = rd.unpack("<H")
                G_W = rd.floats(co * ci, t3)
                G_r = rd.floats(co * ci, s)
                G_c = rd.floats(s, t3)
                bits = np.frombuffer(rd.take((t3 + 7) // 8), dtype=np.uint8)
                mask = np.unpackbits(bits, bitorder="little")[:t3].astype(bool)
                if not mask.any():
                    raise FormatError("mask keeps no columns")
                layers.append(WinoConv(WinogradLayer(co, ci, G_W, G_r, G_c, mask, pad, sp)))
        elif kind == KIND_WINO_COMPACT:
            sp = _spec(m, r)
            (l,) = rd.unpack("<H")
            kept = np.frombuffer(rd.take(2 * l), dtype="<u2").astype(np.int64)
            if l == 0 or np.any(np.diff(kept) <= 0) or kept[-1] >= sp.t ** 3:
                raise FormatError("location set must be non-empty, strictly ascending and < t^3")
            G_bar = rd.floats(co * ci, l)
            T_O = make_transform_set(sp).cast(np.float32).T_O
            layers.append(CompactConv(CompactLayer(co, ci, G_bar, kept, np.ascontiguousarray(T_O[kept]), pad, sp)))
        elif kind == KIND_POOL:
            layers.append(AvgPool(r))
        elif kind == KIND_LINEAR:
            w = rd.floats(co, ci)
            b = rd.floats(co)
            layers.append(Linear(w, b))
        else:
            raise FormatError(f"unknown layer kind {kind}")
    if rd.pos != len(buf):
        raise FormatError(f"{len(buf) - rd.pos} trailing bytes after last layer")
    return Model(layers, _infer_mode(layers), np.dtype(np.float32))


def _infer_mode(layers) -> str:
    wino = [L for L in layers if isinstance(L, (WinoConv, CompactConv))]
    if not wino:
        return "fs"
    first = next((L for L in layers if isinstance(L, SpatialConv)), None)
    if first is not None:
        first.trainable = False
    if any(isinstance(L, WinoConv) and L.layer.rank > 0 for L in wino):
        return "lr"
    return "fw"


def save_model(model: Model, path: str | os.PathLike) -> None:
    data = model_bytes(model)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise TensorIOError(exc.errno, f"cannot write model to {path}: {exc.strerror}") from exc


def load_model(path: str | os.PathLike) -> Model:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise TensorIOError(exc.errno, f"cannot read model from {path}: {exc.strerror}") from exc
    return model_from_bytes(buf)


def compact_payload_bytes(co: int, ci: int, l: int) -> int:
    """Weight plus index bytes of a compact record (header excluded)."""
    return 4 * co * ci * l + 2 * l
