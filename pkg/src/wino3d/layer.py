"""3D Winograd layer parameterised directly in the Winograd domain.

The weight is a matrix with one row per (output, input) channel pair, row
``C_i*n + c``, and one column per Winograd-domain position. The effective
weight is ``(G_W + G_r @ G_c) * M`` where ``M`` zeroes whole columns.

Internally, transformed inputs are kept column-major as ``(t^3, T, C_i)`` so
the element-wise stage becomes one small GEMM per kept column.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import CacheError, EmptyMask, RankError, ShapeError
from .refconv import MultiplyCounter
from .transform import (F23, TileGeometry, TransformSet, WinogradSpec, disassemble_input,
                        make_transform_set, reassemble_output, scatter_input_grad)

_layer_ids = itertools.count()


@dataclass(eq=False)
class WinogradLayer:
    co: int
    ci: int
    G_W: np.ndarray
    G_r: np.ndarray
    G_c: np.ndarray
    mask: np.ndarray
    pad: int = 1
    spec: WinogradSpec = F23
    train_gw: bool = False
    uid: int = field(default_factory=lambda: next(_layer_ids), repr=False)
    version: int = field(default=0, repr=False)

    def __post_init__(self):
        t3 = self.spec.check().t ** 3
        rows = self.co * self.ci
        if self.G_W.shape != (rows, t3):
            raise ShapeError(f"G_W must be ({rows},{t3}), got {self.G_W.shape}")
        s = self.G_r.shape[1] if self.G_r.ndim == 2 else -1
        if self.G_r.shape != (rows, s) or self.G_c.shape != (s, t3):
            raise ShapeError(f"low-rank factors {self.G_r.shape} x {self.G_c.shape} do not fit ({rows},{t3})")
        if s > t3:
            raise RankError(f"rank {s} exceeds {t3}")
        self.mask = np.asarray(self.mask, dtype=bool).reshape(-1)
        if self.mask.shape != (t3,):
            raise ShapeError(f"mask must have {t3} entries")
        if not self.mask.any():
            raise EmptyMask("mask keeps no columns")

    @classmethod
    def from_winograd(cls, G_W: np.ndarray, co: int, ci: int, rank: int = 0, pad: int = 1,
                      spec: WinogradSpec = F23, **kw) -> "WinogradLayer":
        t3 = spec.t ** 3
        dt = G_W.dtype
        return cls(co, ci, G_W, np.zeros((co * ci, rank), dt), np.zeros((rank, t3), dt),
                   np.ones(t3, bool), pad, spec, **kw)

    @classmethod
    def from_spatial(cls, kernel: np.ndarray, pad: int = 1, rank: int = 0,
                     spec: WinogradSpec = F23, **kw) -> "WinogradLayer":
        co, ci = kernel.shape[:2]
        G = kernel.reshape(co * ci, -1)
        return cls.from_winograd(spatial_to_winograd(G, make_transform_set(spec)).astype(kernel.dtype),
                                 co, ci, rank, pad, spec, **kw)

    @property
    def rank(self) -> int:
        return self.G_r.shape[1]

    @property
    def t3(self) -> int:
        return self.spec.t ** 3

    @property
    def kept(self) -> np.ndarray:
        """Location set: ascending indices of kept columns."""
        return np.flatnonzero(self.mask)

    @property
    def dtype(self):
        return self.G_W.dtype

    def touch(self) -> None:
        """Mark weights as changed so older forward caches are rejected."""
        self.version += 1

    def set_mask(self, mask) -> None:
        mask = np.asarray(mask, dtype=bool).reshape(-1)
        if mask.shape != (self.t3,):
            raise ShapeError(f"mask must have {self.t3} entries")
        if not mask.any():
            raise EmptyMask("mask keeps no columns")
        self.mask = mask
        self.touch()

    def delta(self) -> np.ndarray:
        return self.G_r @ self.G_c

    def effective_weight(self) -> np.ndarray:
        G = self.G_W + self.G_r @ self.G_c
        return G * self.mask.astype(G.dtype)

    def trainable_count(self) -> int:
        if self.train_gw:
            return self.co * self.ci * self.t3
        return trainable_params(self.co, self.ci, self.rank, self.spec.t)

    def astype(self, dtype) -> "WinogradLayer":
        return WinogradLayer(self.co, self.ci, self.G_W.astype(dtype), self.G_r.astype(dtype),
                             self.G_c.astype(dtype), self.mask.copy(), self.pad, self.spec, self.train_gw)


def trainable_params(co: int, ci: int, s: int, t: int = 4) -> int:
    return co * ci * s + s * t ** 3


def spatial_to_winograd(G: np.ndarray, ts: TransformSet | None = None) -> np.ndarray:
    """Inherit Winograd-domain weights from flattened spatial kernels: ``G @ T_K``."""
    ts = ts or make_transform_set()
    if G.ndim != 2 or G.shape[1] != ts.T_K.shape[0]:
        raise ShapeError(f"spatial weight must be (rows, {ts.T_K.shape[0]}), got {G.shape}")
    return G @ ts.T_K.astype(np.result_type(G.dtype, np.float32), copy=False)


@dataclass
class ForwardCache:
    V: np.ndarray        # transformed input, column-major (t^3, T, C_i)
    geometry: TileGeometry
    G_cols: np.ndarray   # effective weight per column (t^3, C_i, C_o)
    layer_uid: int
    layer_version: int
    squeeze: bool

    @property
    def V_matrix(self) -> np.ndarray:
        """Transformed input in row layout ``(T*C_i, t^3)``."""
        t3, T, ci = self.V.shape
        return self.V.transpose(1, 2, 0).reshape(T * ci, t3)


def _columns(G: np.ndarray, co: int, ci: int) -> np.ndarray:
    """(C_o*C_i, n) weight matrix -> (n, C_i, C_o) stack."""
    return np.ascontiguousarray(G.reshape(co, ci, -1).transpose(2, 1, 0))


def _uncolumns(Gc: np.ndarray) -> np.ndarray:
    n, ci, co = Gc.shape
    return Gc.transpose(2, 1, 0).reshape(co * ci, n)


def transform_input(I: np.ndarray, spec: WinogradSpec, pad: int, dtype):
    """Tile the input and apply the input transform; returns ``(V^T stack, geometry)``."""
    tiles, geom = disassemble_input(np.asarray(I, dtype=dtype), spec, pad)
    ts = make_transform_set(spec).cast(dtype)
    t3 = spec.t ** 3
    Vt = ts.T_I.T @ tiles.T
    return Vt.reshape(t3, geom.T, geom.channels), geom


def elementwise_stage(V: np.ndarray, G_cols: np.ndarray, counter: MultiplyCounter | None = None,
                      cols=None) -> np.ndarray:
    """Product with the weight then sum over input channels, one GEMM per column.

    ``cols`` selects which columns of ``V`` to use (all by default); ``G_cols``
    holds one ``(C_i, C_o)`` slab per selected column, in the same order.
    Selection reads ``V[j]`` in place, so gathering a sparse column set costs
    no copy.
    """
    cols = range(V.shape[0]) if cols is None else cols
    n = len(cols)
    if G_cols.shape[0] != n or V.shape[2] != G_cols.shape[1]:
        raise ShapeError(f"column stacks {V.shape} and {G_cols.shape} do not match for {n} columns")
    T = V.shape[1]
    co = G_cols.shape[2]
    if counter is not None:
        counter.add(n * T * V.shape[2] * co)
    out = np.empty((n, T, co), dtype=np.result_type(V, G_cols))
    for i, j in enumerate(cols):
        np.matmul(V[j], G_cols[i], out=out[i])
    return out


def _output_transform(U: np.ndarray, T_O_rows: np.ndarray, geom: TileGeometry) -> np.ndarray:
    n, T, co = U.shape
    O_tiles = U.reshape(n, T * co).T @ T_O_rows
    return reassemble_output(O_tiles, geom, co)


def _check_input(layer, I: np.ndarray) -> bool:
    if I.ndim not in (4, 5) or I.shape[-4] != layer.ci:
        raise ShapeError(f"expected input with {layer.ci} channels as (C,D,H,W) or (N,C,D,H,W), got {I.shape}")
    return I.ndim == 4


def _forward_with(layer: WinogradLayer, G_eff: np.ndarray, I: np.ndarray,
                  counter: MultiplyCounter | None):
    squeeze = _check_input(layer, I)
    V, geom = transform_input(I, layer.spec, layer.pad, layer.dtype)
    G_cols = _columns(G_eff, layer.co, layer.ci)
    U = elementwise_stage(V, G_cols, counter)
    ts = make_transform_set(layer.spec).cast(layer.dtype)
    O = _output_transform(U, ts.T_O, geom)
    cache = ForwardCache(V, geom, G_cols, layer.uid, layer.version, squeeze)
    return (O[0] if squeeze else O), cache


def forward_dense(layer: WinogradLayer, I: np.ndarray, counter: MultiplyCounter | None = None):
    """Output and cache using ``G_W`` alone as the weight."""
    return _forward_with(layer, layer.G_W, I, counter)


def forward_lowrank(layer: WinogradLayer, I: np.ndarray, counter: MultiplyCounter | None = None):
    """Output and cache using the masked effective weight ``(G_W + G_r G_c) * M``."""
    return _forward_with(layer, layer.effective_weight(), I, counter)


def _tile_grad(dO: np.ndarray, geom: TileGeometry, co: int) -> np.ndarray:
    """Adjoint of reassembly: zero-extend to whole tiles and cut into (T*C_o, m^3)."""
    m = geom.m
    n_d, n_h, n_w = geom.tiles
    full = np.zeros((geom.batch, co, n_d * m, n_h * m, n_w * m), dtype=dO.dtype)
    D, H, W = geom.out_dims
    full[:, :, :D, :H, :W] = dO.reshape(geom.batch, co, D, H, W)
    x = full.reshape(geom.batch, co, n_d, m, n_h, m, n_w, m).transpose(0, 2, 4, 6, 1, 3, 5, 7)
    return x.reshape(geom.T * co, m ** 3)


@dataclass
class LayerGrads:
    dG_r: np.ndarray
    dG_c: np.ndarray
    dI: np.ndarray
    dG_W: np.ndarray  # gradient w.r.t. G_W (masked); used when G_W itself trains

    def __iter__(self):
        return iter((self.dG_r, self.dG_c, self.dI))


def backward(layer: WinogradLayer, cache: ForwardCache, dO: np.ndarray, need_input_grad: bool = True) -> LayerGrads:
    """Gradients of a scalar loss w.r.t. ``G_r``, ``G_c``, ``G_W`` and the input."""
    if cache.layer_uid != layer.uid or cache.layer_version != layer.version:
        raise CacheError("forward cache is stale or belongs to another layer")
    geom = cache.geometry
    ts = make_transform_set(layer.spec).cast(layer.dtype)
    dO = np.asarray(dO, dtype=layer.dtype)
    dO_tiles = _tile_grad(dO, geom, layer.co)
    t3 = layer.t3
    dU = (ts.T_O @ dO_tiles.T).reshape(t3, geom.T, layer.co)
    dG_cols = np.matmul(cache.V.transpose(0, 2, 1), dU)
    dG_eff = _uncolumns(dG_cols)
    dDelta = dG_eff * layer.mask.astype(layer.dtype)
    dG_r = dDelta @ layer.G_c.T
    dG_c = layer.G_r.T @ dDelta
    dI = None
    if need_input_grad:
        dV = np.matmul(dU, np.ascontiguousarray(cache.G_cols.transpose(0, 2, 1)))
        dtiles = (ts.T_I @ dV.reshape(t3, geom.T * layer.ci)).T
        dI = scatter_input_grad(np.ascontiguousarray(dtiles), geom)
        if cache.squeeze:
            dI = dI[0]
    return LayerGrads(dG_r, dG_c, dI, dDelta)


@dataclass
class CompactLayer:
    co: int
    ci: int
    G_bar: np.ndarray   # (C_o*C_i, l)
    kept: np.ndarray    # ascending kept column indices
    T_O_bar: np.ndarray  # (l, m^3)
    pad: int = 1
    spec: WinogradSpec = F23

    @property
    def l(self) -> int:
        return len(self.kept)

    @property
    def dtype(self):
        return self.G_bar.dtype

    def scatter(self) -> np.ndarray:
        """Dense ``(C_o*C_i, t^3)`` weight with zeros in pruned columns."""
        out = np.zeros((self.co * self.ci, self.spec.t ** 3), dtype=self.G_bar.dtype)
        out[:, self.kept] = self.G_bar
        return out


def compact(layer: WinogradLayer) -> CompactLayer:
    kept = layer.kept
    if kept.size == 0:
        raise EmptyMask("mask keeps no columns")
    G = layer.G_W + layer.G_r @ layer.G_c
    ts = make_transform_set(layer.spec).cast(layer.dtype)
    return CompactLayer(layer.co, layer.ci, np.ascontiguousarray(G[:, kept]), kept.copy(),
                        np.ascontiguousarray(ts.T_O[kept]), layer.pad, layer.spec)


def compact_from_dense(G: np.ndarray, kept, co: int, ci: int, pad: int = 1, spec: WinogradSpec = F23) -> CompactLayer:
    kept = np.asarray(kept, dtype=np.int64)
    if kept.size == 0:
        raise EmptyMask("mask keeps no columns")
    ts = make_transform_set(spec).cast(G.dtype)
    return CompactLayer(co, ci, np.ascontiguousarray(G[:, kept]), kept, np.ascontiguousarray(ts.T_O[kept]), pad, spec)


def sparse_elementwise(cl: CompactLayer, V: np.ndarray, G_cols: np.ndarray | None = None,
                       counter: MultiplyCounter | None = None) -> np.ndarray:
    """Element-wise stage restricted to the kept columns of the transformed input."""
    if G_cols is None:
        G_cols = _columns(cl.G_bar, cl.co, cl.ci)
    return elementwise_stage(V, G_cols, counter, cols=cl.kept)


def forward_sparse(cl: CompactLayer, I: np.ndarray, counter: MultiplyCounter | None = None) -> np.ndarray:
    squeeze = _check_input(cl, I)
    V, geom = transform_input(I, cl.spec, cl.pad, cl.dtype)
    U = sparse_elementwise(cl, V, counter=counter)
    O = _output_transform(U, cl.T_O_bar, geom)
    return O[0] if squeeze else O


def op_counts(co: int, ci: int, T: int, spec: WinogradSpec = F23, l: int | None = None) -> tuple[int, int]:
    """Exact element-wise multiply counts ``(sparse, dense)`` for one forward."""
    t3 = spec.t ** 3
    l = t3 if l is None else l
    if not 1 <= l <= t3 or min(co, ci, T) < 1:
        raise ValueError("counts need positive sizes and 1 <= l <= t^3")
    return T * ci * co * l, T * ci * co * t3
