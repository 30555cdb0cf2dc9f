"""Winograd F(2x2x2, 3x3x3) transforms, flattened transform matrices and tiling.

Shapes used throughout (t = m + r - 1):

* kernel transform ``K``: (t, r)
* input transform ``B``:  (t, t), applied as ``B^T``
* output transform ``A``: (t, m), applied as ``A^T``

Flattening is row-major, so a kernel ``g[u, v, w]`` becomes column index
``r*r*u + r*v + w``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ShapeError, UnsupportedSpec


@dataclass(frozen=True)
class WinogradSpec:
    m: int = 2
    r: int = 3

    @property
    def t(self) -> int:
        return self.m + self.r - 1

    def check(self) -> "WinogradSpec":
        if (self.m, self.r) != (2, 3):
            raise UnsupportedSpec(f"only F(2,3) is supported, got F({self.m},{self.r})")
        return self


F23 = WinogradSpec(2, 3)


@dataclass(frozen=True)
class BaseMatrices:
    K: np.ndarray
    B: np.ndarray
    A: np.ndarray


@dataclass(frozen=True)
class TransformSet:
    spec: WinogradSpec
    T_K: np.ndarray  # (r^3, t^3)
    T_I: np.ndarray  # (t^3, t^3)
    T_O: np.ndarray  # (t^3, m^3)

    def cast(self, dtype) -> "TransformSet":
        return _cast_set(self.spec, np.dtype(dtype).str)


def base_matrices(spec: WinogradSpec = F23) -> BaseMatrices:
    """Cook-Toom matrices for F(2,3) at interpolation points 0, 1, -1 (plus infinity)."""
    spec.check()
    K = np.array([[1.0, 0.0, 0.0],
                  [0.5, 0.5, 0.5],
                  [0.5, -0.5, 0.5],
                  [0.0, 0.0, 1.0]])
    Bt = np.array([[1.0, 0.0, -1.0, 0.0],
                   [0.0, 1.0, 1.0, 0.0],
                   [0.0, -1.0, 1.0, 0.0],
                   [0.0, 1.0, 0.0, -1.0]])
    At = np.array([[1.0, 1.0, 1.0, 0.0],
                   [0.0, 1.0, -1.0, -1.0]])
    for a in (K, Bt, At):
        a.setflags(write=False)
    return BaseMatrices(K=K, B=Bt.T, A=At.T)


def rotate(x: np.ndarray) -> np.ndarray:
    """Clockwise rotation of the trailing three axes: ``R[..., j, k, i] = x[..., i, j, k]``."""
    x = np.asarray(x)
    if x.ndim < 3:
        raise ShapeError(f"rotate needs at least 3 axes, got {x.ndim}")
    n = x.ndim
    lead = tuple(range(n - 3))
    return np.transpose(x, lead + (n - 2, n - 1, n - 3))


def _two_sided(left: np.ndarray, x: np.ndarray) -> np.ndarray:
    # (left x left^T) over the last two axes, batched over the leading ones
    return np.einsum("jv,...ivw,kw->...ijk", left, x, left)


def nested_transform(x: np.ndarray, left: np.ndarray) -> np.ndarray:
    """``(L x L^T)^R L^T`` on the trailing 3 axes, step by step."""
    q = _two_sided(left, x)
    q_hat = rotate(q)
    return q_hat @ left.T


def nested_kernel_transform(g: np.ndarray, bm: BaseMatrices | None = None) -> np.ndarray:
    bm = bm or base_matrices()
    g = np.asarray(g, dtype=np.float64)
    r = bm.K.shape[1]
    if g.shape[-3:] != (r, r, r):
        raise ShapeError(f"kernel must end in ({r},{r},{r}), got {g.shape}")
    return nested_transform(g, bm.K)


def nested_input_transform(d: np.ndarray, bm: BaseMatrices | None = None) -> np.ndarray:
    bm = bm or base_matrices()
    d = np.asarray(d, dtype=np.float64)
    t = bm.B.shape[0]
    if d.shape[-3:] != (t, t, t):
        raise ShapeError(f"input tile must end in ({t},{t},{t}), got {d.shape}")
    return nested_transform(d, bm.B.T)


def nested_output_transform(x: np.ndarray, bm: BaseMatrices | None = None) -> np.ndarray:
    """``((A^T x A)^R A)^R``: the extra rotation restores the spatial axis order."""
    bm = bm or base_matrices()
    x = np.asarray(x, dtype=np.float64)
    t = bm.A.shape[0]
    if x.shape[-3:] != (t, t, t):
        raise ShapeError(f"product tile must end in ({t},{t},{t}), got {x.shape}")
    return rotate(nested_transform(x, bm.A.T))


def build_flat_matrix(base: np.ndarray, in_size: int, out_size: int) -> np.ndarray:
    """Flattened 3D transform built from a 1D ``base`` of shape (out_size, in_size).

    Element ``(i, j)`` is ``base[x, v] * base[y, w] * base[z, u]`` with
    ``i = in^2 u + in v + w`` and ``j = out^2 x + out y + z``.
    """
    base = np.asarray(base, dtype=np.float64)
    if base.shape != (out_size, in_size):
        raise ShapeError(f"base must be ({out_size},{in_size}), got {base.shape}")
    # axes of the 6-index array: u, v, w, x, y, z
    full = np.einsum("xv,yw,zu->uvwxyz", base, base, base)
    return full.reshape(in_size ** 3, out_size ** 3)


def _rotation_permutation(n: int) -> np.ndarray:
    """Column permutation p with ``flat(rotate(X))[q] = flat(X)[p[q]]`` for an n^3 cube."""
    idx = np.arange(n ** 3).reshape(n, n, n)
    return rotate(idx).reshape(-1)


@lru_cache(maxsize=None)
def _transform_set(spec: WinogradSpec) -> TransformSet:
    bm = base_matrices(spec)
    m, r, t = spec.m, spec.r, spec.t
    T_K = build_flat_matrix(bm.K, r, t)
    T_I = build_flat_matrix(bm.B.T, t, t)
    T_O = build_flat_matrix(bm.A.T, t, m)[:, _rotation_permutation(m)]
    for a in (T_K, T_I, T_O):
        a.setflags(write=False)
    return TransformSet(spec, T_K, T_I, np.ascontiguousarray(T_O))


@lru_cache(maxsize=None)
def _cast_set(spec: WinogradSpec, dtype_str: str) -> TransformSet:
    ts = _transform_set(spec)
    out = []
    for a in (ts.T_K, ts.T_I, ts.T_O):
        b = np.ascontiguousarray(a, dtype=np.dtype(dtype_str))
        b.setflags(write=False)
        out.append(b)
    return TransformSet(spec, *out)


def make_transform_set(spec: WinogradSpec = F23) -> TransformSet:
    spec.check()
    return _transform_set(spec)


@dataclass(frozen=True)
class TileGeometry:
    """Bookkeeping for cutting a (possibly batched) volume into overlapping tiles."""
    batch: int
    channels: int
    in_dims: tuple[int, int, int]
    out_dims: tuple[int, int, int]
    padded_dims: tuple[int, int, int]
    tiles: tuple[int, int, int]
    pad: int
    m: int
    t: int

    @property
    def tiles_per_sample(self) -> int:
        n_d, n_h, n_w = self.tiles
        return n_d * n_h * n_w

    @property
    def T(self) -> int:
        return self.batch * self.tiles_per_sample


def output_dims(in_dims, r: int, pad: int) -> tuple[int, int, int]:
    out = tuple(int(d) + 2 * pad - r + 1 for d in in_dims)
    if any(o < 1 for o in out):
        raise ShapeError(f"padded input {tuple(d + 2 * pad for d in in_dims)} smaller than kernel {r}")
    return out


def tile_geometry(shape, spec: WinogradSpec, pad: int) -> TileGeometry:
    if len(shape) == 4:
        batch, (c, *dims) = 1, shape
    elif len(shape) == 5:
        batch, c, *dims = shape
    else:
        raise ShapeError(f"input must be (C,D,H,W) or (N,C,D,H,W), got {shape}")
    m, t = spec.m, spec.t
    out = output_dims(dims, spec.r, pad)
    tiles = tuple(-(-o // m) for o in out)
    padded = tuple(n * m + spec.r - 1 for n in tiles)
    return TileGeometry(batch, c, tuple(dims), out, padded, tiles, pad, m, t)


def _pad_volume(I: np.ndarray, geom: TileGeometry) -> np.ndarray:
    p = geom.pad
    widths = [(0, 0), (0, 0)]
    for d, full in zip(geom.in_dims, geom.padded_dims):
        widths.append((p, full - d - p))
    return np.pad(I, widths)


def disassemble_input(I: np.ndarray, spec: WinogradSpec = F23, pad: int = 0):
    """Cut ``I`` into overlapping t^3 tiles at stride m.

    Accepts (C,D,H,W) or a batch (N,C,D,H,W). Row ``(b*T + k)*C + c`` of the
    returned matrix is the flattened tile ``k`` of channel ``c`` in sample ``b``,
    tiles ordered depth-major.
    """
    I = np.asarray(I)
    spec.check()
    geom = tile_geometry(I.shape, spec, pad)
    x = I.reshape((geom.batch, geom.channels) + geom.in_dims)
    xp = _pad_volume(x, geom)
    m, t = geom.m, geom.t
    win = np.lib.stride_tricks.sliding_window_view(xp, (t, t, t), axis=(2, 3, 4))
    win = win[:, :, ::m, ::m, ::m]
    # (N, C, nd, nh, nw, t, t, t) -> (N, nd, nh, nw, C, t^3)
    tiles = np.moveaxis(win, 1, 4)
    mat = np.ascontiguousarray(tiles).reshape(geom.T * geom.channels, t ** 3)
    return mat, geom


def reassemble_output(O_tiles: np.ndarray, geom: TileGeometry, channels: int | None = None) -> np.ndarray:
    """Place m^3 output tiles without overlap and crop to the true output size."""
    O_tiles = np.asarray(O_tiles)
    m = geom.m
    n_d, n_h, n_w = geom.tiles
    if O_tiles.ndim != 2 or O_tiles.shape[1] != m ** 3 or O_tiles.shape[0] % geom.T:
        raise ShapeError(f"tile matrix {O_tiles.shape} does not match geometry with T={geom.T}")
    co = O_tiles.shape[0] // geom.T
    if channels is not None and co != channels:
        raise ShapeError(f"expected {channels} output channels, got {co}")
    x = O_tiles.reshape(geom.batch, n_d, n_h, n_w, co, m, m, m)
    x = x.transpose(0, 4, 1, 5, 2, 6, 3, 7).reshape(geom.batch, co, n_d * m, n_h * m, n_w * m)
    D, H, W = geom.out_dims
    out = np.ascontiguousarray(x[:, :, :D, :H, :W])
    return out


def scatter_input_grad(dtiles: np.ndarray, geom: TileGeometry) -> np.ndarray:
    """Adjoint of :func:`disassemble_input`: overlap-add tile gradients, then drop padding."""
    t, m = geom.t, geom.m
    n_d, n_h, n_w = geom.tiles
    c = geom.channels
    g = dtiles.reshape(geom.batch, n_d, n_h, n_w, c, t, t, t)
    acc = np.zeros((geom.batch, c) + geom.padded_dims, dtype=dtiles.dtype)
    # one strided slice per tile-internal offset; positions within a slice are disjoint
    for a in range(t):
        for b in range(t):
            for e in range(t):
                blk = g[:, :, :, :, :, a, b, e].transpose(0, 4, 1, 2, 3)
                acc[:, :, a:a + n_d * m:m, b:b + n_h * m:m, e:e + n_w * m:m] += blk
    p = geom.pad
    D, H, W = geom.in_dims
    return acc[:, :, p:p + D, p:p + H, p:p + W]
