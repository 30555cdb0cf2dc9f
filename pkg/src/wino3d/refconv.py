"""Reference 3D convolution (cross-correlation, unit stride) and the im2col baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .transform import output_dims


@dataclass
class ConvProblem:
    input: np.ndarray   # (C_i, D, H, W)
    kernel: np.ndarray  # (C_o, C_i, r, r, r)
    pad: int = 0

    def __post_init__(self):
        if self.input.ndim != 4 or self.kernel.ndim != 5:
            raise ShapeError("input must be (C_i,D,H,W) and kernel (C_o,C_i,r,r,r)")
        if self.kernel.shape[1] != self.input.shape[0]:
            raise ShapeError(f"kernel expects {self.kernel.shape[1]} input channels, input has {self.input.shape[0]}")
        r = self.kernel.shape[2]
        if self.kernel.shape[2:] != (r, r, r):
            raise ShapeError(f"kernel must be cubic, got {self.kernel.shape[2:]}")
        output_dims(self.input.shape[1:], r, self.pad)

    @property
    def out_shape(self) -> tuple[int, ...]:
        r = self.kernel.shape[2]
        return (self.kernel.shape[0],) + output_dims(self.input.shape[1:], r, self.pad)


def pad_volume(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    widths = [(0, 0)] * (x.ndim - 3) + [(pad, pad)] * 3
    return np.pad(x, widths)


def direct_conv3d(p: ConvProblem) -> np.ndarray:
    """Seven-loop correlation: channel sum outermost, then kernel taps in order."""
    co, ci, r = p.kernel.shape[:3]
    _, D, H, W = p.out_shape
    x = pad_volume(p.input, p.pad)
    dtype = np.result_type(p.input, p.kernel)
    out = np.zeros((co, D, H, W), dtype=dtype)
    for n in range(co):
        for d in range(D):
            for h in range(H):
                for w in range(W):
                    acc = dtype.type(0)
                    for c in range(ci):
                        for u in range(r):
                            for v in range(r):
                                for q in range(r):
                                    acc += p.kernel[n, c, u, v, q] * x[c, d + u, h + v, w + q]
                    out[n, d, h, w] = acc
    return out


def direct_conv3d_fast(p: ConvProblem) -> np.ndarray:
    """Same sum as :func:`direct_conv3d`, vectorised over output positions."""
    co, ci, r = p.kernel.shape[:3]
    _, D, H, W = p.out_shape
    x = pad_volume(p.input, p.pad)
    out = np.zeros((co, D, H, W), dtype=np.result_type(p.input, p.kernel))
    for c in range(ci):
        for u in range(r):
            for v in range(r):
                for q in range(r):
                    patch = x[c, u:u + D, v:v + H, q:q + W]
                    out += p.kernel[:, c, u, v, q][:, None, None, None] * patch
    return out


def im2col(x: np.ndarray, r: int, pad: int) -> np.ndarray:
    """Unroll (N, C, D, H, W) into columns of shape (N, C*r^3, D_o*H_o*W_o)."""
    n, c = x.shape[:2]
    xp = pad_volume(x, pad)
    win = np.lib.stride_tricks.sliding_window_view(xp, (r, r, r), axis=(2, 3, 4))
    # (N, C, Do, Ho, Wo, r, r, r) -> (N, C, r, r, r, Do, Ho, Wo)
    do, ho, wo = win.shape[2:5]
    cols = win.transpose(0, 1, 5, 6, 7, 2, 3, 4)
    return np.ascontiguousarray(cols).reshape(n, c * r ** 3, do * ho * wo)


def col2im(cols: np.ndarray, shape, r: int, pad: int) -> np.ndarray:
    """Adjoint of :func:`im2col`; ``shape`` is the unpadded (N, C, D, H, W)."""
    n, c, D, H, W = shape
    do, ho, wo = D + 2 * pad - r + 1, H + 2 * pad - r + 1, W + 2 * pad - r + 1
    g = cols.reshape(n, c, r, r, r, do, ho, wo)
    acc = np.zeros((n, c, D + 2 * pad, H + 2 * pad, W + 2 * pad), dtype=cols.dtype)
    for u in range(r):
        for v in range(r):
            for q in range(r):
                acc[:, :, u:u + do, v:v + ho, q:q + wo] += g[:, :, u, v, q]
    return acc[:, :, pad:pad + D, pad:pad + H, pad:pad + W]


class MultiplyCounter:
    """Tally of scalar multiplies issued by the instrumented kernels."""

    def __init__(self):
        self.mults = 0

    def add(self, n: int) -> None:
        self.mults += int(n)

    def reset(self) -> None:
        self.mults = 0


def im2col_conv3d(p: ConvProblem, counter: MultiplyCounter | None = None) -> np.ndarray:
    """Convolution as a single (C_o x C_i r^3) @ (C_i r^3 x D_o H_o W_o) product."""
    co, ci, r = p.kernel.shape[:3]
    out_shape = p.out_shape
    cols = im2col(p.input[None], r, p.pad)[0]
    wmat = p.kernel.reshape(co, ci * r ** 3)
    if counter is not None:
        counter.add(co * cols.shape[0] * cols.shape[1])
    return (wmat @ cols).reshape(out_shape)


def im2col_mults(co: int, ci: int, r: int, out_dims) -> int:
    D, H, W = out_dims
    return co * ci * r ** 3 * D * H * W
