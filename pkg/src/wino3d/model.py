"""Small 3D CNN building blocks with hand-written backward passes.

Every convolution is followed by a ReLU. Spatial convolutions run through
im2col; Winograd convolutions run through :mod:`wino3d.layer`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Rng
from .errors import ConfigError, ShapeError
from .layer import (CompactLayer, WinogradLayer, backward, compact, forward_lowrank,
                    forward_sparse, spatial_to_winograd)
from .lowrank import init_lowrank
from .refconv import col2im, im2col
from .transform import make_transform_set

MODES = ("fs", "fw", "lr")


@dataclass
class Param:
    name: str
    value: np.ndarray
    grad: np.ndarray | None = None


class SpatialConv:
    kind = "spatial"

    def __init__(self, kernel: np.ndarray, pad: int = 1, trainable: bool = True):
        if kernel.ndim != 5:
            raise ShapeError("kernel must be (C_o, C_i, r, r, r)")
        self.kernel = kernel
        self.pad = pad
        self.trainable = trainable
        self.grad = None

    @property
    def co(self):
        return self.kernel.shape[0]

    @property
    def ci(self):
        return self.kernel.shape[1]

    def forward(self, x, train=False):
        r = self.kernel.shape[2]
        cols = im2col(x, r, self.pad)
        w = self.kernel.reshape(self.co, -1)
        n = x.shape[0]
        do, ho, wo = (d + 2 * self.pad - r + 1 for d in x.shape[2:])
        y = np.matmul(w, cols).reshape(n, self.co, do, ho, wo)
        out = np.maximum(y, 0)
        if train:
            self._cache = (cols, x.shape, out > 0)
        return out

    def backward(self, dy, need_input_grad=True):
        cols, shape, active = self._cache
        dy = (dy * active).reshape(shape[0], self.co, -1)
        r = self.kernel.shape[2]
        self.grad = np.einsum("nop,nkp->ok", dy, cols).reshape(self.kernel.shape)
        if not need_input_grad:
            return None
        dcols = np.matmul(self.kernel.reshape(self.co, -1).T, dy)
        return col2im(dcols, shape, r, self.pad)

    def params(self):
        return [Param("kernel", self.kernel, self.grad)] if self.trainable else []

    def n_trainable(self):
        return self.kernel.size if self.trainable else 0


class WinoConv:
    kind = "winograd"

    def __init__(self, layer: WinogradLayer):
        self.layer = layer
        self.grads = None

    @property
    def co(self):
        return self.layer.co

    @property
    def ci(self):
        return self.layer.ci

    def forward(self, x, train=False):
        y, cache = forward_lowrank(self.layer, x)
        out = np.maximum(y, 0)
        if train:
            self._cache = (cache, out > 0)
        return out

    def backward(self, dy, need_input_grad=True):
        cache, active = self._cache
        self.grads = backward(self.layer, cache, dy * active, need_input_grad)
        return self.grads.dI

    def params(self):
        L, g = self.layer, self.grads
        if L.train_gw:
            return [Param("G_W", L.G_W, g.dG_W if g else None)]
        if L.rank == 0:
            return []
        return [Param("G_r", L.G_r, g.dG_r if g else None), Param("G_c", L.G_c, g.dG_c if g else None)]

    def n_trainable(self):
        return self.layer.trainable_count()


class CompactConv:
    kind = "compact"

    def __init__(self, cl: CompactLayer):
        self.cl = cl

    @property
    def co(self):
        return self.cl.co

    @property
    def ci(self):
        return self.cl.ci

    def forward(self, x, train=False):
        if train:
            raise ConfigError("compact layers are inference-only")
        return np.maximum(forward_sparse(self.cl, x), 0)

    def params(self):
        return []

    def n_trainable(self):
        return 0


class AvgPool:
    kind = "pool"

    def __init__(self, size: int = 2):
        self.size = size

    def forward(self, x, train=False):
        k = self.size
        n, c, d, h, w = x.shape
        if d % k or h % k or w % k:
            raise ShapeError(f"pool size {k} does not divide {x.shape[2:]}")
        if train:
            self._shape = x.shape
        return x.reshape(n, c, d // k, k, h // k, k, w // k, k).mean(axis=(3, 5, 7))

    def backward(self, dy, need_input_grad=True):
        k = self.size
        g = dy / k ** 3
        for ax in (2, 3, 4):
            g = np.repeat(g, k, axis=ax)
        return g

    def params(self):
        return []

    def n_trainable(self):
        return 0


class Linear:
    kind = "linear"

    def __init__(self, weight: np.ndarray, bias: np.ndarray, trainable: bool = True):
        self.weight = weight
        self.bias = bias
        self.trainable = trainable
        self.gw = self.gb = None

    def forward(self, x, train=False):
        flat = x.reshape(x.shape[0], -1)
        if train:
            self._cache = (flat, x.shape)
        return flat @ self.weight.T + self.bias

    def backward(self, dy, need_input_grad=True):
        flat, shape = self._cache
        self.gw = dy.T @ flat
        self.gb = dy.sum(axis=0)
        return (dy @ self.weight).reshape(shape) if need_input_grad else None

    def params(self):
        if not self.trainable:
            return []
        return [Param("weight", self.weight, self.gw), Param("bias", self.bias, self.gb)]

    def n_trainable(self):
        return self.weight.size + self.bias.size if self.trainable else 0


@dataclass
class Model:
    layers: list
    mode: str = "fs"
    dtype: np.dtype = field(default_factory=lambda: np.dtype(np.float64))

    def forward(self, x, train=False):
        x = np.asarray(x, dtype=self.dtype)
        for L in self.layers:
            x = L.forward(x, train)
        return x

    def backward(self, dlogits):
        g = np.asarray(dlogits, dtype=self.dtype)
        first_trainable = next((i for i, L in enumerate(self.layers) if _may_train(L)), 0)
        for i in range(len(self.layers) - 1, -1, -1):
            L = self.layers[i]
            if not hasattr(L, "backward"):
                raise ConfigError(f"layer {i} ({L.kind}) has no backward pass")
            g = L.backward(g, need_input_grad=i > first_trainable)
            if g is None:
                break

    def params(self) -> list[Param]:
        out = []
        for i, L in enumerate(self.layers):
            for p in L.params():
                p.name = f"{i}.{p.name}"
                out.append(p)
        return out

    def n_trainable(self) -> int:
        return sum(L.n_trainable() for L in self.layers)

    def winograd_layers(self) -> list[WinogradLayer]:
        return [L.layer for L in self.layers if isinstance(L, WinoConv)]

    def touch(self):
        for L in self.winograd_layers():
            L.touch()

    def predict(self, x, batch_size: int = 32) -> np.ndarray:
        out = [self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(out)


def _may_train(L) -> bool:
    return getattr(L, "trainable", False) or (isinstance(L, WinoConv) and (L.layer.train_gw or L.layer.rank > 0))


def tiny_c3d(rng: Rng, in_channels: int = 1, num_classes: int = 4, input_dims=(8, 16, 16),
             widths=(8, 16, 16), dtype=np.float64) -> Model:
    """conv(1->8) -> conv(8->16) -> pool -> conv(16->16) -> pool -> linear, all spatial."""
    D, H, W = input_dims
    if D % 4 or H % 4 or W % 4:
        raise ConfigError(f"input dims {input_dims} must be divisible by 4")
    layers = []
    c_prev = in_channels
    for i, c in enumerate(widths):
        fan_in = c_prev * 27
        k = rng.spawn(i).normal((c, c_prev, 3, 3, 3), scale=np.sqrt(2.0 / fan_in)).astype(dtype)
        layers.append(SpatialConv(k, pad=1))
        if i >= 1:
            layers.append(AvgPool(2))
        c_prev = c
    feat = c_prev * (D // 4) * (H // 4) * (W // 4)
    w = rng.spawn(100).normal((num_classes, feat), scale=np.sqrt(1.0 / feat)).astype(dtype)
    layers.append(Linear(w, np.zeros(num_classes, dtype)))
    return Model(layers, "fs", np.dtype(dtype))


def _winograd_eligible(layers) -> list[int]:
    convs = [i for i, L in enumerate(layers) if isinstance(L, SpatialConv)]
    return [i for i in convs[1:] if layers[i].kernel.shape[2:] == (3, 3, 3)]


def convert_model(model: Model, mode: str, rank_plan=None, alpha: float = 0.1) -> Model:
    """Turn an FS model into an FW or LR model.

    Every 3x3x3 spatial conv except the first becomes a Winograd layer with
    ``G_W = G T_K``; the first conv is frozen. In ``lr`` mode each Winograd
    layer gets rank ``rank_plan[j]`` factors initialised from the SVD of its
    ``G_W``. Returns a new model; the input is left untouched.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    if model.mode != "fs":
        raise ConfigError("conversion starts from a spatial (fs) model")
    if mode == "fs":
        return model
    elig = _winograd_eligible(model.layers)
    if mode == "lr":
        rank_plan = list(rank_plan or [8] * len(elig))
        if len(rank_plan) == 1:
            rank_plan = rank_plan * len(elig)
        if len(rank_plan) != len(elig):
            raise ConfigError(f"rank plan has {len(rank_plan)} entries for {len(elig)} Winograd layers")
    ts = make_transform_set()
    new_layers = []
    j = 0
    for i, L in enumerate(model.layers):
        if i in elig:
            co, ci = L.kernel.shape[:2]
            G_W = spatial_to_winograd(L.kernel.reshape(co * ci, -1).astype(np.float64), ts)
            if mode == "fw":
                wl = WinogradLayer.from_winograd(G_W.astype(model.dtype), co, ci, 0, L.pad, train_gw=True)
            else:
                G_r, G_c = init_lowrank(G_W, rank_plan[j], alpha)
                wl = WinogradLayer.from_winograd(G_W.astype(model.dtype), co, ci, rank_plan[j], L.pad)
                wl.G_r[:] = G_r
                wl.G_c[:] = G_c
            new_layers.append(WinoConv(wl))
            j += 1
        elif isinstance(L, SpatialConv):
            new_layers.append(SpatialConv(L.kernel.copy(), L.pad, trainable=False))
        elif isinstance(L, Linear):
            new_layers.append(Linear(L.weight.copy(), L.bias.copy()))
        else:
            new_layers.append(L)
    return Model(new_layers, mode, model.dtype)


def finalize_model(model: Model) -> Model:
    """Fold low-rank factors and masks into compact inference layers.

    The result carries no low-rank factors, so it is labelled ``fw``.
    """
    layers = []
    for L in model.layers:
        if isinstance(L, WinoConv):
            layers.append(CompactConv(compact(L.layer)))
        else:
            layers.append(L)
    mode = "fw" if any(isinstance(L, CompactConv) for L in layers) else model.mode
    return Model(layers, mode, model.dtype)


def cast_model(model: Model, dtype) -> Model:
    dtype = np.dtype(dtype)
    layers = []
    for L in model.layers:
        if isinstance(L, SpatialConv):
            layers.append(SpatialConv(L.kernel.astype(dtype), L.pad, L.trainable))
        elif isinstance(L, WinoConv):
            layers.append(WinoConv(L.layer.astype(dtype)))
        elif isinstance(L, CompactConv):
            cl = L.cl
            layers.append(CompactConv(CompactLayer(cl.co, cl.ci, cl.G_bar.astype(dtype), cl.kept.copy(),
                                                   cl.T_O_bar.astype(dtype), cl.pad, cl.spec)))
        elif isinstance(L, Linear):
            layers.append(Linear(L.weight.astype(dtype), L.bias.astype(dtype), L.trainable))
        else:
            layers.append(L)
    return Model(layers, model.mode, dtype)
