"""Synthetic video data, cross-entropy, SGD with momentum and the training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import Rng
from .errors import ConfigError, DataError, NumericError
from .model import Model

log = logging.getLogger(__name__)


@dataclass
class SynthDataset:
    samples: np.ndarray  # (N, C, D, H, W)
    labels: np.ndarray   # (N,)
    seed: int
    num_classes: int

    def __len__(self):
        return len(self.labels)


def _directions(num_classes: int) -> np.ndarray:
    """Unit in-plane velocity per class, evenly spread on the circle."""
    ang = 2 * np.pi * np.arange(num_classes) / num_classes
    return np.stack([np.sin(ang), np.cos(ang)], axis=1)


def synth_dataset(seed: int, num_classes: int = 4, n: int = 256, dims=(8, 16, 16),
                  channels: int = 1, noise: float = 0.8, speed: float = 0.75, dtype=np.float64) -> SynthDataset:
    """Gaussian blobs drifting across the frame; the class is the drift direction."""
    D, H, W = dims
    if D < 2 or H < 8 or W < 8:
        raise ConfigError(f"dims {dims} too small for a moving blob (need D>=2, H,W>=8)")
    if n < 1 or num_classes < 2:
        raise ConfigError("need n >= 1 and at least 2 classes")
    rng = Rng(seed)
    labels = np.arange(n) % num_classes
    labels = labels[rng.spawn(0).permutation(n)]
    vel = _directions(num_classes) * speed
    gen = rng.spawn(1)
    width = gen.uniform(1.2, 2.2, n)
    amp = gen.uniform(0.8, 1.2, n)
    cy = gen.uniform(H / 2 - 2, H / 2 + 2, n)
    cx = gen.uniform(W / 2 - 2, W / 2 + 2, n)
    zz = np.arange(D)[:, None, None]
    yy = np.arange(H)[None, :, None]
    xx = np.arange(W)[None, None, :]
    out = np.empty((n, channels, D, H, W))
    noise_field = gen.normal((n, channels, D, H, W), scale=noise)
    for i in range(n):
        vy, vx = vel[labels[i]]
        frac = zz - (D - 1) / 2
        py = cy[i] + vy * frac
        px = cx[i] + vx * frac
        blob = amp[i] * np.exp(-((yy - py) ** 2 + (xx - px) ** 2) / (2 * width[i] ** 2))
        out[i] = blob[None] + noise_field[i]
    return SynthDataset(out.astype(dtype), labels, seed, num_classes)


def cross_entropy(logits: np.ndarray, labels):
    """Mean softmax cross-entropy over the batch and its gradient w.r.t. logits.

    A single 1-D logit vector with a scalar label is also accepted.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    z = np.atleast_2d(logits)
    y = np.atleast_1d(np.asarray(labels))
    shift = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shift).sum(axis=1))
    logp = shift - lse[:, None]
    loss = -logp[np.arange(len(y)), y].mean()
    grad = np.exp(logp)
    grad[np.arange(len(y)), y] -= 1.0
    grad /= len(y)
    return float(loss), (grad[0] if single else grad)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    decay_every: int = 15
    momentum: float = 0.9
    seed: int = 0
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")

    def lr_at(self, epoch: int) -> float:
        if self.decay_every <= 0:
            return self.lr
        return self.lr * 0.1 ** (epoch // self.decay_every)


class SGD:
    def __init__(self, momentum: float = 0.9, weight_decay: float = 0.0):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._buf: dict[int, np.ndarray] = {}

    def step(self, params, lr: float) -> None:
        for p in params:
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.value if self.weight_decay else p.grad
            key = id(p.value)
            buf = self._buf.get(key)
            if buf is None:
                buf = self._buf[key] = np.zeros_like(p.value)
            buf *= self.momentum
            buf += g
            p.value -= (lr * buf).astype(p.value.dtype)


def evaluate(model: Model, ds: SynthDataset, batch_size: int = 32) -> float:
    if len(ds) == 0:
        raise DataError("empty dataset")
    pred = model.predict(ds.samples, batch_size).argmax(axis=1)
    return float((pred == ds.labels).mean())


def eval_loss(model: Model, ds: SynthDataset, batch_size: int = 32) -> tuple[float, float]:
    logits = model.predict(ds.samples, batch_size)
    loss, _ = cross_entropy(logits, ds.labels)
    return loss, float((logits.argmax(axis=1) == ds.labels).mean())


def run_epoch(model: Model, ds: SynthDataset, opt: SGD, lr: float, batch_size: int, rng: Rng,
              on_backward=None) -> tuple[float, float]:
    """One shuffled pass over ``ds``; returns mean loss and running train accuracy."""
    order = rng.permutation(len(ds))
    total, correct = 0.0, 0
    for start in range(0, len(ds), batch_size):
        idx = order[start:start + batch_size]
        logits = model.forward(ds.samples[idx], train=True)
        loss, dlogits = cross_entropy(logits, ds.labels[idx])
        if not np.isfinite(loss):
            raise NumericError("loss became non-finite")
        model.backward(dlogits)
        if on_backward is not None:
            on_backward(model)
        opt.step(model.params(), lr)
        model.touch()
        total += loss * len(idx)
        correct += int((logits.argmax(axis=1) == ds.labels[idx]).sum())
    return total / len(ds), correct / len(ds)


def train(model: Model, ds: SynthDataset, cfg: TrainConfig, eval_ds: SynthDataset | None = None,
          on_backward=None, start_epoch: int = 0, log_rows: list | None = None):
    """SGD training; returns ``(model, log)`` with one row per epoch and split.

    Which tensors move depends on the model mode: spatial kernels in ``fs``,
    ``G_W`` in ``fw``, only the low-rank factors in ``lr`` (plus the
    classifier in every mode).
    """
    if len(ds) == 0:
        raise DataError("empty dataset")
    rows = log_rows if log_rows is not None else []
    opt = SGD(cfg.momentum, cfg.weight_decay)
    rng = Rng(cfg.seed).spawn(7)
    for e in range(cfg.epochs):
        epoch = start_epoch + e
        try:
            loss, acc = run_epoch(model, ds, opt, cfg.lr_at(e), cfg.batch_size, rng, on_backward)
        except NumericError as exc:
            raise NumericError(f"training diverged in epoch {epoch}: {exc}") from exc
        rows.append({"epoch": epoch, "split": "train", "loss": loss, "accuracy": acc})
        if eval_ds is not None:
            el, ea = eval_loss(model, eval_ds)
            rows.append({"epoch": epoch, "split": "eval", "loss": el, "accuracy": ea})
        log.info("epoch %d loss %.4f acc %.3f", epoch, loss, acc)
    return model, rows
