"""Column-wise pruning of Winograd layers: location scores, masks, and the
score-then-retrain pipeline."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, RankError, ShapeError
from .layer import CompactLayer, WinogradLayer, compact
from .model import Model
from .trainer import SGD, SynthDataset, TrainConfig, eval_loss, run_epoch
from .core import Rng


class Indicator(enum.Enum):
    """Which factors enter the per-column score."""
    MAG_DELTA = "mag-delta"    # |G_r G_c|
    MAG_FULL = "mag-full"      # |G_W + G_r G_c|
    GRAD = "grad"              # |dG_r dG_c|
    DELTA_GRAD = "delta-grad"  # |G_r G_c| * |dG_r dG_c|
    FULL_GRAD = "full-grad"    # |G_W + G_r G_c| * |dG_r dG_c|

    @classmethod
    def parse(cls, value) -> "Indicator":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("_", "-"))
        except ValueError:
            raise ConfigError(f"unknown indicator {value!r}; choose from {[i.value for i in cls]}") from None


@dataclass
class ScoreState:
    S: np.ndarray
    indicator: Indicator = Indicator.FULL_GRAD
    steps: int = 0

    @classmethod
    def zeros(cls, t3: int = 64, indicator=Indicator.FULL_GRAD) -> "ScoreState":
        return cls(np.zeros(t3), Indicator.parse(indicator))


def _column_abs_sum(M: np.ndarray) -> np.ndarray:
    return np.abs(M).sum(axis=0)


def score_terms(indicator: Indicator, G_W, G_r, G_c, dG_r, dG_c, co: int, ci: int) -> np.ndarray:
    """Per-column increment for one iteration, normalised by 1/(C_i^2 C_o^2)."""
    if indicator in (Indicator.MAG_FULL, Indicator.FULL_GRAD):
        mag = _column_abs_sum(G_W + G_r @ G_c)
    elif indicator in (Indicator.MAG_DELTA, Indicator.DELTA_GRAD):
        mag = _column_abs_sum(G_r @ G_c)
    else:
        mag = None
    if indicator in (Indicator.GRAD, Indicator.DELTA_GRAD, Indicator.FULL_GRAD):
        grad = _column_abs_sum(dG_r @ dG_c)
    else:
        grad = None
    if mag is None:
        term = grad
    elif grad is None:
        term = mag
    else:
        term = mag * grad
    return term / float(ci * ci * co * co)


def score_step(st: ScoreState, layer: WinogradLayer, dG_r: np.ndarray, dG_c: np.ndarray) -> ScoreState:
    """Accumulate one iteration's column scores into ``st`` (in place, also returned).

    Pass weights and gradients from the same iteration, before the update.
    """
    if dG_r.shape != layer.G_r.shape or dG_c.shape != layer.G_c.shape:
        raise ShapeError(f"gradient shapes {dG_r.shape}, {dG_c.shape} do not match the layer factors")
    if st.S.shape != (layer.t3,):
        raise ShapeError(f"score vector has {st.S.shape[0]} entries, layer has {layer.t3} columns")
    st.S = st.S + score_terms(st.indicator, layer.G_W, layer.G_r, layer.G_c, dG_r, dG_c, layer.co, layer.ci)
    st.steps += 1
    return st


def build_mask(S: np.ndarray, l: int) -> tuple[np.ndarray, np.ndarray]:
    """Keep the ``l`` highest scores (lower index wins ties); returns ``(mask, kept)``."""
    S = np.asarray(S)
    if not 1 <= l <= S.size:
        raise RankError(f"l must be in [1, {S.size}], got {l}")
    order = np.argsort(-S, kind="stable")
    kept = np.sort(order[:l])
    mask = np.zeros(S.size, dtype=bool)
    mask[kept] = True
    return mask, kept


def kept_columns(sparsity: float, t3: int = 64) -> int:
    if not 0.0 <= sparsity < 1.0:
        raise ConfigError(f"sparsity must be in [0, 1), got {sparsity}")
    return max(1, int(round((1.0 - sparsity) * t3)))


@dataclass
class PruneConfig:
    sparsity: float = 0.5
    score_epochs: int = 2
    retrain_epochs: int = 10
    rank_plan: list[int] = field(default_factory=lambda: [8])
    alpha: float = 0.1
    indicator: Indicator = Indicator.FULL_GRAD
    lr: float = 1e-3
    decay_every: int = 15
    momentum: float = 0.9
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        self.indicator = Indicator.parse(self.indicator)
        self.l = kept_columns(self.sparsity)
        if self.score_epochs < 0 or self.retrain_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")


@dataclass
class PruneResult:
    model: Model
    log: list
    scores: list[ScoreState]
    masks: list[np.ndarray]


def prune_pipeline(model: Model, data: SynthDataset, cfg: PruneConfig,
                   eval_data: SynthDataset | None = None) -> PruneResult:
    """Score column locations while training the low-rank factors, fix masks, retrain.

    ``model`` must already be in ``lr`` mode; it is modified in place.
    """
    if len(data) == 0:
        raise DataError("empty dataset")
    wls = model.winograd_layers()
    if not wls:
        raise ConfigError("model has no Winograd layers to prune")
    if any(L.rank == 0 or L.train_gw for L in wls):
        raise ConfigError("pruning expects low-rank (lr mode) Winograd layers")
    states = [ScoreState.zeros(L.t3, cfg.indicator) for L in wls]
    opt = SGD(cfg.momentum)
    rng = Rng(cfg.seed).spawn(7)
    rows = []

    def record(stage, epoch, loss, acc):
        ls = [int(L.mask.sum()) for L in wls]
        rows.append({"stage": stage, "epoch": epoch, "split": "train", "loss": loss, "accuracy": acc, "l": ls})
        if eval_data is not None:
            el, ea = eval_loss(model, eval_data)
            rows.append({"stage": stage, "epoch": epoch, "split": "eval", "loss": el, "accuracy": ea, "l": ls})

    def accumulate(m: Model):
        for st, wc in zip(states, (L for L in m.layers if getattr(L, "kind", "") == "winograd")):
            g = wc.grads
            score_step(st, wc.layer, g.dG_r, g.dG_c)

    epoch = 0
    for _ in range(cfg.score_epochs):
        loss, acc = run_epoch(model, data, opt, cfg.lr, cfg.batch_size, rng, accumulate)
        record("score", epoch, loss, acc)
        epoch += 1

    masks = []
    for st, L in zip(states, wls):
        mask, _ = build_mask(st.S, cfg.l) if cfg.score_epochs else build_mask(np.zeros(L.t3), cfg.l)
        L.set_mask(mask)
        masks.append(mask)

    tc = TrainConfig(epochs=max(cfg.retrain_epochs, 0), lr=cfg.lr, decay_every=cfg.decay_every)
    for e in range(cfg.retrain_epochs):
        loss, acc = run_epoch(model, data, opt, tc.lr_at(e), cfg.batch_size, rng)
        record("retrain", epoch, loss, acc)
        epoch += 1
    return PruneResult(model, rows, states, masks)


def finalize(layer: WinogradLayer) -> CompactLayer:
    """Fold ``G_r G_c`` into ``G_W``, apply the mask and return the compact form."""
    G = (layer.G_W + layer.G_r @ layer.G_c) * layer.mask.astype(layer.dtype)
    layer.G_W = G
    layer.G_r = np.zeros_like(layer.G_r)
    layer.G_c = np.zeros_like(layer.G_c)
    layer.touch()
    return compact(layer)

