"""Latency benchmark of im2col, dense Winograd and column-sparse Winograd.

Every strategy is checked against a reference output before it is timed.
Multiply counts are exact and count every scalar multiply the
implementation issues, zeros in the transform matrices included.
"""
from __future__ import annotations

import csv
import io
import os
import statistics
import time
from dataclasses import asdict, dataclass, fields

import numpy as np
from threadpoolctl import threadpool_limits

from .core import Rng
from .errors import ValidationError
from .layer import (WinogradLayer, _columns, compact_from_dense, elementwise_stage, forward_dense,
                    forward_lowrank, forward_sparse, sparse_elementwise, transform_input)
from .pruning import build_mask, kept_columns
from .refconv import ConvProblem, MultiplyCounter, im2col_conv3d, im2col_mults
from .transform import F23, tile_geometry

STRATEGIES = ("im2col", "winograd", "sparse")
HEADER = ["strategy", "layer", "Ci", "Co", "D", "H", "W", "sparsity", "l", "ew_mults", "total_mults",
          "ns_median", "reps", "threads", "ew_ns_median"]
MIN_REPS = 11
WARMUP = 3


@dataclass
class BenchRow:
    strategy: str
    layer: str
    Ci: int
    Co: int
    D: int
    H: int
    W: int
    sparsity: float
    l: int
    ew_mults: int
    total_mults: int
    ns_median: int
    reps: int
    threads: int
    ew_ns_median: int = 0


def default_threads() -> int:
    return int(os.environ.get("WINO3D_THREADS", "1"))


def time_call(fn, reps: int, warmup: int = WARMUP) -> int:
    """Median wall time in ns over ``reps`` runs after ``warmup`` discarded runs."""
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    return int(statistics.median(samples))


def rel_err(a: np.ndarray, ref: np.ndarray) -> float:
    scale = float(np.abs(ref).max())
    return float(np.abs(np.asarray(a, np.float64) - ref).max()) / (scale if scale > 0 else 1.0)


def random_problem(ci: int, co: int, dims, pad: int = 1, seed: int = 0, dtype=np.float32) -> ConvProblem:
    rng = Rng(seed)
    x = rng.spawn(0).normal((ci,) + tuple(dims)).astype(dtype)
    k = rng.spawn(1).normal((co, ci, 3, 3, 3), scale=np.sqrt(2.0 / (27 * ci))).astype(dtype)
    return ConvProblem(x, k, pad)


def _winograd_total(T: int, ci: int, co: int, l: int, t: int = 4, m: int = 2) -> int:
    t3 = t ** 3
    return T * ci * t3 * t3 + T * ci * co * l + T * co * l * m ** 3


def bench_layer(strategy: str, problem: ConvProblem, reps: int = 21, threads: int | None = None,
                sparsity: float = 0.0, layer_id: str = "L0", tol: float = 1e-4,
                reference: np.ndarray | None = None) -> BenchRow:
    """Validate then time one strategy on ``problem``.

    For ``sparse`` the kept columns are the ``l`` largest by column L1 norm of
    ``G_W``; its output is checked against the masked dense Winograd path in
    float64 (equal to im2col when nothing is pruned).
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}")
    if reps < MIN_REPS:
        raise ValueError(f"need at least {MIN_REPS} reps")
    threads = default_threads() if threads is None else threads
    x, k, pad = problem.input, problem.kernel, problem.pad
    co, ci = k.shape[:2]
    D, H, W = x.shape[1:]
    out_dims = problem.out_shape[1:]
    geom = tile_geometry(x.shape, F23, pad)
    T = geom.T
    if reference is None:
        p64 = ConvProblem(x.astype(np.float64), k.astype(np.float64), pad)
        reference = im2col_conv3d(p64)

    with threadpool_limits(limits=threads):
        if strategy == "im2col":
            counter = MultiplyCounter()
            out = im2col_conv3d(problem, counter)
            _check(strategy, out, reference, tol)
            if counter.mults != im2col_mults(co, ci, 3, out_dims):
                raise ValidationError("im2col multiply count mismatch")
            ns = time_call(lambda: im2col_conv3d(problem), reps)
            return BenchRow(strategy, layer_id, ci, co, D, H, W, 0.0, 0, 0, counter.mults, ns, reps, threads, 0)

        layer = WinogradLayer.from_spatial(k, pad=pad)
        t3 = layer.t3
        if strategy == "winograd":
            counter = MultiplyCounter()
            out, _ = forward_dense(layer, x, counter)
            _check(strategy, out, reference, tol)
            V, _ = transform_input(x, layer.spec, pad, layer.dtype)
            G_cols = _columns(layer.G_W, co, ci)
            ns = time_call(lambda: forward_dense(layer, x), reps)
            ew_ns = time_call(lambda: elementwise_stage(V, G_cols), reps)
            l, ew = t3, counter.mults
        else:
            l = kept_columns(sparsity, t3)
            mask, kept = build_mask(np.abs(layer.G_W).sum(axis=0), l)
            cl = compact_from_dense(layer.G_W, kept, co, ci, pad)
            counter = MultiplyCounter()
            out = forward_sparse(cl, x, counter)
            if l == t3:
                _check(strategy, out, reference, tol)
            else:
                masked = WinogradLayer.from_winograd(layer.G_W.astype(np.float64), co, ci, 0, pad)
                masked.set_mask(mask)
                _check(strategy, out, forward_lowrank(masked, x.astype(np.float64))[0], tol)
            V, _ = transform_input(x, cl.spec, pad, cl.dtype)
            G_cols = _columns(cl.G_bar, co, ci)
            ns = time_call(lambda: forward_sparse(cl, x), reps)
            ew_ns = time_call(lambda: sparse_elementwise(cl, V, G_cols), reps)
            ew = counter.mults
        if ew != T * ci * co * l:
            raise ValidationError(f"{strategy}: counted {ew} element-wise multiplies, expected {T * ci * co * l}")
        total = _winograd_total(T, ci, co, l)
        return BenchRow(strategy, layer_id, ci, co, D, H, W, float(sparsity if strategy == "sparse" else 0.0),
                        l, ew, total, ns, reps, threads, ew_ns)


def _check(strategy: str, out: np.ndarray, ref: np.ndarray, tol: float) -> None:
    err = rel_err(out, ref)
    if not err <= tol:
        raise ValidationError(f"{strategy}: output differs from reference (rel err {err:.3g} > {tol:g})")


def run_suite(shape, strategies=STRATEGIES, sparsities=(0.0, 0.3, 0.5, 0.7, 0.9), reps: int = 21,
              threads: int | None = None, seed: int = 0, pad: int = 1, layer_id: str = "L0") -> list[BenchRow]:
    ci, co, D, H, W = shape
    problem = random_problem(ci, co, (D, H, W), pad, seed)
    p64 = ConvProblem(problem.input.astype(np.float64), problem.kernel.astype(np.float64), pad)
    reference = im2col_conv3d(p64)
    rows = []
    for s in strategies:
        if s == "sparse":
            for sp in sparsities:
                rows.append(bench_layer(s, problem, reps, threads, sp, layer_id, reference=reference))
        else:
            rows.append(bench_layer(s, problem, reps, threads, 0.0, layer_id, reference=reference))
    return rows


def bench_report(rows) -> str:
    rows = list(rows)
    if not rows:
        raise ValueError("no benchmark rows to report")
    rows.sort(key=lambda r: (r.layer, STRATEGIES.index(r.strategy), r.sparsity))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for r in rows:
        d = asdict(r)
        d["sparsity"] = repr(float(r.sparsity))
        w.writerow([d[h] for h in HEADER])
    return buf.getvalue()


def parse_bench_csv(text: str) -> list[BenchRow]:
    types = {f.name: f.type for f in fields(BenchRow)}
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        kw = {}
        for name, val in rec.items():
            kind = types[name]
            kw[name] = float(val) if kind == "float" else int(val) if kind == "int" else val
        rows.append(BenchRow(**kw))
    return rows
