import numpy as np
import pytest

from wino3d.bench import (BenchRow, HEADER, bench_layer, bench_report, parse_bench_csv, random_problem, run_suite,
                          time_call)
from wino3d.errors import ValidationError
from wino3d.layer import op_counts
from wino3d.transform import tile_geometry, F23


def _row(**kw):
    base = dict(strategy="sparse", layer="L0", Ci=2, Co=3, D=4, H=5, W=6, sparsity=0.3, l=45, ew_mults=10,
                total_mults=20, ns_median=123, reps=11, threads=1, ew_ns_median=7)
    base.update(kw)
    return BenchRow(**base)


def test_header_starts_with_required_columns():
    required = "strategy,layer,Ci,Co,D,H,W,sparsity,l,ew_mults,total_mults,ns_median,reps,threads".split(",")
    assert list(HEADER[:len(required)]) == required


def test_report_single_row():
    text = bench_report([_row()])
    assert len(text.strip().split("\n")) == 2


def test_report_empty():
    with pytest.raises(ValueError):
        bench_report([])


def test_report_roundtrip_and_order():
    rows = [_row(sparsity=0.7), _row(strategy="im2col", sparsity=0.0), _row(sparsity=0.1 + 0.2),
            _row(layer="A", strategy="winograd", sparsity=0.0)]
    back = parse_bench_csv(bench_report(rows))
    assert back[0].layer == "A"
    assert [r.strategy for r in back[1:]] == ["im2col", "sparse", "sparse"]
    assert sorted(map(repr, back), key=str) == sorted(map(repr, rows), key=str)


def test_time_call_counts_runs():
    calls = []
    ns = time_call(lambda: calls.append(1), 11, warmup=3)
    assert len(calls) == 14 and ns >= 0


def test_min_reps():
    with pytest.raises(ValueError):
        bench_layer("im2col", random_problem(1, 1, (4, 4, 4)), reps=5)


def test_small_suite_counts():
    rows = run_suite((3, 2, 4, 6, 6), sparsities=(0.0, 0.5), reps=11)
    by = {(r.strategy, r.sparsity): r for r in rows}
    T = tile_geometry((3, 4, 6, 6), F23, 1).T
    dense = by[("winograd", 0.0)]
    assert dense.ew_mults == op_counts(2, 3, T)[1]
    assert by[("sparse", 0.0)].ew_mults == dense.ew_mults
    assert 2 * by[("sparse", 0.5)].ew_mults == dense.ew_mults
    assert by[("im2col", 0.0)].total_mults == 2 * 3 * 27 * 4 * 6 * 6
    assert all(r.ns_median > 0 for r in rows)


def test_c3d_shape_half_count():
    # closed form only; the timed version lives in the acceptance suite
    geom = tile_geometry((64, 8, 28, 28), F23, 1)
    sparse, dense = op_counts(64, 64, geom.T, l=32)
    assert geom.T == 4 * 14 * 14 and 2 * sparse == dense


def test_validation_error_on_wrong_reference():
    p = random_problem(2, 2, (4, 4, 4))
    with pytest.raises(ValidationError):
        bench_layer("winograd", p, reps=11, reference=np.zeros((2, 4, 4, 4)))
