import numpy as np
import pytest

from conftest import rel_err
from wino3d.errors import ShapeError
from wino3d.refconv import (ConvProblem, MultiplyCounter, col2im, direct_conv3d, direct_conv3d_fast, im2col,
                            im2col_conv3d, im2col_mults)


def random_problem(gen, max_c=8, lo=4, hi=12):
    ci, co = gen.integers(1, max_c + 1, size=2)
    dims = gen.integers(lo, hi + 1, size=3)
    pad = int(gen.integers(0, 2))
    return ConvProblem(gen.standard_normal((ci, *dims)), gen.standard_normal((co, ci, 3, 3, 3)), pad)


def test_ones_hand_case():
    out = direct_conv3d(ConvProblem(np.ones((1, 4, 4, 4)), np.ones((1, 1, 3, 3, 3)), 0))
    assert out.shape == (1, 2, 2, 2)
    assert np.all(out == 27.0)


def test_zero_kernel():
    out = direct_conv3d(ConvProblem(np.ones((2, 4, 4, 4)), np.zeros((3, 2, 3, 3, 3)), 1))
    assert out.shape == (3, 4, 4, 4) and not out.any()


def test_padded_shape():
    p = ConvProblem(np.zeros((1, 5, 5, 5)), np.zeros((1, 1, 3, 3, 3)), 1)
    assert p.out_shape == (1, 5, 5, 5)


def test_pad_too_small():
    with pytest.raises(ShapeError):
        ConvProblem(np.zeros((1, 2, 5, 5)), np.zeros((1, 1, 3, 3, 3)), 0)


def test_channel_mismatch():
    with pytest.raises(ShapeError):
        ConvProblem(np.zeros((2, 5, 5, 5)), np.zeros((1, 1, 3, 3, 3)), 0)


def test_correlation_not_convolution():
    # an off-centre tap picks the neighbour in the positive direction
    k = np.zeros((1, 1, 3, 3, 3))
    k[0, 0, 2, 1, 1] = 1
    x = np.random.default_rng(0).standard_normal((1, 5, 5, 5))
    out = direct_conv3d(ConvProblem(x, k, 0))
    assert np.array_equal(out[0], x[0, 2:5, 1:4, 1:4])


def test_delta_kernel_identity(rng):
    k = np.zeros((1, 1, 3, 3, 3))
    k[0, 0, 1, 1, 1] = 1
    x = rng.standard_normal((1, 5, 6, 7))
    assert np.array_equal(im2col_conv3d(ConvProblem(x, k, 1)), x)


def test_fast_direct_matches_loops():
    gen = np.random.default_rng(11)
    for _ in range(5):
        p = random_problem(gen, max_c=3, hi=6)
        assert rel_err(direct_conv3d_fast(p), direct_conv3d(p)) <= 1e-12


def test_im2col_vs_direct_50():
    gen = np.random.default_rng(12)
    for i in range(50):
        p = random_problem(gen, max_c=4 if i >= 3 else 2, hi=12 if i >= 3 else 6)
        ref = direct_conv3d(p) if i < 3 else direct_conv3d_fast(p)
        assert rel_err(im2col_conv3d(p), ref) <= 1e-12


def test_im2col_counter():
    gen = np.random.default_rng(13)
    p = random_problem(gen)
    c = MultiplyCounter()
    im2col_conv3d(p, c)
    co, ci = p.kernel.shape[:2]
    assert c.mults == im2col_mults(co, ci, 3, p.out_shape[1:])
    assert c.mults == co * ci * 27 * int(np.prod(p.out_shape[1:]))


def test_linearity(rng):
    k = rng.standard_normal((2, 3, 3, 3, 3))
    x1, x2 = rng.standard_normal((2, 3, 6, 5, 7))
    a, b = 1.7, -0.4
    lhs = im2col_conv3d(ConvProblem(a * x1 + b * x2, k, 1))
    rhs = a * im2col_conv3d(ConvProblem(x1, k, 1)) + b * im2col_conv3d(ConvProblem(x2, k, 1))
    assert np.abs(lhs - rhs).max() <= 1e-10


def test_col2im_is_adjoint(rng):
    x = rng.standard_normal((2, 3, 5, 6, 4))
    cols = im2col(x, 3, 1)
    y = rng.standard_normal(cols.shape)
    lhs = np.sum(cols * y)
    rhs = np.sum(x * col2im(y, x.shape, 3, 1))
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)
