import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import sin_data
from simavg._fast import loo_objective, loo_value, nw_cross
from simavg.data import CandidateSpec, make_partition
from simavg.errors import DegenerateRowError
from simavg.kernel import (Bandwidth, cv_errors, fitted_means, gaussian_kernel, leave_block_out_means,
                           link_derivative, select_bandwidth, smoother_matrix)


def test_gaussian_kernel_values():
    assert gaussian_kernel(0.0) == pytest.approx(0.3989422804, abs=1e-10)
    assert gaussian_kernel(1.0) == pytest.approx(0.2419707245, abs=1e-10)
    u = np.linspace(-4, 4, 17)
    np.testing.assert_array_equal(gaussian_kernel(u), gaussian_kernel(-u))


def test_bandwidth_rule():
    bw = Bandwidth.from_kappa(2.0, 100)
    assert bw.h == pytest.approx(2.0 * 100 ** -0.2 * math.log(100) ** (-1 / 6))
    with pytest.raises(ValueError):
        Bandwidth.from_kappa(0.0, 100)


def test_identical_indices_give_uniform_rows():
    S = smoother_matrix(np.array([[1.0], [1.0]]), [1.0], 0.3)
    np.testing.assert_array_equal(S.W, np.full((2, 2), 0.5))


def test_three_point_rows_match_scalar_formula():
    S = smoother_matrix(np.array([[0.0], [1.0], [2.0]]), [1.0], 1.0)
    for i in range(3):
        k = [math.exp(-0.5 * (i - j) ** 2) for j in range(3)]
        for j in range(3):
            assert S.W[i, j] == pytest.approx(k[j] / sum(k), rel=1e-14)


def test_leave_block_out_zero_prefix():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(10, 2))
    part = make_partition(10, 5)
    S = smoother_matrix(X, [1.0, 0.4], 0.8, "lbo", part)
    assert np.all(S.W[0, :5] == 0.0)
    assert np.all(S.W[7, 5:] == 0.0)
    assert np.all(S.W[0, 5:] > 0.0)


def test_loo_diagonal_is_zero():
    S = smoother_matrix(np.arange(5.0)[:, None], [1.0], 0.7, "loo")
    assert np.all(np.diag(S.W) == 0.0)


def test_degenerate_row_raises():
    X = np.array([[0.0], [100.0]])
    with pytest.raises(DegenerateRowError):
        smoother_matrix(X, [1.0], 0.1, "loo")


@given(
    z=arrays(np.float64, st.integers(4, 30), elements=st.floats(-3, 3)),
    h=st.floats(0.2, 3.0),
    mode=st.sampled_from(["full", "loo", "lbo"]),
)
def test_rows_are_stochastic(z, h, mode):
    part = make_partition(z.size, 2) if mode == "lbo" else None
    W = smoother_matrix(z[:, None], [1.0], h, mode, part).W
    assert np.all(W >= 0)
    np.testing.assert_allclose(W.sum(axis=1), 1.0, rtol=0, atol=1e-10)
    if mode == "lbo":
        lab = part.labels()
        assert np.all(W[lab[:, None] == lab[None, :]] == 0.0)


def test_fitted_means_examples():
    n = 4
    rng = np.random.default_rng(0)
    y = rng.normal(size=n)
    U = smoother_matrix(np.zeros((n, 1)), [1.0], 1.0)
    np.testing.assert_allclose(fitted_means(U, y), y.mean(), rtol=1e-14)
    S = smoother_matrix(rng.normal(size=(n, 2)), [1.0, -0.3], 0.9)
    np.testing.assert_allclose(fitted_means(S, np.full(n, 2.5)), 2.5, rtol=1e-14)
    brute = [sum(S.W[i, j] * y[j] for j in range(n)) for i in range(n)]
    np.testing.assert_allclose(fitted_means(S, y), brute, rtol=1e-13)


def _fd_link(X, beta, h, y, eps=1e-6):
    out = np.zeros((X.shape[0], beta.size))
    for r in range(beta.size):
        bp, bm = beta.copy(), beta.copy()
        bp[r] += eps
        bm[r] -= eps
        out[:, r] = (smoother_matrix(X, bp, h).W @ y - smoother_matrix(X, bm, h).W @ y) / (2 * eps)
    return out


@pytest.mark.parametrize("seed", range(5))
def test_link_derivative_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(5, 3))
    beta = np.array([1.0, 0.5, -0.7])
    y = rng.normal(size=5)
    D = link_derivative(X, beta, 0.9, y)
    fd = _fd_link(X, beta, 0.9, y)
    assert np.max(np.abs(D - fd)) <= 1e-5 * np.max(np.abs(fd))
    np.testing.assert_allclose(link_derivative(X, beta, 0.9, y, at_row=2), D[2], rtol=1e-13)


def test_link_derivative_flat_for_constant_response():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(6, 2))
    assert np.max(np.abs(link_derivative(X, [1.0, 0.3], 0.5, np.full(6, 4.0)))) < 1e-12


def test_link_derivative_sign_pattern_under_rescaling():
    X = np.array([[0.0, 1.0], [1.0, -1.0], [2.0, 0.5]])
    y = np.array([0.2, 1.0, -0.5])
    beta = np.array([1.0, 0.4])
    D1 = link_derivative(X, beta, 0.8, y)
    D2 = link_derivative(X, 3 * beta, 3 * 0.8, y)
    np.testing.assert_array_equal(np.sign(D1), np.sign(D2))


def test_leave_block_out_means_match_matrix():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(20, 2))
    y = rng.normal(size=20)
    part = make_partition(20, 5)
    beta = np.array([1.0, 0.2])
    ref = smoother_matrix(X, beta, 0.7, "lbo", part).W @ y
    np.testing.assert_allclose(leave_block_out_means(X, y, beta, 0.7, part), ref, rtol=1e-12)
    with pytest.raises(ValueError):
        leave_block_out_means(X, y, beta, 0.7, make_partition(20, 20))


def test_compiled_loo_matches_matrix_route():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(40, 3))
    y = rng.normal(size=40)
    beta = np.array([1.0, -0.5, 0.25])
    W = smoother_matrix(X, beta, 0.6, "loo").W
    ref = np.mean((y - W @ y) ** 2)
    obj, v, yh = loo_objective(X @ beta, y, 0.6)
    assert obj == pytest.approx(ref, rel=1e-12)
    assert loo_value(X @ beta, y, 0.6) == pytest.approx(ref, rel=1e-12)
    np.testing.assert_allclose(yh, W @ y, rtol=1e-12)
    grad = (-2 / 40) * (X.T @ v)
    eps = 1e-6
    for r in range(3):
        e = np.eye(3)[r] * eps
        fd = (loo_value(X @ (beta + e), y, 0.6) - loo_value(X @ (beta - e), y, 0.6)) / (2 * eps)
        assert grad[r] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_shifted_weights_survive_raw_underflow():
    zt = np.array([0.0, 0.1, 0.3])
    yt = np.array([1.0, 2.0, 4.0])
    vals, raw_zero = nw_cross(np.array([50.0]), zt, yt, 0.05)
    assert raw_zero[0]
    assert vals[0] == pytest.approx(4.0)
    vals, raw_zero = nw_cross(np.array([0.1]), zt, yt, 0.5)
    k = np.exp(-0.5 * ((0.1 - zt) / 0.5) ** 2)
    assert not raw_zero[0] and vals[0] == pytest.approx(k @ yt / k.sum(), rel=1e-14)


def test_select_bandwidth_singleton_and_grid_minimum():
    data, beta, _ = sin_data(100, 3, seed=5, r2=0.8)
    spec = CandidateSpec((0, 1, 2))
    part = make_partition(100, 50)
    assert select_bandwidth(data, spec, beta, [1.5], part).kappa == 1.5
    grid = [0.5, 1.0, 2.0]
    bw = select_bandwidth(data, spec, beta, grid, part)
    errs = cv_errors(data, spec, beta, grid, part)
    assert errs[bw.kappa] == min(errs.values())
    with pytest.raises(ValueError):
        select_bandwidth(data, spec, beta, grid)
