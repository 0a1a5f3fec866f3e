import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import sin_data
from simavg.data import CandidateSpec, make_partition
from simavg.errors import ConditioningError, NoSelectableModelError
from simavg.estimator import nls_fit
from simavg.kernel import smoother_matrix
from simavg.weights import (IcScores, average_predictions, build_cv_gram, ic_scores, ic_select,
                            kkt_violation, project_simplex, smoothed_ic_weights, solve_simplex_qp)


def _scores(vals):
    return [IcScores(v, v, v, 1.0, 1.0, 1.0) for v in vals]


def random_psd(rng, S, rank=None):
    B = rng.normal(size=(S, rank or S + 2))
    return B @ B.T


def simplex_grid(S, step):
    k = round(1 / step)
    for c in itertools.product(range(k + 1), repeat=S - 1):
        if sum(c) <= k:
            yield np.array([*c, k - sum(c)]) / k


# --- Gram -------------------------------------------------------------------

def test_gram_single_and_duplicate():
    rng = np.random.default_rng(0)
    y = rng.normal(size=8)
    m = rng.normal(size=8)
    G = build_cv_gram([m], y)
    assert G.A.shape == (1, 1) and G.A[0, 0] == pytest.approx(np.sum((m - y) ** 2))
    G2 = build_cv_gram([m, m], y)
    assert np.ptp(G2.A) == 0.0
    assert np.linalg.matrix_rank(G2.A) == 1


def test_gram_matches_double_loop():
    rng = np.random.default_rng(1)
    y = rng.normal(size=10)
    M = rng.normal(size=(3, 10))
    A = build_cv_gram(list(M), y).A
    for s in range(3):
        for t in range(3):
            assert A[s, t] == pytest.approx(sum((M[s, i] - y[i]) * (M[t, i] - y[i]) for i in range(10)), rel=1e-13)


@given(seed=st.integers(0, 2**31), S=st.integers(1, 12), n=st.integers(2, 60))
def test_gram_symmetric_psd(seed, S, n):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=n)
    A = build_cv_gram(list(rng.normal(size=(S, n)) * rng.uniform(0.1, 10)), y).A
    scale = np.abs(A).max()
    assert np.max(np.abs(A - A.T)) <= 1e-8 * scale
    assert np.linalg.eigvalsh(A).min() >= -1e-8 * scale


# --- QP ---------------------------------------------------------------------

def test_qp_examples():
    np.testing.assert_array_equal(solve_simplex_qp(np.array([[3.0]])).w, [1.0])
    w = solve_simplex_qp(np.diag([2.0, 1.0])).w
    np.testing.assert_allclose(w, [1 / 3, 2 / 3], atol=1e-9)
    assert w @ np.diag([2.0, 1.0]) @ w == pytest.approx(2 / 3, abs=1e-9)
    np.testing.assert_allclose(solve_simplex_qp(np.eye(3)).w, 1 / 3, atol=1e-9)


def test_qp_diag_matches_fine_grid():
    A = np.diag([2.0, 1.0])
    grid = np.arange(0, 1 + 1e-12, 1e-5)
    best = min(2 * a * a + (1 - a) ** 2 for a in grid)
    w = solve_simplex_qp(A).w
    assert abs(w @ A @ w - best) <= 1e-6


def test_qp_kkt_on_random_instances():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for k in range(200):
        S = int(rng.integers(2, 40))
        A = random_psd(rng, S, rank=int(rng.integers(1, S + 3)))
        w = solve_simplex_qp(A).w
        worst = max(worst, kkt_violation(A, w))
    assert worst <= 1e-6


@pytest.mark.parametrize("S", [2, 3])
def test_qp_matches_grid_oracle(S):
    rng = np.random.default_rng(S)
    step = 2e-4 if S == 2 else 2.5e-3
    for _ in range(10):
        A = random_psd(rng, S, rank=int(rng.integers(1, S + 2)))
        w = solve_simplex_qp(A).w
        f = w @ A @ w
        grid_best = min(g @ A @ g for g in simplex_grid(S, step))
        assert f <= grid_best + 1e-6 * max(1.0, abs(grid_best))


def test_qp_rejects_indefinite():
    with pytest.raises(ConditioningError):
        solve_simplex_qp(np.array([[1.0, 0.0], [0.0, -1.0]]))


@given(v=st.lists(st.floats(-5, 5), min_size=1, max_size=20))
def test_projection_lands_on_simplex(v):
    w = project_simplex(np.array(v))
    assert np.all(w >= 0) and w.sum() == pytest.approx(1.0, abs=1e-12)


def test_cv_identity():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n, S = int(rng.integers(5, 80)), int(rng.integers(1, 8))
        y = rng.normal(size=n)
        M = y + rng.normal(size=(S, n))
        G = build_cv_gram(list(M), y)
        w = solve_simplex_qp(G).w
        lhs = G.cv(w)
        rhs = float(np.sum((average_predictions(w, M) - y) ** 2))
        assert abs(lhs - rhs) <= 1e-8 * rhs


def test_average_predictions_examples():
    rng = np.random.default_rng(3)
    P = rng.normal(size=(3, 4))
    np.testing.assert_array_equal(average_predictions([0, 0, 1], P), P[2])
    same = np.tile(P[0], (3, 1))
    np.testing.assert_allclose(average_predictions([0.2, 0.5, 0.3], same), P[0], rtol=1e-14)
    w = np.array([0.2, 0.5, 0.3])
    brute = [sum(w[s] * P[s, i] for s in range(3)) for i in range(4)]
    np.testing.assert_allclose(average_predictions(w, P), brute, rtol=1e-14)


# --- information criteria ---------------------------------------------------

def test_ic_select_examples():
    assert ic_select(_scores([1.0]), "aic") == 0
    assert ic_select(_scores([5.0, 3.0, 4.0]), "bic") == 1
    assert ic_select(_scores([2.0, 1.0, 1.0]), "aicc") == 1
    assert ic_select(_scores([1.0, 2.0]), "aic", eligible=[False, True]) == 1
    with pytest.raises(NoSelectableModelError):
        ic_select(_scores([math.inf, math.inf]), "aicc")
    with pytest.raises(ValueError):
        ic_select(_scores([1.0]), "hqic")


def test_smoothed_weights_examples():
    np.testing.assert_allclose(smoothed_ic_weights(_scores([3.0, 3.0, 3.0]), "aic").w, 1 / 3, rtol=1e-15)
    w = smoothed_ic_weights(_scores([0.0, 2.0]), "aic").w
    np.testing.assert_allclose(w, [1 / (1 + math.exp(-1)), math.exp(-1) / (1 + math.exp(-1))], rtol=1e-14)
    assert w[0] == pytest.approx(0.7311, abs=1e-4)
    w = smoothed_ic_weights(_scores([0.0, math.inf]), "aicc").w
    np.testing.assert_array_equal(w, [1.0, 0.0])


@given(vals=st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=10), shift=st.floats(-1e3, 1e3))
def test_smoothed_weights_shift_invariant(vals, shift):
    a = smoothed_ic_weights(_scores(vals), "aic").w
    b = smoothed_ic_weights(_scores([v + shift for v in vals]), "aic").w
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@pytest.fixture(scope="module")
def small_fit():
    data, _, _ = sin_data(30, 3, seed=12, r2=0.7)
    spec = CandidateSpec((0, 1, 2))
    return data, nls_fit(data, spec, make_partition(30, 15))


def test_aic_bic_formula_oracle(small_fit):
    data, fit = small_fit
    sc = ic_scores(data, fit)
    n = data.n
    z = data.design(fit.spec) @ fit.beta_hat
    h = fit.bandwidth.h
    tr = sum(1.0 / sum(math.exp(-0.5 * ((z[i] - z[j]) / h) ** 2) for j in range(n)) for i in range(n))
    s2 = sum((data.y[i] - fit.mu_hat[i]) ** 2 for i in range(n)) / n
    assert sc.aic == pytest.approx(n * math.log(s2) + 2 * tr, rel=1e-8)
    assert sc.bic == pytest.approx(n * math.log(s2) + math.log(n) * tr, rel=1e-8)


def test_aicc_with_finite_difference_derivatives(small_fit):
    data, fit = small_fit
    X = data.design(fit.spec)
    n, p = X.shape
    K = smoother_matrix(X, fit.beta_hat, fit.bandwidth).W
    V = np.zeros((n, p))
    eps = 1e-6
    for r in range(p):
        e = np.eye(p)[r] * eps
        V[:, r] = (smoother_matrix(X, fit.beta_hat + e, fit.bandwidth).W @ data.y
                   - smoother_matrix(X, fit.beta_hat - e, fit.bandwidth).W @ data.y) / (2 * eps)
    Hh = V @ np.linalg.pinv(V.T @ V) @ V.T
    T = np.trace(Hh) + np.trace(K) - np.trace(Hh @ K)
    s2 = np.mean((data.y - fit.mu_hat) ** 2)
    assert ic_scores(data, fit).aicc == pytest.approx(math.log(s2) + (n + T) / (n - 2 - T), rel=1e-6)


def test_uniform_smoother_trace_is_one():
    assert smoother_matrix(np.zeros((7, 1)), [1.0], 1.0).trace == pytest.approx(1.0, rel=1e-14)
