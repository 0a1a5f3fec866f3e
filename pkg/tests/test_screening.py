import numpy as np
import pytest

from simavg.data import Dataset
from simavg.errors import DegenerateScreenError
from simavg.kernel import Bandwidth
from simavg.montecarlo import DgpSpec, generate, segment_length
from simavg.screening import marginal_correlations, screen_by_correlation, screen_by_lambda_path


def test_perfectly_correlated_column_ranks_first():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 3))
    res = screen_by_correlation(Dataset(X[:, 2].copy(), X), count=1)
    assert res.candidates[0].indices == (2,)
    assert res.provenance[0]["abs_corr"] == pytest.approx(1.0)


def test_ranking_matches_brute_force():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, 5))
    y = X @ [0.1, -2.0, 0.5, 1.0, 0.0] + rng.normal(size=50)
    corr = [abs(np.corrcoef(X[:, j], y)[0, 1]) for j in range(5)]
    np.testing.assert_allclose(np.abs(marginal_correlations(Dataset(y, X))), corr, rtol=1e-12)
    res = screen_by_correlation(Dataset(y, X), count=5)
    assert res.candidates[-1].indices == tuple(np.argsort(corr)[::-1])


def test_nested_with_forced_and_excluded():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(40, 8))
    y = X @ np.arange(8.0) + rng.normal(size=40)
    res = screen_by_correlation(Dataset(y, X), forced=[0], count=5, exclude=[6, 7])
    specs = res.candidates
    assert [s.size for s in specs] == [2, 3, 4, 5, 6]
    for a, b in zip(specs, specs[1:]):
        assert set(a.indices) < set(b.indices)
    assert all(s.indices[0] == 0 and 6 not in s.indices and 7 not in s.indices for s in specs)
    with pytest.raises(ValueError):
        screen_by_correlation(Dataset(y, X), forced=[0], count=8, exclude=[6])


def test_situation3_count():
    assert segment_length(100) == 7
    train = generate(DgpSpec(situation="3", n_train=100), 0).train
    L = segment_length(100)
    res = screen_by_correlation(train, forced=[0], count=L, exclude=[train.p - 2, train.p - 1])
    assert len(res.candidates) == 7


def test_lambda_grid_values():
    assert np.linspace(0.001, 0.02, 10)[1] == pytest.approx(0.0031111, abs=1e-7)


@pytest.fixture(scope="module")
def pgn_path():
    train = generate(DgpSpec(situation="pgreatern", r_squared=0.7), 3).train
    train = train.drop_columns([train.p - 1])
    return screen_by_lambda_path(train, 0.001, 0.02, 10, max_sweeps=3, warm_iters=300)


def test_lambda_path_records_grid_and_anchor(pgn_path):
    lams = [p["lambda"] for p in pgn_path.provenance]
    grid = np.linspace(0.001, 0.02, 10)
    assert all(np.any(np.isclose(l, grid, rtol=0, atol=1e-15)) for l in lams)
    assert lams == sorted(lams)
    assert all(c.indices[0] == 0 for c in pgn_path.candidates)
    assert len({c.indices for c in pgn_path.candidates}) == len(pgn_path.candidates)


def test_lambda_path_near_monotone_shrinkage(pgn_path):
    sizes = [c.size for c in pgn_path.candidates]
    violations = sum(b > a for a, b in zip(sizes, sizes[1:]))
    assert violations <= 1


def test_large_lambda_ends_in_anchor_only():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(60, 6))
    y = np.sin(np.pi * (X[:, 0] + 2 * X[:, 1]) / 6) + 0.1 * rng.normal(size=60)
    res = screen_by_lambda_path(Dataset(y, X), 1e-4, 100.0, 4, bandwidth=Bandwidth.from_kappa(1.0, 60))
    assert res.candidates[-1].indices == (0,)
    assert res.candidates[0].size > 1
    with pytest.raises(DegenerateScreenError):
        screen_by_lambda_path(Dataset(y, X), 50.0, 100.0, 3, bandwidth=Bandwidth.from_kappa(1.0, 60))
