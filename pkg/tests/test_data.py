import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from simavg.data import (BlockPartition, CandidateSpec, DataError, Dataset, WeightVector, enumerate_candidates,
                         load_csv, make_partition, read_table, write_csv)


def test_dataset_defaults_and_readonly():
    d = Dataset([1.0, 2.0, 3.0], [[1, 2], [3, 4], [5, 6]])
    assert d.n == 3 and d.p == 2
    assert d.names == ("x1", "x2")
    with pytest.raises(ValueError):
        d.X[0, 0] = 9.0


@pytest.mark.parametrize("y, X", [
    ([1.0], [[1.0]]),
    ([1.0, 2.0], [[1.0], [2.0], [3.0]]),
    ([1.0, np.nan], [[1.0], [2.0]]),
    ([1.0, 2.0], [[1.0], [np.inf]]),
])
def test_dataset_rejects_bad_input(y, X):
    with pytest.raises(DataError):
        Dataset(y, X)


def test_design_follows_candidate_order():
    d = Dataset(np.zeros(3), np.arange(12.0).reshape(3, 4))
    np.testing.assert_array_equal(d.design(CandidateSpec((2, 0))), d.X[:, [2, 0]])
    with pytest.raises(ValueError):
        d.design(CandidateSpec((4,)))


def test_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    d = Dataset(rng.normal(size=5), rng.normal(size=(5, 2)), ("a", "b"), "resp")
    write_csv(tmp_path / "d.csv", d)
    e = load_csv(tmp_path / "d.csv")
    assert e.names == ("a", "b") and e.response_name == "resp"
    np.testing.assert_array_equal(e.X, d.X)
    np.testing.assert_array_equal(e.y, d.y)


def test_csv_reports_line_and_column(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("y,x1,x2\n1,2,3\n4,oops,6\n")
    with pytest.raises(DataError, match="line 3, column 2"):
        load_csv(f)
    f.write_text("y,x1\n1,2,3\n")
    with pytest.raises(DataError, match="line 2"):
        load_csv(f)


def test_read_table_allows_zero_rows(tmp_path):
    f = tmp_path / "empty.csv"
    f.write_text("y,x1,x2\n")
    header, body = read_table(f)
    assert header == ["y", "x1", "x2"]
    assert body.shape[0] == 0


def test_enumeration_matches_design_of_31_models():
    specs = enumerate_candidates(7, always_include=[0], always_exclude=[6], uncertain=range(1, 6))
    assert len(specs) == 31
    assert len({s.indices for s in specs}) == 31
    assert all(s.indices[0] == 0 and 6 not in s.indices for s in specs)
    assert specs[0].indices == (0, 1)
    assert specs[-1].indices == (0, 1, 2, 3, 4, 5)


def test_enumeration_rejects_overlap():
    with pytest.raises(ValueError):
        enumerate_candidates(5, always_include=[0], uncertain=[0, 1])
    with pytest.raises(ValueError):
        enumerate_candidates(5, always_include=[0])


def test_candidate_spec_validation():
    with pytest.raises(ValueError):
        CandidateSpec(())
    with pytest.raises(ValueError):
        CandidateSpec((1, 1))
    assert CandidateSpec((3, 1)).anchor == 3
    assert CandidateSpec((0, 2, 4)).contains([2, 4])


def test_partition_absorbs_remainder():
    part = make_partition(130, 50)
    assert part.n_blocks == 2
    assert list(part.indices(1)) == list(range(50, 130))
    assert part.block_of(129) == 1
    assert make_partition(40, 40).degenerate
    assert not part.degenerate
    with pytest.raises(ValueError):
        make_partition(10, 0)


@given(n=st.integers(2, 400), m=st.integers(1, 400))
def test_partition_covers_each_row_once(n, m):
    if m > n:
        with pytest.raises(ValueError):
            make_partition(n, m)
        return
    part = make_partition(n, m)
    assert isinstance(part, BlockPartition)
    rows = np.concatenate([part.indices(j) for j in range(part.n_blocks)])
    np.testing.assert_array_equal(rows, np.arange(n))
    np.testing.assert_array_equal(part.labels(), [part.block_of(i) for i in range(n)])
    assert part.n_blocks == n // m


def test_weight_vector_checks():
    w = WeightVector([0.25, 0.75])
    assert np.asarray(w).sum() == 1.0
    with pytest.raises(ValueError):
        WeightVector([0.5, 0.6])
    with pytest.raises(ValueError):
        WeightVector([-0.1, 1.1])
    np.testing.assert_array_equal(WeightVector.vertex(3, 1).w, [0, 1, 0])
