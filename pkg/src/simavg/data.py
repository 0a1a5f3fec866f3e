"""Datasets, candidate specifications, CV block partitions and weight vectors."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import compress
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DataError(ValueError):
    """Malformed input data (bad CSV, shape mismatch, non-finite values)."""


@dataclass(frozen=True, eq=False)
class Dataset:
    y: np.ndarray
    X: np.ndarray
    names: tuple[str, ...] | None = None
    response_name: str = "y"

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=float).reshape(-1)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        X = np.asfortranarray(X)
        if X.ndim != 2:
            raise DataError("X must be a 2-d matrix")
        if y.shape[0] != X.shape[0]:
            raise DataError(f"y has {y.shape[0]} entries but X has {X.shape[0]} rows")
        if y.shape[0] < 2:
            raise DataError("a dataset needs at least 2 observations")
        if X.shape[1] < 1:
            raise DataError("a dataset needs at least 1 covariate")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise DataError("dataset contains non-finite entries")
        names = self.names
        if names is None:
            names = tuple(f"x{j + 1}" for j in range(X.shape[1]))
        names = tuple(str(s) for s in names)
        if len(names) != X.shape[1]:
            raise DataError(f"{len(names)} names given for {X.shape[1]} covariates")
        y.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def rows(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.y[idx], self.X[idx], self.names, self.response_name)

    def design(self, spec: "CandidateSpec") -> np.ndarray:
        """Covariate sub-matrix for a candidate, columns in the candidate's order."""
        spec.check(self.p)
        return np.ascontiguousarray(self.X[:, list(spec.indices)])

    def drop_columns(self, cols: Iterable[int]) -> "Dataset":
        drop = set(int(c) for c in cols)
        keep = [j for j in range(self.p) if j not in drop]
        return Dataset(self.y, self.X[:, keep], tuple(self.names[j] for j in keep), self.response_name)


def load_csv(path) -> Dataset:
    """Read a dataset: header row, response in the first column, covariates after.

    Raises DataError with the offending line and column on parse failures.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file (expected a header row)") from None
        if len(header) < 2:
            raise DataError(f"{path}: line 1: need a response column and at least one covariate")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            vals = []
            for col, cell in enumerate(row, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: line {lineno}, column {col}: cannot parse {cell!r} as a number") from None
                if not np.isfinite(v):
                    raise DataError(f"{path}: line {lineno}, column {col}: non-finite value {cell!r}")
                vals.append(v)
            rows.append(vals)
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    return Dataset(arr[:, 0], arr[:, 1:], tuple(h.strip() for h in header[1:]), header[0].strip())


def read_table(path) -> tuple[list[str], np.ndarray]:
    """Header and numeric body of a CSV; zero data rows is allowed."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file (expected a header row)") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                col = next(i for i, c in enumerate(row, 1) if not _is_float(c))
                raise DataError(f"{path}: line {lineno}, column {col}: cannot parse {row[col - 1]!r} as a number") from None
    return header, np.array(rows, dtype=float).reshape(-1, len(header))


def _is_float(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def write_csv(path, data: Dataset):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([data.response_name, *data.names])
        for yi, xi in zip(data.y, data.X):
            w.writerow([repr(float(yi)), *(repr(float(v)) for v in xi)])


@dataclass(frozen=True)
class CandidateSpec:
    """Ordered covariate subset; ``indices[0]`` is the coefficient fixed at 1."""

    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if not idx:
            raise ValueError("a candidate needs at least one covariate")
        if len(set(idx)) != len(idx):
            raise ValueError(f"duplicate covariate indices in {idx}")
        if min(idx) < 0:
            raise ValueError(f"negative covariate index in {idx}")
        object.__setattr__(self, "indices", idx)

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def anchor(self) -> int:
        return self.indices[0]

    def check(self, p: int):
        if max(self.indices) >= p:
            raise ValueError(f"candidate {self.indices} refers to covariates beyond p={p}")

    def contains(self, cols: Iterable[int]) -> bool:
        return set(int(c) for c in cols) <= set(self.indices)


def enumerate_candidates(p: int, always_include=(), always_exclude=(), uncertain=()) -> list[CandidateSpec]:
    """All models made of ``always_include`` plus a nonempty subset of ``uncertain``.

    Subsets follow binary counting over the sorted uncertain indices (bit b set
    means ``uncertain[b]`` is in), so the list order is reproducible.
    """
    inc = sorted(set(int(i) for i in always_include))
    exc = set(int(i) for i in always_exclude)
    unc = sorted(set(int(i) for i in uncertain))
    if not unc:
        raise ValueError("the uncertain set must be nonempty")
    if set(inc) & exc or set(inc) & set(unc) or exc & set(unc):
        raise ValueError("always_include, always_exclude and uncertain must be disjoint")
    for i in (*inc, *exc, *unc):
        if not 0 <= i < p:
            raise ValueError(f"covariate index {i} outside [0, {p})")
    specs = []
    for mask in range(1, 2 ** len(unc)):
        subset = list(compress(unc, ((mask >> b) & 1 for b in range(len(unc)))))
        specs.append(CandidateSpec(tuple(sorted(inc + subset))))
    return specs


@dataclass(frozen=True)
class BlockPartition:
    """Consecutive CV blocks of ``block_size`` observations; the last one absorbs ``n mod block_size``."""

    n: int
    block_size: int
    blocks: tuple[tuple[int, int], ...] = field(repr=False)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def degenerate(self) -> bool:
        """True when there is a single block, so nothing can be left out."""
        return self.n_blocks < 2

    def block_of(self, i: int) -> int:
        if not 0 <= i < self.n:
            raise IndexError(i)
        return min(i // self.block_size, self.n_blocks - 1)

    def indices(self, j: int) -> np.ndarray:
        start, stop = self.blocks[j]
        return np.arange(start, stop)

    def retained(self, j: int) -> np.ndarray:
        start, stop = self.blocks[j]
        return np.concatenate([np.arange(0, start), np.arange(stop, self.n)])

    def labels(self) -> np.ndarray:
        out = np.empty(self.n, dtype=np.int64)
        for j, (a, b) in enumerate(self.blocks):
            out[a:b] = j
        return out


def make_partition(n: int, target_block_size: int) -> BlockPartition:
    n, m = int(n), int(target_block_size)
    if m < 1 or m > n:
        raise ValueError(f"block size must lie in [1, n={n}], got {m}")
    j = n // m
    blocks = [(b * m, (b + 1) * m) for b in range(j)]
    blocks[-1] = (blocks[-1][0], n)
    return BlockPartition(n, m, tuple(blocks))


@dataclass(frozen=True, eq=False)
class WeightVector:
    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=float).reshape(-1)
        if w.size == 0:
            raise ValueError("empty weight vector")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if np.any(w < 0) or np.any(w > 1):
            raise ValueError("weights must lie in [0, 1]")
        if abs(w.sum() - 1.0) > 1e-10:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    def __len__(self):
        return self.w.size

    def __array__(self, dtype=None, copy=None):
        return self.w if dtype is None else self.w.astype(dtype)

    @classmethod
    def vertex(cls, size: int, k: int) -> "WeightVector":
        w = np.zeros(size)
        w[k] = 1.0
        return cls(w)

    @classmethod
    def from_unnormalized(cls, w: Sequence[float]) -> "WeightVector":
        """Clip round-off negatives and rescale to the simplex."""
        w = np.clip(np.asarray(w, dtype=float), 0.0, None)
        return cls(w / w.sum())
