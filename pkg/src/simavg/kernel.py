"""Gaussian kernel, bandwidth rule and Nadaraya-Watson smoother matrices."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._fast import nw_cross
from .data import BlockPartition, CandidateSpec, Dataset
from .errors import DegenerateRowError, NoValidBandwidthError

DEFAULT_KAPPA_GRID = (0.5, 1.0, 1.5, 2.0, 3.0)
MODES = ("full", "loo", "lbo")


def gaussian_kernel(u):
    return np.exp(-0.5 * np.square(u)) / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Bandwidth:
    h: float
    kappa: float

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValueError(f"bandwidth must be positive and finite, got {self.h}")

    @classmethod
    def from_kappa(cls, kappa: float, n: int) -> "Bandwidth":
        """h = kappa * n^(-1/5) * log(n)^(-1/6)."""
        if kappa <= 0:
            raise ValueError("kappa must be positive")
        if n < 2:
            raise ValueError("the bandwidth rule needs n >= 2")
        return cls(kappa * n ** (-0.2) * math.log(n) ** (-1.0 / 6.0), float(kappa))


def _h(h) -> float:
    return float(h.h) if isinstance(h, Bandwidth) else float(h)


@dataclass(frozen=True, eq=False)
class SmootherMatrix:
    W: np.ndarray
    mode: str
    partition: BlockPartition | None = None

    @property
    def trace(self) -> float:
        return float(np.trace(self.W))


def smoother_matrix(X_s, beta, h, mode: str = "full", partition: BlockPartition | None = None) -> SmootherMatrix:
    """Row-normalised kernel weights k_h(z_i - z_j) over each row's admissible columns.

    ``mode`` selects the admissible set: ``"full"`` (all j), ``"loo"`` (j != i)
    or ``"lbo"`` (j outside the block of i; needs ``partition``).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    X_s = np.asarray(X_s, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if X_s.ndim == 1:
        X_s = X_s[:, None]
    if beta.shape != (X_s.shape[1],):
        raise ValueError("beta length must match the number of columns of X_s")
    hh = _h(h)
    if not hh > 0:
        raise ValueError("bandwidth must be positive")
    z = X_s @ beta
    K = gaussian_kernel((z[:, None] - z[None, :]) / hh) / hh
    n = z.size
    if mode == "loo":
        np.fill_diagonal(K, 0.0)
    elif mode == "lbo":
        if partition is None or partition.n != n:
            raise ValueError("leave-block-out mode needs a partition over the same n")
        lab = partition.labels()
        K[lab[:, None] == lab[None, :]] = 0.0
    s = K.sum(axis=1)
    bad = np.flatnonzero(s == 0.0)
    if bad.size:
        raise DegenerateRowError(bad[0])
    W = K / s[:, None]
    W.setflags(write=False)
    return SmootherMatrix(W, mode, partition if mode == "lbo" else None)


def fitted_means(S: SmootherMatrix, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if S.W.shape[1] != y.shape[0]:
        raise ValueError("smoother and response dimensions disagree")
    return S.W @ y


def link_derivative(X_s, beta, h, y, at_row=None) -> np.ndarray:
    """Derivative of the in-sample NW fit g_hat(x_i' beta) with respect to beta.

    Differentiates through the kernel weights (the fitted curve moves with
    beta as well as the evaluation point). ``at_row=None`` returns the n x p_s
    matrix of all rows.
    """
    X_s = np.asarray(X_s, dtype=float)
    if X_s.ndim == 1:
        X_s = X_s[:, None]
    beta = np.asarray(beta, dtype=float)
    y = np.asarray(y, dtype=float)
    hh = _h(h)
    z = X_s @ beta
    rows = np.arange(z.size) if at_row is None else np.atleast_1d(at_row)
    D = z[rows, None] - z[None, :]
    K = np.exp(-0.5 * (D / hh) ** 2)
    s = K.sum(axis=1)
    bad = np.flatnonzero(s == 0.0)
    if bad.size:
        raise DegenerateRowError(rows[bad[0]])
    W = K / s[:, None]
    yh = W @ y
    G = W * (-D / hh**2) * (y[None, :] - yh[:, None])
    out = G.sum(axis=1)[:, None] * X_s[rows] - G @ X_s
    return out if at_row is None else out[0]


def leave_block_out_means(X_s, y, betas, h, partition: BlockPartition, *, strict=False) -> np.ndarray:
    """Out-of-block NW fits; block j's rows use ``betas[j]`` and only the other blocks' data.

    ``betas`` may be a single coefficient vector shared by all blocks.
    """
    if partition.degenerate:
        raise ValueError("leave-block-out fits need at least two blocks")
    X_s = np.asarray(X_s, dtype=float)
    y = np.asarray(y, dtype=float)
    betas = np.asarray(betas, dtype=float)
    if betas.ndim == 1:
        betas = np.broadcast_to(betas, (partition.n_blocks, betas.size))
    hh = _h(h)
    out = np.empty(partition.n)
    for j in range(partition.n_blocks):
        q = partition.indices(j)
        t = partition.retained(j)
        z = X_s @ betas[j]
        vals, raw_zero = nw_cross(z[q], z[t], y[t], hh)
        if strict and raw_zero.any():
            raise DegenerateRowError(q[np.argmax(raw_zero)])
        out[q] = vals
    return out


def select_bandwidth(data: Dataset, spec: CandidateSpec, beta, kappa_grid=DEFAULT_KAPPA_GRID,
                     partition: BlockPartition | None = None) -> Bandwidth:
    """Pick kappa from the grid by leave-block-out squared prediction error at ``beta``."""
    grid = sorted(float(k) for k in kappa_grid)
    if not grid or grid[0] <= 0:
        raise ValueError("kappa grid must be nonempty and positive")
    if partition is None:
        raise ValueError("a block partition is required")
    if len(grid) == 1:
        return Bandwidth.from_kappa(grid[0], data.n)
    X_s = data.design(spec)
    best, best_err = None, np.inf
    for kappa in grid:
        bw = Bandwidth.from_kappa(kappa, data.n)
        try:
            mt = leave_block_out_means(X_s, data.y, beta, bw, partition, strict=True)
        except DegenerateRowError:
            continue
        err = float(np.sum((mt - data.y) ** 2))
        if err < best_err:
            best, best_err = bw, err
    if best is None:
        raise NoValidBandwidthError(f"every kappa in {grid} leaves a degenerate smoother row")
    return best


def cv_errors(data: Dataset, spec: CandidateSpec, beta, kappa_grid, partition: BlockPartition) -> dict:
    """Leave-block-out squared error for each kappa (nan where degenerate)."""
    X_s = data.design(spec)
    out = {}
    for kappa in kappa_grid:
        bw = Bandwidth.from_kappa(kappa, data.n)
        try:
            mt = leave_block_out_means(X_s, data.y, beta, bw, partition, strict=True)
            out[float(kappa)] = float(np.sum((mt - data.y) ** 2))
        except DegenerateRowError:
            out[float(kappa)] = float("nan")
    return out
