"""CV Gram matrix, simplex-constrained QP weights and information-criterion baselines."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset, WeightVector
from .errors import (ConditioningError, NoSelectableModelError,
                     QpNotConvergedWarning, RankDeficiencyWarning)
from .estimator import FittedCandidate
from .kernel import link_derivative, smoother_matrix

CRITERIA = ("aic", "bic", "aicc")
SIGMA2_FLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class CvGram:
    A: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("CV Gram matrix must be square")
        A = 0.5 * (A + A.T)
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @property
    def size(self) -> int:
        return self.A.shape[0]

    def cv(self, w) -> float:
        w = np.asarray(w, dtype=float)
        return float(w @ self.A @ w)


def build_cv_gram(candidates: Sequence[FittedCandidate], y) -> CvGram:
    """A[s, m] = (mu_tilde_s - y)'(mu_tilde_m - y)."""
    y = np.asarray(y, dtype=float)
    if not candidates:
        raise ValueError("no candidates")
    R = []
    for c in candidates:
        mt = c.mu_tilde if isinstance(c, FittedCandidate) else np.asarray(c, dtype=float)
        if mt.shape != y.shape:
            raise ValueError(f"leave-block-out fit has length {mt.shape[0]}, response has {y.shape[0]}")
        R.append(mt - y)
    R = np.array(R)
    return CvGram(R @ R.T)


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto {w >= 0, sum w = 1}."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1.0), 0.0)


def kkt_violation(A, w) -> float:
    """Largest scaled violation of the simplex-QP optimality conditions at ``w``.

    With g = 2Aw and mu the mean of g over the support, returns the max of
    |g_s - mu| / (1 + |mu|) on the support and (mu - g_s) / (1 + |mu|) off it.
    """
    A = np.asarray(A, dtype=float)
    w = np.asarray(w, dtype=float)
    g = 2.0 * A @ w
    sup = w > 1e-10
    mu = float(np.mean(g[sup]))
    scale = 1.0 + abs(mu)
    on = np.max(np.abs(g[sup] - mu)) / scale
    off = np.max(mu - g[~sup], initial=-np.inf) / scale
    return float(max(on, off, 0.0))


def _psd_checked(A):
    A = 0.5 * (A + A.T)
    eig = np.linalg.eigvalsh(A)
    norm = float(np.max(np.abs(eig))) if eig.size else 0.0
    lo = float(eig[0])
    if lo < -1e-8 * norm:
        raise ConditioningError(
            f"CV Gram matrix is not positive semidefinite (min eigenvalue {lo:.3e}, norm {norm:.3e}); "
            "add a diagonal jitter or drop near-duplicate candidates")
    if lo < 0:
        A = A + max(1e-10 * np.trace(A) / A.shape[0], -lo) * np.eye(A.shape[0])
        eig = np.linalg.eigvalsh(A)
    return A, float(eig[-1])


def _active_set_polish(A, w, tol=1e-12, max_iter=None):
    """Primal active-set iterations from a feasible point (exact on the final support)."""
    S = w.size
    max_iter = max_iter or 4 * S + 10
    w = w.copy()
    w[w < 1e-12] = 0.0
    w /= w.sum()
    fixed = w == 0.0
    for _ in range(max_iter):
        F = np.flatnonzero(~fixed)
        g = 2.0 * A @ w
        k = F.size
        K = np.zeros((k + 1, k + 1))
        K[:k, :k] = 2.0 * A[np.ix_(F, F)]
        K[:k, k] = 1.0
        K[k, :k] = 1.0
        rhs = np.concatenate([-g[F], [0.0]])
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        step = sol[:k]
        if np.max(np.abs(step), initial=0.0) <= tol:
            mu = float(np.mean(g[F]))
            lagr = g - mu
            lagr[~fixed] = 0.0
            worst = int(np.argmin(lagr))
            if lagr[worst] >= -1e-12 * (1.0 + abs(mu)):
                return w
            fixed[worst] = False
            continue
        neg = step < 0
        alpha = 1.0
        block = -1
        if np.any(neg):
            ratios = -w[F][neg] / step[neg]
            i = int(np.argmin(ratios))
            if ratios[i] < 1.0:
                alpha = float(ratios[i])
                block = int(F[np.flatnonzero(neg)[i]])
        w[F] += alpha * step
        if block >= 0:
            w[block] = 0.0
            fixed[block] = True
        w = np.maximum(w, 0.0)
        w /= w.sum()
    return w


def _fista(A, w, L, max_iter, gap_tol):
    v = w.copy()
    t = 1.0
    f = float(w @ A @ w)
    for it in range(max_iter):
        w_new = project_simplex(v - (2.0 * A @ v) / L)
        f_new = float(w_new @ A @ w_new)
        if f_new > f:
            v, t = w.copy(), 1.0
            continue
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        v = w_new + ((t - 1.0) / t_new) * (w_new - w)
        w, f, t = w_new, f_new, t_new
        g = 2.0 * A @ w
        if float(g @ w - g.min()) <= gap_tol * max(1.0, abs(f)):
            return w, f, True, it + 1
    return w, f, False, max_iter


def solve_simplex_qp(A, *, max_iter: int = 10000, gap_tol: float = 1e-10) -> WeightVector:
    """argmin_w w'Aw over the probability simplex.

    Accelerated projected gradient (with restarts) gets close to the optimum,
    then primal active-set steps make the support solution exact. If the
    polished point fails the KKT check, the gradient phase continues to a
    Frank-Wolfe gap of ``gap_tol`` (relative) or ``max_iter`` iterations.
    """
    A = A.A if isinstance(A, CvGram) else np.asarray(A, dtype=float)
    S = A.shape[0]
    if S == 1:
        return WeightVector([1.0])
    A, lam_max = _psd_checked(A)
    if lam_max <= 0:
        return WeightVector(np.full(S, 1.0 / S))
    L = 2.0 * lam_max
    w0 = np.full(S, 1.0 / S)
    w, f, _, used = _fista(A, w0, L, min(max_iter, 500), 1e-6)
    polished = _active_set_polish(A, w)
    fp = float(polished @ A @ polished)
    if fp <= f + 1e-14 * max(1.0, abs(f)) and kkt_violation(A, polished) <= 1e-9:
        return WeightVector.from_unnormalized(polished)
    w, f, converged, _ = _fista(A, w, L, max_iter - used, gap_tol)
    polished = _active_set_polish(A, w)
    if float(polished @ A @ polished) <= f + 1e-14 * max(1.0, abs(f)):
        w = polished
        converged = converged or kkt_violation(A, w) <= 1e-6
    if not converged:
        warnings.warn("simplex QP hit its iteration cap; returning the best iterate", QpNotConvergedWarning)
    return WeightVector.from_unnormalized(w)


def average_predictions(w, per_candidate) -> np.ndarray:
    """sum_s w_s * per_candidate[s]."""
    w = np.asarray(w, dtype=float)
    P = np.asarray(per_candidate, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if P.shape[0] != w.size:
        raise ValueError(f"{w.size} weights for {P.shape[0]} candidates")
    return w @ P


@dataclass(frozen=True)
class IcScores:
    aic: float
    bic: float
    aicc: float
    sigma2_hat: float
    trace_K: float
    trace_H_combined: float
    sigma2_floored: bool = False
    rank_deficient: bool = False

    def score(self, criterion: str) -> float:
        if criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {criterion!r}; expected one of {CRITERIA}")
        return getattr(self, criterion)


def ic_scores(data: Dataset, fit: FittedCandidate) -> IcScores:
    """AIC, BIC and the single-index AICC of one fitted candidate."""
    n = data.n
    X_s = data.design(fit.spec)
    r = data.y - fit.mu_hat
    sigma2 = float(r @ r) / n
    floored = sigma2 < SIGMA2_FLOOR
    sigma2 = max(sigma2, SIGMA2_FLOOR)
    K = smoother_matrix(X_s, fit.beta_hat, fit.bandwidth, mode="full").W
    trK = float(np.trace(K))
    aic = n * math.log(sigma2) + 2.0 * trK
    bic = n * math.log(sigma2) + math.log(n) * trK

    V = link_derivative(X_s, fit.beta_hat, fit.bandwidth, data.y)
    VtV = V.T @ V
    rank = np.linalg.matrix_rank(VtV)
    deficient = rank < VtV.shape[0]
    if deficient:
        warnings.warn(f"derivative matrix has rank {rank} < {VtV.shape[0]}; using a pseudo-inverse",
                      RankDeficiencyWarning)
    Hhat = V @ np.linalg.pinv(VtV) @ V.T
    T = float(np.trace(Hhat) + trK - np.sum(Hhat * K.T))
    denom = n - 2.0 - T
    aicc = math.log(sigma2) + (n + T) / denom if denom > 0 else math.inf
    return IcScores(aic, bic, aicc, sigma2, trK, T, floored, bool(deficient))


def ic_select(scores: Sequence[IcScores], criterion: str, eligible=None) -> int:
    """Index of the smallest score; ties go to the earlier candidate."""
    if not scores:
        raise ValueError("no scores")
    vals = np.array([s.score(criterion) for s in scores], dtype=float)
    if eligible is not None:
        vals = np.where(np.asarray(eligible, dtype=bool), vals, np.inf)
    if not np.any(np.isfinite(vals)):
        raise NoSelectableModelError(f"every candidate has an infinite {criterion.upper()} score")
    return int(np.argmin(vals))


def smoothed_ic_weights(scores: Sequence[IcScores], criterion: str) -> WeightVector:
    """w_s proportional to exp(-score_s / 2); infinite scores get weight 0.

    ``scores`` may also be plain numbers.
    """
    if len(scores) == 0:
        raise ValueError("no scores")
    vals = np.array([s.score(criterion) if isinstance(s, IcScores) else float(s) for s in scores])
    return _softmax_half(vals, criterion)


def _softmax_half(vals, criterion="score"):
    vals = np.asarray(vals, dtype=float)
    finite = np.isfinite(vals)
    if not finite.any():
        raise NoSelectableModelError(f"every candidate has an infinite {criterion} score")
    x = np.where(finite, -0.5 * vals, -np.inf)
    x -= x[finite].max()
    e = np.exp(x)
    return WeightVector.from_unnormalized(e / e.sum())


def write_weights_csv(path, specs, weights, scores=None, names=None):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["candidate", "indices", "covariates", "weight", "aic", "bic", "aicc"])
        for s, spec in enumerate(specs):
            sc = scores[s] if scores is not None else None
            covs = " ".join(names[i] for i in spec.indices) if names else ""
            w.writerow([s, " ".join(map(str, spec.indices)), covs, repr(float(weights[s])),
                        *(("" if sc is None else repr(float(getattr(sc, c)))) for c in CRITERIA)])
