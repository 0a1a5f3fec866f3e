"""Kernel-smoothed nonlinear least squares for one single-index candidate."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from ._fast import loo_objective, loo_value, nw_cross, side_search
from .data import BlockPartition, CandidateSpec, Dataset
from .errors import DegenerateRowError, NoValidBandwidthError
from .kernel import (DEFAULT_KAPPA_GRID, Bandwidth, leave_block_out_means,
                     select_bandwidth, smoother_matrix)

MAX_ITER = 500
FTOL = 1e-8


def check_index_coefficients(beta, p_s=None) -> np.ndarray:
    beta = np.array(beta, dtype=float).reshape(-1)
    if p_s is not None and beta.size != p_s:
        raise ValueError(f"expected {p_s} coefficients, got {beta.size}")
    if beta.size == 0 or beta[0] != 1.0:
        raise ValueError("the first index coefficient must equal 1")
    if not np.all(np.isfinite(beta)):
        raise ValueError("index coefficients must be finite")
    return beta


@dataclass(frozen=True, eq=False)
class FittedCandidate:
    spec: CandidateSpec
    beta_hat: np.ndarray
    bandwidth: Bandwidth
    mu_hat: np.ndarray
    mu_tilde: np.ndarray
    objective: float
    converged: bool
    block_betas: np.ndarray = field(repr=False)
    block_converged: tuple[bool, ...] = ()
    penalty: float = 0.0


@dataclass(frozen=True, eq=False)
class RegularizedFit:
    spec: CandidateSpec
    beta_hat: np.ndarray
    lam: float
    active_set: tuple[int, ...]
    objective: float
    penalized_objective: float
    history: tuple[float, ...]
    sweeps: int
    converged: bool


def _h(h) -> float:
    return float(h.h) if isinstance(h, Bandwidth) else float(h)


def nls_objective(data: Dataset, spec: CandidateSpec, beta, h) -> float:
    """n^-1 ||y - W y||^2 with W the leave-one-out smoother at ``beta``."""
    X_s = data.design(spec)
    beta = check_index_coefficients(beta, spec.size)
    W = smoother_matrix(X_s, beta, h, mode="loo").W
    r = data.y - W @ data.y
    return float(r @ r) / data.n


def ols_start(X_s, y) -> np.ndarray:
    """OLS slopes of y on X_s rescaled to a unit first entry; (1, 0, ..., 0) if that entry is ~0."""
    p_s = X_s.shape[1]
    start = np.zeros(p_s)
    start[0] = 1.0
    if p_s == 1:
        return start
    Z = np.column_stack([np.ones(X_s.shape[0]), X_s])
    b = np.linalg.lstsq(Z, y, rcond=None)[0][1:]
    scale = np.max(np.abs(b))
    if not np.all(np.isfinite(b)) or scale == 0 or abs(b[0]) <= 1e-6 * scale:
        return start
    return b / b[0]


def _minimize_index(X_s, y, h, start, maxiter=MAX_ITER):
    """L-BFGS on the free coordinates of the leave-one-out criterion."""
    n, p_s = X_s.shape
    start = check_index_coefficients(start, p_s)
    if p_s == 1:
        obj, _, _ = loo_objective(X_s[:, 0], y, h, False)
        return start, obj, True
    x0 = np.ascontiguousarray(X_s[:, 0])
    X1 = np.ascontiguousarray(X_s[:, 1:])

    def fun(theta):
        obj, v, _ = loo_objective(x0 + X1 @ theta, y, h, True)
        return obj, (-2.0 / n) * (X1.T @ v)

    res = minimize(fun, start[1:], jac=True, method="L-BFGS-B",
                   options={"maxiter": maxiter, "ftol": FTOL, "gtol": 1e-9, "maxls": 40})
    theta = res.x
    obj, grad = fun(theta)
    if not math.isfinite(obj) or not np.all(np.isfinite(theta)):
        return start, fun(start[1:])[0], False
    converged = res.nit < maxiter and float(np.linalg.norm(grad)) <= 1e-3 * (1.0 + abs(obj))
    return np.concatenate([[1.0], theta]), float(obj), bool(converged)


def _best_start(X_s, y, h, starts):
    best = None
    for s in starts:
        beta, obj, conv = _minimize_index(X_s, y, h, s)
        if best is None or obj < best[1]:
            best = (beta, obj, conv)
    return best


def _dedupe(starts):
    out = []
    for s in starts:
        if not any(np.array_equal(s, t) for t in out):
            out.append(s)
    return out


def _block_fit(X_s, y, partition: BlockPartition, block: int, h, init=None):
    if partition.degenerate:
        raise ValueError("a single-block partition cannot leave a block out")
    if not 0 <= block < partition.n_blocks:
        raise IndexError(f"block {block} outside [0, {partition.n_blocks})")
    keep = partition.retained(block)
    if keep.size < 2:
        raise ValueError("deleting the block leaves fewer than 2 observations")
    Xr, yr = X_s[keep], y[keep]
    starts = [ols_start(Xr, yr), np.eye(1, X_s.shape[1])[0]]
    if init is not None:
        starts.append(check_index_coefficients(init, X_s.shape[1]))
    beta, _, conv = _best_start(Xr, yr, _h(h), _dedupe(starts))
    return beta, conv


def leave_block_out_fit(data: Dataset, spec: CandidateSpec, partition: BlockPartition, block: int,
                        h, init=None) -> np.ndarray:
    """NLS coefficients estimated without the observations of ``block``.

    Starts are the OLS slopes of the retained rows, (1, 0, ..., 0) and ``init`` if given.
    """
    if partition.n != data.n:
        raise ValueError("partition does not match the dataset size")
    beta, _ = _block_fit(data.design(spec), data.y, partition, block, h, init)
    return beta


def nls_fit(data: Dataset, spec: CandidateSpec, partition: BlockPartition, kappa_grid=DEFAULT_KAPPA_GRID,
            init=None, *, bandwidth: Bandwidth | None = None, zero_start: bool = True,
            reselect: bool = False) -> FittedCandidate:
    """Fit one candidate: bandwidth, full-sample NLS and the leave-block-out refits.

    Starts are the rescaled OLS slopes, (1, 0, ..., 0) and ``init`` if given;
    the lowest objective wins. The bandwidth is chosen at the OLS start (the
    anchor-only start if no kappa is usable there). With ``reselect`` it is
    re-checked at the optimum, with one refit if it moves.
    """
    if partition.n != data.n:
        raise ValueError("partition does not match the dataset size")
    X_s = data.design(spec)
    y = data.y
    p_s = spec.size
    ols = ols_start(X_s, y)
    starts = [ols]
    if zero_start:
        starts.append(np.eye(1, p_s)[0])
    if init is not None:
        starts.append(check_index_coefficients(init, p_s))
    starts = _dedupe(starts)

    bw = bandwidth
    if bw is None:
        try:
            bw = select_bandwidth(data, spec, ols, kappa_grid, partition)
        except NoValidBandwidthError:
            # a tiny leading OLS slope can blow the index up; the anchor-only start cannot
            bw = select_bandwidth(data, spec, np.eye(1, p_s)[0], kappa_grid, partition)
    beta, obj, conv = _best_start(X_s, y, bw.h, starts)
    if reselect and bandwidth is None and len(kappa_grid) > 1 and p_s > 1:
        try:
            bw2 = select_bandwidth(data, spec, beta, kappa_grid, partition)
        except NoValidBandwidthError:
            bw2 = bw
        if bw2.h != bw.h:
            bw = bw2
            beta, obj, conv = _minimize_index(X_s, y, bw.h, beta)
    return _assemble(data, spec, partition, beta, bw, obj, conv)


def _assemble(data, spec, partition, beta, bw, obj, conv, penalty=0.0, block_fitter=None):
    X_s = data.design(spec)
    y = data.y
    z = X_s @ beta
    mu_hat, _ = nw_cross(z, z, y, bw.h)
    betas, bconv = [], []
    for j in range(partition.n_blocks):
        if block_fitter is None:
            # starts use only the retained rows, so mu_tilde never sees the deleted block
            b, c = _block_fit(X_s, y, partition, j, bw.h)
        else:
            b, c = block_fitter(j)
        betas.append(b)
        bconv.append(c)
    betas = np.array(betas)
    mu_tilde = leave_block_out_means(X_s, y, betas, bw.h, partition)
    for a in (beta, mu_hat, mu_tilde, betas):
        a.setflags(write=False)
    return FittedCandidate(spec, beta, bw, mu_hat, mu_tilde, float(obj), bool(conv), betas,
                           tuple(bconv), float(penalty))


def predict(train: Dataset, fit: FittedCandidate, X_new, *, strict: bool = True) -> np.ndarray:
    """NW prediction g_hat(x' beta_hat) at new covariate rows (columns in the candidate's order).

    A query far outside every kernel window raises unless ``strict`` is off, in
    which case it gets the limiting value (the mean response at the nearest
    training index).
    """
    X_new = np.asarray(X_new, dtype=float)
    if X_new.ndim == 1:
        X_new = X_new.reshape(-1, fit.spec.size)
    if X_new.shape[1] != fit.spec.size:
        raise ValueError(f"X_new needs {fit.spec.size} columns, got {X_new.shape[1]}")
    if X_new.shape[0] == 0:
        return np.empty(0)
    zt = train.design(fit.spec) @ fit.beta_hat
    out, raw_zero = nw_cross(X_new @ fit.beta_hat, zt, train.y, fit.bandwidth.h)
    if strict and raw_zero.any():
        raise DegenerateRowError(int(np.argmax(raw_zero)),
                                 f"query row {int(np.argmax(raw_zero))} lies outside the kernel support "
                                 "of every training index")
    return out


# --- L1-penalised fit -------------------------------------------------------

class _CoordinateProblem:
    """Penalised criterion along one coordinate, with the index vector kept in sync."""

    def __init__(self, X_s, y, h, lam, beta):
        self.X = X_s
        self.y = y
        self.h = h
        self.lam = lam
        self.n = X_s.shape[0]
        self.beta = beta
        self.z = X_s @ beta
        self.H = loo_value(self.z, y, h)
        self._grad = None

    def penalty(self):
        return self.lam * float(np.sum(np.abs(self.beta[1:])))

    def value(self):
        return self.H + self.penalty()

    def grad(self):
        if self._grad is None:
            self.H, v, _ = loo_objective(self.z, self.y, self.h, True)
            self._grad = (-2.0 / self.n) * (self.X.T @ v)
        return self._grad

    def H_at(self, r, t):
        return loo_value(self.z + (t - self.beta[r]) * self.X[:, r], self.y, self.h)

    def set(self, r, t, H):
        self.z = self.z + (t - self.beta[r]) * self.X[:, r]
        self.beta[r] = t
        self.H = H
        self._grad = None

    def side_search(self, r, sign, upper, xatol):
        """Minimise H + lam*|t| over t = sign*u, u in [0, upper]; widen while the optimum sits on the edge."""
        xr = self.X[:, r]
        b = float(self.beta[r])
        for _ in range(12):
            u, Hu = side_search(self.z, xr, self.y, self.h, self.lam, b, sign, upper, xatol)
            if u < upper * (1 - 1e-3):
                break
            upper *= 4.0
        return sign * float(u), float(Hu)


def _penalized(X_s, y, h, lam, beta):
    return loo_value(X_s @ beta, y, h) + lam * float(np.sum(np.abs(beta[1:])))


def _prox_gradient(X_s, y, h, lam, beta, max_iter, tol=1e-9):
    """Monotone proximal-gradient steps (Barzilai-Borwein trial step, backtracking) on the free coordinates."""
    n = X_s.shape[0]
    x0 = X_s[:, 0]
    X1 = np.ascontiguousarray(X_s[:, 1:])

    def smooth(theta):
        obj, v, _ = loo_objective(x0 + X1 @ theta, y, h, True)
        return obj, (-2.0 / n) * (X1.T @ v)

    theta = beta[1:].copy()
    f, g = smooth(theta)
    step = 1.0
    for _ in range(max_iter):
        for _ in range(60):
            u = theta - step * g
            cand = np.sign(u) * np.maximum(np.abs(u) - step * lam, 0.0)
            dlt = cand - theta
            fc = loo_value(x0 + X1 @ cand, y, h)
            if fc <= f + g @ dlt + (dlt @ dlt) / (2.0 * step):
                break
            step *= 0.5
        else:
            break
        if not np.any(dlt):
            break
        fc, gc = smooth(cand)
        sy = dlt @ (gc - g)
        step = min(max((dlt @ dlt) / sy if sy > 0 else 2.0 * step, 1e-10), 1e4)
        done = np.max(np.abs(dlt)) <= tol * (1.0 + np.max(np.abs(theta)))
        theta, f, g = cand, fc, gc
        if done:
            break
    return np.concatenate([[1.0], theta])


def l1_nls_fit(data: Dataset, spec: CandidateSpec, lam: float, h, init=None, *,
               max_sweeps: int = 200, tol: float = 1e-6, warm_iters: int = 500) -> RegularizedFit:
    """Cyclic coordinate descent on H(beta) + lam * sum_{r>0} |beta_r| with beta_0 = 1.

    Each nonzero coordinate is line-searched on its current side and compared
    with 0 and its current value. A zero coordinate is left at 0 when
    |dH/dbeta_r| <= lam (0 is then a local minimiser of the 1-d problem);
    otherwise the descent side is searched. Up to ``warm_iters`` proximal-gradient
    steps run first; they only ever lower the penalised criterion and leave the
    sweeps far fewer coordinates to move.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    X_s = np.asfortranarray(data.design(spec))
    p_s = spec.size
    beta = np.eye(1, p_s)[0] if init is None else check_index_coefficients(init, p_s).copy()
    hh = _h(h)
    if warm_iters > 0 and p_s > 1:
        warm = _prox_gradient(X_s, data.y, hh, float(lam), beta, warm_iters)
        if _penalized(X_s, data.y, hh, lam, warm) <= _penalized(X_s, data.y, hh, lam, beta):
            beta = warm
    prob = _CoordinateProblem(X_s, data.y, hh, float(lam), beta)
    history = [prob.value()]
    converged = p_s == 1
    sweeps = 0
    xatol = tol / 100
    while not converged and sweeps < max_sweeps:
        sweeps += 1
        max_change = 0.0
        for r in range(1, p_s):
            b = prob.beta[r]
            current = prob.H + lam * abs(b)
            if b == 0.0:
                g = prob.grad()[r]
                if abs(g) <= lam:
                    continue
                t, Ht = prob.side_search(r, -math.copysign(1.0, g), 1.0, xatol)
                choices = [(current, b, prob.H), (Ht + lam * abs(t), t, Ht)]
            else:
                t, Ht = prob.side_search(r, math.copysign(1.0, b), 2.0 * abs(b) + 0.5, xatol)
                H0 = prob.H_at(r, 0.0)
                choices = [(current, b, prob.H), (Ht + lam * abs(t), t, Ht), (H0, 0.0, H0)]
            val, t, Ht = min(choices, key=lambda c: c[0])
            # moves along numerically flat directions are not worth taking
            if t != b and val < current - 1e-12 * (1.0 + abs(current)):
                max_change = max(max_change, abs(t - b))
                prob.set(r, t, Ht)
        history.append(prob.value())
        converged = max_change < tol
    beta = prob.beta
    active = tuple(spec.indices[r] for r in range(p_s) if r == 0 or beta[r] != 0.0)
    beta.setflags(write=False)
    return RegularizedFit(spec, beta, float(lam), active, float(prob.H), float(prob.value()),
                          tuple(history), sweeps, bool(converged))


def regularized_candidate_fit(data: Dataset, spec: CandidateSpec, partition: BlockPartition, lam: float,
                              bandwidth: Bandwidth, init=None, *, full_fit: RegularizedFit | None = None,
                              max_sweeps: int = 200, warm_iters: int = 500) -> FittedCandidate:
    """Candidate built from L1-penalised fits (full sample and each leave-block-out sample)."""
    if partition.n != data.n:
        raise ValueError("partition does not match the dataset size")
    if full_fit is None or full_fit.spec != spec:
        full_fit = l1_nls_fit(data, spec, lam, bandwidth, init, max_sweeps=max_sweeps, warm_iters=warm_iters)
    beta = np.array(full_fit.beta_hat)

    def block_fitter(j):
        if partition.degenerate:
            raise ValueError("a single-block partition cannot leave a block out")
        sub = data.rows(partition.retained(j))
        # anchor start: the full-sample fit already fits the deleted block
        f = l1_nls_fit(sub, spec, lam, bandwidth, max_sweeps=max_sweeps, warm_iters=warm_iters)
        return np.array(f.beta_hat), f.converged

    return _assemble(data, spec, partition, beta, bandwidth, full_fit.objective, full_fit.converged,
                     penalty=lam, block_fitter=block_fitter)
