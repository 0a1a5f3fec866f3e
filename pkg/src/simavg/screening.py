"""Candidate-set construction when full enumeration is infeasible."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import CandidateSpec, Dataset, make_partition
from .errors import DegenerateScreenError
from .estimator import RegularizedFit, l1_nls_fit
from .kernel import DEFAULT_KAPPA_GRID, Bandwidth, select_bandwidth


@dataclass(frozen=True, eq=False)
class ScreenResult:
    candidates: list[CandidateSpec]
    method: str
    provenance: list[dict] = field(default_factory=list)
    bandwidth: Bandwidth | None = None


def marginal_correlations(data: Dataset) -> np.ndarray:
    """Pearson correlation of each covariate with y (0 for constant columns)."""
    Xc = data.X - data.X.mean(axis=0)
    yc = data.y - data.y.mean()
    sx = np.sqrt(np.sum(Xc**2, axis=0))
    sy = np.sqrt(yc @ yc)
    out = np.zeros(data.p)
    ok = (sx > 0) & (sy > 0)
    if not ok.all():
        warnings.warn(f"zero-variance columns {np.flatnonzero(~ok).tolist()} get correlation 0")
    out[ok] = (Xc[:, ok].T @ yc) / (sx[ok] * sy)
    return out


def screen_by_correlation(data: Dataset, forced=(), count: int = 1, exclude=()) -> ScreenResult:
    """Nested candidates: forced covariates plus the top-k by |corr(x_j, y)|, k = 1..count."""
    forced = sorted(set(int(i) for i in forced))
    exclude = set(int(i) for i in exclude)
    if set(forced) & exclude:
        raise ValueError("forced and excluded covariates overlap")
    if data.n < 3:
        raise ValueError("correlation screening needs n >= 3")
    pool = [j for j in range(data.p) if j not in exclude and j not in forced]
    if not 1 <= count <= len(pool):
        raise ValueError(f"count must lie in [1, {len(pool)}], got {count}")
    corr = marginal_correlations(data)
    ranked = sorted(pool, key=lambda j: (-abs(corr[j]), j))
    cands, prov = [], []
    for k in range(1, count + 1):
        cands.append(CandidateSpec(tuple(forced + ranked[:k])))
        prov.append({"rank": k, "covariate": ranked[k - 1], "abs_corr": float(abs(corr[ranked[k - 1]]))})
    return ScreenResult(cands, "correlation", prov)


def screen_by_lambda_path(data: Dataset, lambda_min: float, lambda_max: float, count: int, *,
                          anchor: int = 0, bandwidth: Bandwidth | None = None, block_size: int = 50,
                          kappa_grid=DEFAULT_KAPPA_GRID, max_sweeps: int = 200,
                          warm_iters: int = 500) -> ScreenResult:
    """One candidate per lambda on an even grid: the active set of the L1 fit of the full model.

    The path runs from the largest lambda down, warm-starting each fit. Repeated
    active sets keep only their smallest lambda. Candidates are returned in
    increasing lambda order.
    """
    if not 0 < lambda_min < lambda_max:
        raise ValueError("need 0 < lambda_min < lambda_max")
    if count < 2:
        raise ValueError("the lambda grid needs at least 2 points")
    if not 0 <= anchor < data.p:
        raise ValueError("anchor outside the covariate range")
    full = CandidateSpec((anchor, *[j for j in range(data.p) if j != anchor]))
    if bandwidth is None:
        part = make_partition(data.n, min(block_size, data.n // 2))
        start = np.eye(1, full.size)[0]
        bandwidth = select_bandwidth(data, full, start, kappa_grid, part)
    grid = np.linspace(lambda_min, lambda_max, count)
    fits = {}
    init = None
    for lam in grid[::-1]:
        f = l1_nls_fit(data, full, float(lam), bandwidth, init, max_sweeps=max_sweeps, warm_iters=warm_iters)
        fits[float(lam)] = f
        init = f.beta_hat
    cands, prov, seen = [], [], set()
    for lam in grid:
        f = fits[float(lam)]
        key = frozenset(f.active_set)
        if key in seen:
            continue
        seen.add(key)
        spec = CandidateSpec(f.active_set)
        cands.append(spec)
        prov.append({"lambda": float(lam), "active_set": f.active_set, "fit": _restrict(f, spec),
                     "converged": f.converged})
    if all(c.size == 1 for c in cands):
        raise DegenerateScreenError("every lambda on the grid shrinks all free coefficients to zero")
    return ScreenResult(cands, "lambda_path", prov, bandwidth)


def _restrict(fit: RegularizedFit, spec: CandidateSpec) -> RegularizedFit:
    pos = {c: r for r, c in enumerate(fit.spec.indices)}
    beta = np.array([fit.beta_hat[pos[c]] for c in spec.indices])
    beta.setflags(write=False)
    return RegularizedFit(spec, beta, fit.lam, fit.active_set, fit.objective, fit.penalized_objective,
                          fit.history, fit.sweeps, fit.converged)


def write_screen_csv(path, result: ScreenResult):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["candidate", "method", "lambda_or_rank", "indices"])
        for s, (spec, prov) in enumerate(zip(result.candidates, result.provenance)):
            key = prov.get("lambda", prov.get("rank"))
            w.writerow([s, result.method, key, " ".join(map(str, spec.indices))])
