"""Simulation designs, replicated experiments and evaluation metrics."""
from __future__ import annotations

import logging
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .data import CandidateSpec, Dataset, enumerate_candidates, make_partition
from .errors import RankDeficiencyWarning
from .estimator import nls_fit, regularized_candidate_fit
from .kernel import DEFAULT_KAPPA_GRID
from .pipeline import METHODS, check_methods, combine, mspe
from .screening import screen_by_correlation, screen_by_lambda_path
from .weights import solve_simplex_qp

log = logging.getLogger(__name__)

LINKS = ("sin", "tobit")
SITUATIONS = ("1", "2", "3", "4", "pgreatern")
PILOT_SIZE = 100_000
PILOT_SEED = 20_240_601


def check_situation(situation) -> str:
    s = str(situation).strip().lower().replace(">", "greater").replace("_", "")
    if s in ("pgreatern", "pgn"):
        s = "pgreatern"
    if s not in SITUATIONS:
        raise ValueError(f"unknown situation {situation!r}; choose from {', '.join(SITUATIONS)}")
    return s


def segment_length(n: int) -> int:
    """ceil(1.5 n^(1/3)), the number of middle entries in situations 3 and 4."""
    return int(math.ceil(1.5 * float(np.cbrt(n)) - 1e-12))


def situation_beta(situation, n: int, p: int = 200) -> np.ndarray:
    s = check_situation(situation)
    if s == "1":
        return np.array([1, 1.5, 1, 0, 0.1, -1.5, 1.5])
    if s == "2":
        return np.array([1, 1.5, 0, 1, 0, -1.5, 1.5])
    if s in ("3", "4"):
        pattern = (1.5, 1, 0, 0.1, -1.5) if s == "3" else (1.5, 0, 1, 0, 0, -1.5, 0)
        L = segment_length(n)
        middle = [pattern[k % len(pattern)] for k in range(L)]
        return np.array([1.0, *middle, 1.0, 1.5])
    head = [1, 2, 0.1, 3, 0.08, 4, 0.06, 5, 0.04, 6, 0.02]
    if p < len(head) + 1:
        raise ValueError(f"the p > n design needs p >= {len(head) + 1}")
    beta = np.zeros(p)
    beta[:len(head)] = head
    beta[-1] = 4.0
    return beta


def covariance(p: int, rho: float = 0.5) -> np.ndarray:
    i = np.arange(p)
    return rho ** np.abs(i[:, None] - i[None, :])


@dataclass(frozen=True)
class DgpSpec:
    link: str = "sin"
    situation: str = "1"
    r_squared: float = 0.5
    n_train: int = 100
    n_test: int = 1000
    cov_rho: float = 0.5
    p: int = 200
    beta: tuple | None = None

    def __post_init__(self):
        if self.link not in LINKS:
            raise ValueError(f"link must be one of {LINKS}")
        object.__setattr__(self, "situation", check_situation(self.situation))
        if not 0 < self.r_squared < 1:
            raise ValueError("r_squared must lie strictly between 0 and 1")
        if self.n_train < 2 or self.n_test < 1:
            raise ValueError("need n_train >= 2 and n_test >= 1")
        if not -1 < self.cov_rho < 1:
            raise ValueError("cov_rho must lie in (-1, 1)")
        if self.beta is None:
            b = situation_beta(self.situation, self.n_train, self.p)
            object.__setattr__(self, "beta", tuple(float(v) for v in b))

    @property
    def beta_array(self) -> np.ndarray:
        return np.array(self.beta)

    @property
    def n_covariates(self) -> int:
        return len(self.beta)

    @property
    def noise_scale(self) -> float:
        return noise_scale(self.link, self.beta, self.cov_rho, self.r_squared)


def conditional_mean(link: str, t, c: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if link == "sin":
        return np.sin(np.pi * t / 6.0)
    return t * norm.cdf(t / c) + c * norm.pdf(t / c)


@lru_cache(maxsize=256)
def noise_scale(link: str, beta: tuple, rho: float, r_squared: float) -> float:
    """Noise scale c giving var(mu)/var(y) = r_squared on a fixed pilot draw.

    Only the index x'beta ~ N(0, beta' Sigma beta) enters, so the pilot draws it directly.
    """
    b = np.asarray(beta, dtype=float)
    sd = math.sqrt(float(b @ covariance(b.size, rho) @ b))
    rng = np.random.default_rng(PILOT_SEED)
    t = sd * rng.standard_normal(PILOT_SIZE)
    eps = rng.standard_normal(PILOT_SIZE)
    if link == "sin":
        vmu = float(np.var(np.sin(np.pi * t / 6.0)))
        return math.sqrt(vmu * (1.0 - r_squared) / r_squared)

    def gap(log_c):
        c = math.exp(log_c)
        mu = conditional_mean("tobit", t, c)
        y = np.maximum(t + c * eps, 0.0)
        return float(np.var(mu) / np.var(y)) - r_squared

    lo, hi = math.log(1e-4 * sd), math.log(1e4 * sd)
    return math.exp(brentq(gap, lo, hi, xtol=1e-12))


@dataclass(frozen=True, eq=False)
class SimDraw:
    train: Dataset
    test: Dataset
    mu_train: np.ndarray
    mu_test: np.ndarray


def _stream(seed, k: int) -> np.random.Generator:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.default_rng(np.random.SeedSequence(ss.entropy, spawn_key=(*ss.spawn_key, k)))


def generate(spec: DgpSpec, seed) -> SimDraw:
    """Training and test samples with their conditional means.

    Covariates, training noise and the test sample come from separate child
    streams, so a larger n_train extends a smaller one with the same seed.
    """
    p = spec.n_covariates
    beta = spec.beta_array
    chol = np.linalg.cholesky(covariance(p, spec.cov_rho))
    c = spec.noise_scale
    rx, re, rt = _stream(seed, 0), _stream(seed, 1), _stream(seed, 2)

    def sample(rx_, re_, n):
        X = rx_.standard_normal((n, p)) @ chol.T
        t = X @ beta
        eps = re_.standard_normal(n)
        if spec.link == "sin":
            y = np.sin(np.pi * t / 6.0) + c * eps
        else:
            y = np.maximum(t + c * eps, 0.0)
        return X, y, conditional_mean(spec.link, t, c)

    X, y, mu = sample(rx, re, spec.n_train)
    Xt, yt, mut = sample(rt, rt, spec.n_test)
    return SimDraw(Dataset(y, X), Dataset(yt, Xt), mu, mut)


@dataclass(frozen=True)
class SimOptions:
    block_size: int = 50
    kappa_grid: tuple = DEFAULT_KAPPA_GRID
    lambda_min: float = 0.001
    lambda_max: float = 0.02
    lambda_count: int = 10
    max_sweeps: int = 3
    warm_iters: int = 300


def candidate_specs(spec: DgpSpec, train: Dataset, opts: SimOptions = SimOptions()):
    """Candidate set for the design (sorted covariate indices) and, for p > n, the screening result."""
    p = train.p
    s = spec.situation
    if s == "1":
        return enumerate_candidates(p, always_include=[0], always_exclude=[p - 1], uncertain=range(1, p - 1)), None
    if s == "2":
        return enumerate_candidates(p, always_include=[0, p - 1], uncertain=range(1, p - 1)), None
    if s == "3":
        res = screen_by_correlation(train, forced=[0], count=p - 3, exclude=[p - 2, p - 1])
        return res.candidates, res
    if s == "4":
        res = screen_by_correlation(train, forced=[0, p - 2, p - 1], count=p - 3)
        return res.candidates, res
    res = screen_by_lambda_path(train.drop_columns([p - 1]), opts.lambda_min, opts.lambda_max,
                                opts.lambda_count, block_size=opts.block_size,
                                kappa_grid=opts.kappa_grid, max_sweeps=opts.max_sweeps,
                                warm_iters=opts.warm_iters)
    return res.candidates, res


def correct_flags(specs, beta) -> np.ndarray:
    """A candidate is correct when it contains every covariate with a nonzero true coefficient."""
    support = set(np.flatnonzero(np.asarray(beta) != 0).tolist())
    return np.array([support <= set(s.indices) for s in specs], dtype=bool)


@dataclass(frozen=True, eq=False)
class ReplicationResult:
    replication: int
    spec: DgpSpec
    losses: dict
    weights: dict
    selected: dict
    inf_loss: float
    inf_loss_misspecified: float | None
    min_loss: float
    candidate_losses: np.ndarray
    correct: np.ndarray
    converged: np.ndarray
    failed: tuple = ()
    seconds: float = 0.0

    @property
    def w_delta(self) -> float | None:
        if not self.correct.any():
            return None
        return float(np.sum(self.weights["jcvma"][self.correct]))


def _qp_value(B) -> float:
    w = solve_simplex_qp(B).w
    return float(w @ B @ w)


def _fit_candidates(spec: DgpSpec, train: Dataset, specs, screen, partition, opts: SimOptions):
    fits, failed, kept = [], [], []
    for k, cs in enumerate(specs):
        try:
            if spec.situation == "pgreatern":
                prov = screen.provenance[k]
                lam = prov["lambda"]
                fit = regularized_candidate_fit(train.drop_columns([train.p - 1]), cs, partition, lam,
                                                screen.bandwidth, full_fit=prov["fit"],
                                                max_sweeps=opts.max_sweeps, warm_iters=opts.warm_iters)
            else:
                fit = nls_fit(train, cs, partition, opts.kappa_grid)
        except (ArithmeticError, ValueError) as exc:
            log.warning("candidate %s failed: %s", cs.indices, exc)
            failed.append(k)
            continue
        fits.append(fit)
        kept.append(cs)
    return fits, kept, tuple(failed)


def run_replication(spec: DgpSpec, replication: int, seed=0, methods=METHODS,
                    opts: SimOptions = SimOptions()) -> ReplicationResult:
    methods = check_methods(methods)
    if "jcvma" not in methods:
        methods = ("jcvma", *methods)
    start = time.perf_counter()
    draw = generate(spec, np.random.SeedSequence(seed, spawn_key=(replication,)))
    train, test = draw.train, draw.test
    specs, screen = candidate_specs(spec, train, opts)
    partition = make_partition(train.n, opts.block_size)
    fits, kept, failed = _fit_candidates(spec, train, specs, screen, partition, opts)
    if not fits:
        raise RuntimeError("every candidate fit failed")
    fit_data = train.drop_columns([train.p - 1]) if spec.situation == "pgreatern" else train
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        model = combine(fit_data, fits, partition, methods)
    Xt = test.X[:, :fit_data.p]
    E = model.candidate_predictions(Xt, strict=False) - draw.mu_test
    B = E @ E.T / test.n
    losses = {m: (float(model.weights[m].w @ B @ model.weights[m].w) if m in model.weights else math.nan)
              for m in methods}
    cand = np.diag(B).copy()
    correct = correct_flags(kept, spec.beta_array)
    inf_w = _qp_value(B)
    if correct.all():
        inf_f = None
    elif correct.any():
        mis = np.flatnonzero(~correct)
        inf_f = _qp_value(B[np.ix_(mis, mis)])
    else:
        inf_f = inf_w
    return ReplicationResult(
        replication, spec, losses, {m: np.array(w.w) for m, w in model.weights.items()}, dict(model.selected),
        inf_w, inf_f, float(cand.min()), cand, correct, np.array([f.converged for f in fits]), failed,
        time.perf_counter() - start)


def default_workers() -> int:
    env = os.environ.get("SIMAVG_THREADS")
    cpus = os.cpu_count() or 1
    if env:
        try:
            return max(1, min(int(env), cpus))
        except ValueError:
            log.warning("ignoring non-integer SIMAVG_THREADS=%r", env)
    return cpus


def _safe_replication(args):
    spec, rep, seed, methods, opts = args
    try:
        return run_replication(spec, rep, seed, methods, opts)
    except Exception as exc:  # a failed replication is skipped, not fatal
        log.warning("replication %d of %s skipped: %s", rep, spec, exc)
        return None


def run_experiment(spec: DgpSpec, methods=METHODS, replications: int = 100, seed=0, *,
                   workers: int | None = None, opts: SimOptions = SimOptions()) -> list[ReplicationResult]:
    """Replications 0..D-1; replication d uses the seed stream (seed, d) whatever the worker layout."""
    if replications < 1:
        raise ValueError("need at least one replication")
    methods = check_methods(methods)
    workers = default_workers() if workers is None else max(1, int(workers))
    jobs = [(spec, d, seed, methods, opts) for d in range(replications)]
    if workers == 1:
        out = [_safe_replication(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, replications)) as ex:
            out = list(ex.map(_safe_replication, jobs))
    return [r for r in out if r is not None]


# --- metrics -----------------------------------------------------------------

def _ratio_mean(num, den, what):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    ok = den > 0
    if not ok.all():
        warnings.warn(f"{int((~ok).sum())} replications with zero {what} excluded")
    undefined = ok & np.isnan(num)
    if undefined.any():
        warnings.warn(f"{int(undefined.sum())} replications where the method was unavailable excluded")
        ok &= ~undefined
    if not ok.any():
        return math.nan
    return float(np.mean(num[ok] / den[ok]))


def metric_relative_loss(results, method: str = "jcvma") -> float:
    """Mean of L / inf_W L over replications."""
    return _ratio_mean([r.losses[method] for r in results], [r.inf_loss for r in results], "best-average loss")


def metric_nmspe(results, method: str = "jcvma") -> float:
    """Mean of L / L_min over replications."""
    return _ratio_mean([r.losses[method] for r in results], [r.min_loss for r in results], "best-candidate loss")


def metric_weight_consistency(results, method: str = "jcvma") -> float:
    """Mean weight placed on correct candidates."""
    vals = []
    for r in results:
        if not r.correct.any():
            raise ValueError("no correct candidates are flagged; the weight share is undefined")
        vals.append(float(np.sum(r.weights[method][r.correct])))
    if not vals:
        raise ValueError("no replications")
    return float(np.mean(vals))


def metric_misspecified_ratio(results, method: str = "jcvma") -> float:
    """Mean of L(w_hat) / inf over weights restricted to misspecified candidates."""
    rs = [r for r in results if r.inf_loss_misspecified is not None]
    if not rs:
        raise ValueError("every candidate is correct; the restricted optimum is undefined")
    return _ratio_mean([r.losses[method] for r in rs], [r.inf_loss_misspecified for r in rs],
                       "restricted best-average loss")


def metric_mspe(y_test, y_hat, sigma2_hat) -> float:
    """n_test^-1 ||y_hat - y_test||^2 - sigma2_hat (may be negative)."""
    return mspe(y_test, y_hat, sigma2_hat)


def with_n(spec: DgpSpec, n: int) -> DgpSpec:
    """Same design at another training size (beta recomputed where it depends on n)."""
    if spec.situation in ("3", "4"):
        return replace(spec, n_train=n, beta=None)
    return replace(spec, n_train=n)
