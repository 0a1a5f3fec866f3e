"""End-to-end averaging: fit candidates, choose weights for every method, predict."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import BlockPartition, CandidateSpec, Dataset, WeightVector, make_partition
from .errors import NoSelectableModelError
from .estimator import FittedCandidate, nls_fit, predict
from .kernel import DEFAULT_KAPPA_GRID
from .weights import (CvGram, IcScores, average_predictions, build_cv_gram, ic_scores, ic_select,
                      smoothed_ic_weights, solve_simplex_qp)

METHODS = ("jcvma", "aic", "bic", "aicc", "saic", "sbic", "saicc", "full")


def check_methods(methods) -> tuple[str, ...]:
    methods = tuple(m.strip().lower() for m in methods)
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ValueError(f"unknown method(s) {bad}; choose from {', '.join(METHODS)}")
    return methods


def full_model_index(specs: Sequence[CandidateSpec]) -> int:
    """The largest candidate (last one on ties)."""
    sizes = [s.size for s in specs]
    return max(range(len(specs)), key=lambda s: (sizes[s], s))


@dataclass(eq=False)
class AveragingModel:
    data: Dataset
    partition: BlockPartition
    fits: list[FittedCandidate]
    scores: list[IcScores]
    gram: CvGram
    weights: dict[str, WeightVector]
    selected: dict[str, int]
    full_index: int
    unavailable: dict[str, str] = field(default_factory=dict)

    @property
    def specs(self) -> list[CandidateSpec]:
        return [f.spec for f in self.fits]

    def candidate_predictions(self, X_new, *, strict: bool = True) -> np.ndarray:
        """S x m matrix of per-candidate predictions at rows of the full covariate matrix ``X_new``."""
        X_new = np.asarray(X_new, dtype=float).reshape(-1, self.data.p)
        return np.array([predict(self.data, f, X_new[:, list(f.spec.indices)], strict=strict) for f in self.fits])

    def _weights(self, method):
        if method in self.unavailable:
            raise NoSelectableModelError(f"{method} is unavailable: {self.unavailable[method]}")
        return self.weights[method]

    def predict(self, X_new, method: str = "jcvma") -> np.ndarray:
        self._weights(method)
        return average_predictions(self.weights[method].w, self.candidate_predictions(X_new))

    def fitted(self, method: str = "jcvma") -> np.ndarray:
        return average_predictions(self._weights(method).w, np.array([f.mu_hat for f in self.fits]))


def fit_candidates(data: Dataset, specs: Sequence[CandidateSpec], partition: BlockPartition,
                   kappa_grid=DEFAULT_KAPPA_GRID, fitter: Callable | None = None) -> list[FittedCandidate]:
    if fitter is None:
        return [nls_fit(data, s, partition, kappa_grid) for s in specs]
    return [fitter(data, s, partition) for s in specs]


def combine(data: Dataset, fits: Sequence[FittedCandidate], partition: BlockPartition,
            methods=METHODS) -> AveragingModel:
    """Weights for every requested method from already fitted candidates.

    Selection criteria only consider converged fits (all fits if none converged).
    A criterion that is infinite for every candidate is listed in ``unavailable``.
    """
    methods = check_methods(methods)
    fits = list(fits)
    S = len(fits)
    scores = [ic_scores(data, f) for f in fits]
    gram = build_cv_gram(fits, data.y)
    eligible = [f.converged for f in fits]
    if not any(eligible):
        eligible = [True] * S
    weights, selected, unavailable = {}, {}, {}
    full = full_model_index([f.spec for f in fits])
    for m in methods:
        if m == "jcvma":
            weights[m] = solve_simplex_qp(gram)
        elif m == "full":
            selected[m] = full
            weights[m] = WeightVector.vertex(S, full)
        elif m in ("aic", "bic", "aicc"):
            try:
                try:
                    k = ic_select(scores, m, eligible)
                except NoSelectableModelError:
                    k = ic_select(scores, m)
            except NoSelectableModelError as exc:
                unavailable[m] = str(exc)
                continue
            selected[m] = k
            weights[m] = WeightVector.vertex(S, k)
        else:
            try:
                weights[m] = smoothed_ic_weights(scores, m[1:])
            except NoSelectableModelError as exc:
                unavailable[m] = str(exc)
    return AveragingModel(data, partition, fits, scores, gram, weights, selected, full, unavailable)


def fit_averaging(data: Dataset, specs: Sequence[CandidateSpec], block_size: int = 50,
                  kappa_grid=DEFAULT_KAPPA_GRID, methods=METHODS, fitter: Callable | None = None) -> AveragingModel:
    partition = make_partition(data.n, block_size)
    if partition.degenerate:
        raise ValueError(f"block size {block_size} leaves a single block for n={data.n}; "
                         "leave-block-out weights need at least two blocks")
    fits = fit_candidates(data, specs, partition, kappa_grid, fitter)
    return combine(data, fits, partition, methods)


def mspe(y_test, y_hat, sigma2_hat) -> float:
    """Variance-adjusted prediction error n_test^-1 ||y_hat - y_test||^2 - sigma2_hat."""
    y_test = np.asarray(y_test, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y_test.shape != y_hat.shape:
        raise ValueError("prediction and response lengths differ")
    if y_test.size == 0:
        return math.nan
    return float(np.mean((y_hat - y_test) ** 2)) - float(sigma2_hat)


TABLE_FRACTIONS = (0.60, 0.65, 0.70, 0.75, 0.80, 0.85)


def time_split_table(data: Dataset, specs: Sequence[CandidateSpec], fractions=TABLE_FRACTIONS,
                     methods=METHODS, block_size: int = 50, kappa_grid=DEFAULT_KAPPA_GRID) -> dict:
    """MSPE of each method for ordered train/test splits, divided by the full model's MSPE.

    Row order is taken as time order; the first ``round(f * n)`` rows train.
    The variance correction is the sample variance of y over the whole dataset.
    """
    methods = check_methods(methods)
    if "full" not in methods:
        methods = (*methods, "full")
    sigma2 = float(np.var(data.y, ddof=1))
    table = {"train_size": [], **{m: [] for m in methods}}
    for frac in fractions:
        k = int(round(frac * data.n))
        train, test = data.rows(np.arange(k)), data.rows(np.arange(k, data.n))
        model = fit_averaging(train, specs, block_size, kappa_grid, methods)
        P = model.candidate_predictions(test.X)
        raw = {m: (mspe(test.y, average_predictions(model.weights[m].w, P), sigma2)
                   if m in model.weights else math.nan) for m in methods}
        table["train_size"].append(k)
        for m in methods:
            table[m].append(raw[m] / raw["full"])
    return table
