"""Command-line interface: ``simavg fit | predict | table | simulate``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .bundle import load_bundle, save_bundle
from .data import DataError, Dataset, enumerate_candidates, load_csv, make_partition, read_table
from .errors import NoSelectableModelError
from .estimator import regularized_candidate_fit
from .kernel import DEFAULT_KAPPA_GRID
from .montecarlo import (METHODS, DgpSpec, SimOptions, check_situation, metric_misspecified_ratio,
                         metric_nmspe, metric_relative_loss, metric_weight_consistency, run_experiment,
                         segment_length, with_n)
from .pipeline import TABLE_FRACTIONS, check_methods, combine, fit_averaging, mspe, time_split_table
from .screening import screen_by_correlation, screen_by_lambda_path, write_screen_csv
from .weights import CRITERIA

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
MAX_ENUMERATED = 16

log = logging.getLogger("simavg")


class UsageError(Exception):
    pass


PRESETS = {
    "smoke": {"situation": "1", "link": "sin", "n": [100], "r_squared": [0.5], "replications": 5, "seed": 1},
    "fig1": {"situation": "1", "link": "sin", "n": [100, 200, 300], "r_squared": [0.5], "replications": 100,
             "seed": 2024},
    "fig3": {"situation": "2", "link": "sin", "n": [100, 200, 300], "r_squared": [0.5, 0.7],
             "replications": 100, "seed": 2024},
    "fig5": {"situation": "pgreatern", "link": "sin", "n": [100], "r_squared": [0.3, 0.5, 0.7],
             "replications": 50, "seed": 2024},
}


# --- argument helpers ---------------------------------------------------------

def _floats(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _methods(text: str) -> tuple[str, ...]:
    try:
        return check_methods(text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _names(text: str | None) -> list[str]:
    return [s.strip() for s in (text or "").split(",") if s.strip()]


def _add_candidate_flags(p):
    p.add_argument("--methods", type=_methods, default=METHODS, help="comma-separated subset of " + ",".join(METHODS))
    p.add_argument("--block-size", type=int, default=50, help="observations per CV block (default 50)")
    p.add_argument("--kappa-grid", type=_floats, default=DEFAULT_KAPPA_GRID, help="bandwidth constants")
    p.add_argument("--screen", choices=("none", "correlation", "lambda-path"), default="none")
    p.add_argument("--include", help="covariates in every candidate (default: the first covariate)")
    p.add_argument("--exclude", help="covariates left out of every candidate")
    p.add_argument("--count", type=int, help="number of nested candidates for correlation screening")
    p.add_argument("--lambda-min", type=float, default=0.001)
    p.add_argument("--lambda-max", type=float, default=0.02)
    p.add_argument("--lambda-count", type=int, default=10)
    p.add_argument("--max-sweeps", type=int, default=200, help="coordinate-descent sweep cap (lambda path)")
    p.add_argument("--seed", type=int, default=0, help="recorded for reproducibility; fitting is deterministic")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="simavg", description="Cross-validated averaging of single-index models.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit candidates and weights on a training CSV")
    f.add_argument("--data", required=True, help="CSV: header row, response first")
    f.add_argument("--out", required=True, help="output directory")
    _add_candidate_flags(f)

    p = sub.add_parser("predict", help="predict a test CSV from a fitted model archive")
    p.add_argument("--model", required=True, help="model.zip written by fit")
    p.add_argument("--test", required=True, help="CSV with the training covariate names (response optional)")
    p.add_argument("--out", required=True)
    p.add_argument("--methods", type=_methods, default=None)

    t = sub.add_parser("table", help="ordered train/test MSPE table normalised by the full model")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--fractions", type=_floats, default=TABLE_FRACTIONS)
    _add_candidate_flags(t)

    s = sub.add_parser("simulate", help="run a Monte Carlo experiment grid")
    s.add_argument("--config", help="JSON experiment file")
    s.add_argument("--preset", choices=sorted(PRESETS))
    s.add_argument("--situation")
    s.add_argument("--link", choices=("sin", "tobit"))
    s.add_argument("--n", type=_ints, help="training sizes")
    s.add_argument("--r2", type=_floats, help="R-squared targets")
    s.add_argument("--replications", type=int)
    s.add_argument("--methods", type=_methods)
    s.add_argument("--seed", type=int)
    s.add_argument("--block-size", type=int)
    s.add_argument("--workers", type=int, help="parallel workers (default: SIMAVG_THREADS or CPU count)")
    s.add_argument("--out", required=True)
    return ap


# --- candidate construction -----------------------------------------------------

def _resolve(names: list[str], data: Dataset) -> list[int]:
    missing = [n for n in names if n not in data.names]
    if missing:
        raise UsageError(f"unknown covariate name(s): {', '.join(missing)}")
    return [data.names.index(n) for n in names]


def build_candidates(args, data: Dataset):
    """Candidate specs (and the screening result, if any) from the command-line flags."""
    include = _resolve(_names(args.include), data) if args.include else [0]
    exclude = _resolve(_names(args.exclude), data)
    if set(include) & set(exclude):
        raise UsageError("--include and --exclude overlap")
    if args.screen == "none":
        uncertain = [j for j in range(data.p) if j not in include and j not in exclude]
        if not uncertain:
            raise UsageError("no uncertain covariates left to build candidates from")
        if len(uncertain) > MAX_ENUMERATED:
            raise UsageError(f"{len(uncertain)} uncertain covariates give 2^{len(uncertain)} - 1 models; "
                             "use --screen correlation or --screen lambda-path")
        return enumerate_candidates(data.p, include, exclude, uncertain), None
    if args.screen == "correlation":
        pool = data.p - len(set(include) | set(exclude))
        count = args.count if args.count is not None else min(pool, segment_length(data.n))
        try:
            res = screen_by_correlation(data, forced=include, count=count, exclude=exclude)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        return res.candidates, res
    if args.include and len(include) != 1:
        raise UsageError("lambda-path screening takes a single anchor covariate in --include")
    if exclude:
        raise UsageError("lambda-path screening uses every covariate; drop columns from the CSV instead")
    try:
        res = screen_by_lambda_path(data, args.lambda_min, args.lambda_max, args.lambda_count, anchor=include[0],
                                    block_size=args.block_size, kappa_grid=args.kappa_grid,
                                    max_sweeps=args.max_sweeps)
    except ValueError as exc:
        if isinstance(exc, DataError):
            raise
        raise UsageError(str(exc)) from None
    return res.candidates, res


def _fit_model(args, data: Dataset):
    if args.block_size < 2:
        raise UsageError("--block-size must be at least 2")
    specs, screen = build_candidates(args, data)
    if screen is not None and screen.method == "lambda_path":
        partition = make_partition(data.n, args.block_size)
        if partition.degenerate:
            raise UsageError(f"--block-size {args.block_size} leaves a single block for n={data.n}")
        fits = []
        for spec, prov in zip(specs, screen.provenance):
            fits.append(regularized_candidate_fit(data, spec, partition, prov["lambda"], screen.bandwidth,
                                                  full_fit=prov["fit"], max_sweeps=args.max_sweeps))
        return combine(data, fits, partition, args.methods), screen
    try:
        model = fit_averaging(data, specs, args.block_size, args.kappa_grid, args.methods)
    except ValueError as exc:
        if "block" in str(exc):
            raise UsageError(str(exc)) from None
        raise
    return model, screen


# --- writers -------------------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v))


def write_weights(path, model):
    methods = sorted(model.weights)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["candidate", "indices", "covariates", *(f"weight_{m}" for m in methods), *CRITERIA,
                    "converged"])
        for s, (f, sc) in enumerate(zip(model.fits, model.scores)):
            w.writerow([s, " ".join(map(str, f.spec.indices)), " ".join(model.data.names[i] for i in f.spec.indices),
                        *(_fmt(model.weights[m].w[s]) for m in methods), *(_fmt(sc.score(c)) for c in CRITERIA),
                        int(f.converged)])


def write_fits(path, model):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["candidate", "covariate", "coefficient", "h", "kappa", "objective"])
        for s, f in enumerate(model.fits):
            for i, b in zip(f.spec.indices, f.beta_hat):
                w.writerow([s, model.data.names[i], _fmt(b), _fmt(f.bandwidth.h), _fmt(f.bandwidth.kappa),
                            _fmt(f.objective)])


# --- commands -----------------------------------------------------------------

def cmd_fit(args) -> int:
    data = load_csv(args.data)
    model, screen = _fit_model(args, data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_weights(out / "weights.csv", model)
    write_fits(out / "fits.csv", model)
    if screen is not None:
        write_screen_csv(out / "screen.csv", screen)
    save_bundle(out / "model.zip", model, {"screen": args.screen, "seed": args.seed,
                                          "kappa_grid": list(args.kappa_grid)})
    for m, why in model.unavailable.items():
        log.warning("%s skipped: %s", m, why)
    log.info("fitted %d candidates; weights in %s", len(model.fits), out / "weights.csv")
    return EXIT_OK


def cmd_predict(args) -> int:
    stored = load_bundle(args.model)
    header, body = read_table(args.test)
    names = list(stored.train.names)
    missing = [n for n in names if n not in header]
    if missing:
        raise DataError(f"{args.test}: missing covariate column(s): {', '.join(missing)}")
    X = body[:, [header.index(n) for n in names]] if body.size else np.empty((0, len(names)))
    methods = args.methods or tuple(m for m in METHODS if m in stored.weights)
    absent = [m for m in methods if m not in stored.weights]
    if absent:
        raise UsageError(f"the model has no weights for: {', '.join(absent)}")
    P = stored.candidate_predictions(X) if X.shape[0] else np.empty((len(stored.candidates), 0))
    preds = {m: stored.weights[m] @ P for m in methods}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "predictions.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["row", *methods, *(f"candidate_{s}" for s in range(P.shape[0]))])
        for i in range(X.shape[0]):
            w.writerow([i, *(_fmt(preds[m][i]) for m in methods), *(_fmt(v) for v in P[:, i])])
    resp = stored.train.response_name
    if resp in header and X.shape[0]:
        y_test = body[:, header.index(resp)]
        sigma2 = float(np.var(np.concatenate([stored.train.y, y_test]), ddof=1))
        with (out / "mspe.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "mspe", "sigma2_hat"])
            for m in methods:
                w.writerow([m, _fmt(mspe(y_test, preds[m], sigma2)), _fmt(sigma2)])
    return EXIT_OK


def cmd_table(args) -> int:
    if args.screen == "lambda-path":
        raise UsageError("the table protocol refits unpenalised candidates; use --screen none or correlation")
    data = load_csv(args.data)
    specs, _ = build_candidates(args, data)
    table = time_split_table(data, specs, args.fractions, args.methods, args.block_size, args.kappa_grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    methods = [m for m in table if m != "train_size"]
    with (out / "table.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["method", *(f"n_train={k}" for k in table["train_size"])])
        for m in methods:
            w.writerow([m, *(f"{v:.3f}" for v in table[m])])
    return EXIT_OK


def load_experiment(args) -> dict:
    cfg = {}
    if args.preset:
        cfg.update(PRESETS[args.preset])
    if args.config:
        try:
            cfg.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        except OSError as exc:
            raise UsageError(f"cannot read {args.config}: {exc}") from None
    for key, val in (("situation", args.situation), ("link", args.link), ("n", args.n), ("r_squared", args.r2),
                     ("replications", args.replications), ("methods", args.methods), ("seed", args.seed),
                     ("block_size", args.block_size)):
        if val is not None:
            cfg[key] = val
    known = {"situation", "link", "n", "r_squared", "replications", "methods", "seed", "block_size", "n_test",
             "lambda_min", "lambda_max", "lambda_count", "max_sweeps"}
    unknown = set(cfg) - known
    if unknown:
        raise UsageError(f"unknown experiment keys: {', '.join(sorted(unknown))}")
    if "situation" not in cfg:
        raise UsageError("the experiment needs a situation (--situation, --preset or --config)")
    try:
        cfg["situation"] = check_situation(cfg["situation"])
        cfg["methods"] = check_methods(cfg.get("methods", METHODS))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg.setdefault("link", "sin")
    cfg.setdefault("n", [100])
    cfg.setdefault("r_squared", [0.5])
    cfg.setdefault("replications", 100)
    cfg.setdefault("seed", 0)
    for key in ("n", "r_squared"):
        if not isinstance(cfg[key], (list, tuple)):
            cfg[key] = [cfg[key]]
    return cfg


def replication_metrics(r) -> dict:
    """Per-method metric values of one replication (nan where undefined)."""
    out = {}
    for m, loss in r.losses.items():
        vals = {"loss": loss,
                "relative_loss": loss / r.inf_loss if r.inf_loss > 0 else math.nan,
                "nmspe": loss / r.min_loss if r.min_loss > 0 else math.nan}
        if r.correct.any() and m in r.weights:
            vals["w_delta"] = float(np.sum(r.weights[m][r.correct]))
        if r.inf_loss_misspecified:
            vals["misspecified_ratio"] = loss / r.inf_loss_misspecified
        out[m] = vals
    return out


def cmd_simulate(args) -> int:
    cfg = load_experiment(args)
    opts = SimOptions(**{k: cfg[k] for k in ("block_size", "lambda_min", "lambda_max", "lambda_count", "max_sweeps")
                         if k in cfg})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tidy_rows, agg_rows = [], []
    for r2 in cfg["r_squared"]:
        for n in cfg["n"]:
            try:
                spec = DgpSpec(cfg["link"], cfg["situation"], float(r2), int(n), int(cfg.get("n_test", 1000)))
                spec = with_n(spec, int(n))
            except ValueError as exc:
                raise UsageError(str(exc)) from None
            start = time.perf_counter()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                results = run_experiment(spec, cfg["methods"], int(cfg["replications"]), int(cfg["seed"]),
                                         workers=args.workers, opts=opts)
            log.info("situation %s n=%d R2=%.2f: %d replications in %.1fs", spec.situation, n, r2, len(results),
                     time.perf_counter() - start)
            for r in results:
                for m, vals in replication_metrics(r).items():
                    for metric, v in vals.items():
                        tidy_rows.append([spec.situation, spec.link, n, r2, r.replication, m, metric, _fmt(v)])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                for m in cfg["methods"]:
                    row = {"relative_loss": metric_relative_loss(results, m) if results else math.nan,
                           "nmspe": metric_nmspe(results, m) if results else math.nan}
                    try:
                        row["w_delta"] = metric_weight_consistency(results, m)
                    except (ValueError, KeyError):
                        row["w_delta"] = math.nan
                    try:
                        row["misspecified_ratio"] = metric_misspecified_ratio(results, m)
                    except ValueError:
                        row["misspecified_ratio"] = math.nan
                    agg_rows.append([spec.situation, spec.link, n, r2, m, len(results),
                                     *(_fmt(row[k]) for k in ("relative_loss", "nmspe", "w_delta",
                                                              "misspecified_ratio"))])
    with (out / "tidy.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["situation", "link", "n", "r_squared", "replication", "method", "metric", "value"])
        w.writerows(tidy_rows)
    with (out / "aggregate.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["situation", "link", "n", "r_squared", "method", "replications", "relative_loss", "nmspe",
                    "w_delta", "misspecified_ratio"])
        w.writerows(agg_rows)
    (out / "experiment.json").write_text(json.dumps({**cfg, "methods": list(cfg["methods"]),
                                                     "options": asdict(opts)}, indent=2) + "\n")
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "table": cmd_table, "simulate": cmd_simulate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"simavg {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"simavg {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError, NoSelectableModelError) as exc:
        print(f"simavg {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"simavg {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
