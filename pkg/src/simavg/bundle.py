"""Fitted-model archive: a zip of CSV members plus a JSON manifest."""
from __future__ import annotations

import csv
import io
import json
import zipfile
from dataclasses import dataclass

import numpy as np

from .data import CandidateSpec, Dataset
from .errors import NoSelectableModelError
from .estimator import predict
from .kernel import Bandwidth
from .weights import average_predictions

FORMAT = "simavg-model"
VERSION = 1


@dataclass(frozen=True, eq=False)
class StoredCandidate:
    spec: CandidateSpec
    beta_hat: np.ndarray
    bandwidth: Bandwidth


@dataclass(frozen=True, eq=False)
class StoredModel:
    train: Dataset
    candidates: list[StoredCandidate]
    weights: dict[str, np.ndarray]
    manifest: dict

    def candidate_predictions(self, X_new) -> np.ndarray:
        X_new = np.asarray(X_new, dtype=float).reshape(-1, self.train.p)
        return np.array([predict(self.train, c, X_new[:, list(c.spec.indices)]) for c in self.candidates])

    def predict(self, X_new, method: str = "jcvma") -> np.ndarray:
        if method not in self.weights:
            raise NoSelectableModelError(f"the stored model has no weights for {method!r}")
        return average_predictions(self.weights[method], self.candidate_predictions(X_new))


def _csv_text(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _write(zf, name, text):
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_DEFLATED
    zf.writestr(info, text)


def save_bundle(path, model, extra: dict | None = None):
    """Write an ``AveragingModel`` so that ``load_bundle`` can predict without refitting.

    Member timestamps are fixed, so identical models give identical archives.
    """
    data = model.data
    methods = sorted(model.weights)
    manifest = {
        "format": FORMAT, "version": VERSION, "response": data.response_name, "covariates": list(data.names),
        "n_train": data.n, "n_candidates": len(model.fits), "methods": methods,
        "unavailable": dict(model.unavailable), "block_size": model.partition.block_size,
        "members": ["train.csv", "candidates.csv", "weights.csv"], **(extra or {}),
    }
    train_rows = [[data.response_name, *data.names]]
    train_rows += [[repr(float(y)), *map(lambda v: repr(float(v)), x)] for y, x in zip(data.y, data.X)]
    cand_rows = [["candidate", "indices", "h", "kappa", "beta"]]
    for s, f in enumerate(model.fits):
        cand_rows.append([s, " ".join(map(str, f.spec.indices)), repr(f.bandwidth.h), repr(f.bandwidth.kappa),
                          " ".join(repr(float(b)) for b in f.beta_hat)])
    w_rows = [["candidate", *methods]]
    for s in range(len(model.fits)):
        w_rows.append([s, *(repr(float(model.weights[m].w[s])) for m in methods)])
    with zipfile.ZipFile(path, "w") as zf:
        _write(zf, "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        _write(zf, "train.csv", _csv_text(train_rows))
        _write(zf, "candidates.csv", _csv_text(cand_rows))
        _write(zf, "weights.csv", _csv_text(w_rows))


def load_bundle(path) -> StoredModel:
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != FORMAT:
            raise ValueError(f"{path} is not a {FORMAT} archive")
        if manifest.get("version") != VERSION:
            raise ValueError(f"unsupported archive version {manifest.get('version')}")
        train_rows = list(csv.reader(io.StringIO(zf.read("train.csv").decode())))
        cand_rows = list(csv.reader(io.StringIO(zf.read("candidates.csv").decode())))
        w_rows = list(csv.reader(io.StringIO(zf.read("weights.csv").decode())))
    header, body = train_rows[0], np.array(train_rows[1:], dtype=float).reshape(-1, len(train_rows[0]))
    train = Dataset(body[:, 0], body[:, 1:], tuple(header[1:]), header[0])
    cands = []
    for row in cand_rows[1:]:
        spec = CandidateSpec(tuple(int(i) for i in row[1].split()))
        beta = np.array([float(b) for b in row[4].split()])
        cands.append(StoredCandidate(spec, beta, Bandwidth(float(row[2]), float(row[3]))))
    methods = w_rows[0][1:]
    W = np.array(w_rows[1:], dtype=float)[:, 1:].reshape(len(cands), len(methods))
    weights = {m: W[:, k] for k, m in enumerate(methods)}
    return StoredModel(train, cands, weights, manifest)
