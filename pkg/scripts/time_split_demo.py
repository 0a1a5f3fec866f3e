"""Ordered train/test MSPE table on a synthetic autocorrelated dataset.

Writes data.csv and table.csv under --out; the Full row is 1.000 by construction.
"""
import argparse
import sys
from pathlib import Path

import numpy as np

from simavg.cli import main
from simavg.data import Dataset, write_csv

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/table")
    ap.add_argument("--rows", type=int, default=256)
    ap.add_argument("--seed", type=int, default=7)
    a = ap.parse_args()
    rng = np.random.default_rng(a.seed)
    X = np.empty((a.rows, 5))
    X[0] = rng.normal(size=5)
    for t in range(1, a.rows):
        X[t] = 0.5 * X[t - 1] + rng.normal(size=5)
    y = np.sin(np.pi * X @ [1.0, 0.8, 0.0, -0.6, 0.0] / 6) + 0.3 * rng.normal(size=a.rows)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "data.csv", Dataset(y, X))
    code = main(["table", "--data", str(out / "data.csv"), "--out", str(out)])
    if code == 0:
        print((out / "table.csv").read_text(), end="")
    sys.exit(code)
