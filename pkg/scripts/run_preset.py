"""Run a named experiment preset through the CLI and print the aggregate table.

    python3 scripts/run_preset.py fig1 --out runs/fig1
"""
import argparse
import csv
import sys
from pathlib import Path

from simavg.cli import PRESETS, main


def show(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = ["n", "r_squared", "method", "replications", "relative_loss", "nmspe", "w_delta", "misspecified_ratio"]
    print("  ".join(f"{c:>12}" for c in cols))
    for r in rows:
        vals = [r[c] if c in ("n", "r_squared", "method", "replications") else f"{float(r[c]):.3f}" for c in cols]
        print("  ".join(f"{v:>12}" for v in vals))


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("preset", choices=sorted(PRESETS))
    ap.add_argument("--out", default=None)
    ap.add_argument("--workers", type=int, default=None)
    a = ap.parse_args()
    out = Path(a.out or f"runs/{a.preset}")
    argv = ["simulate", "--preset", a.preset, "--out", str(out), "-v"]
    if a.workers:
        argv += ["--workers", str(a.workers)]
    code = main(argv)
    if code == 0:
        show(out / "aggregate.csv")
    sys.exit(code)
