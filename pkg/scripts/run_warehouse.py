"""Warehouse trajectory run: per-epoch CSVs plus a summary of the error statistics.

Usage: python scripts/run_warehouse.py [seed] [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from rigidloc.cli import main, read_rows


def report(out):
    epochs = read_rows(out / "epochs.csv")
    tri = np.array([float(r["edm_error_triangle"]) for r in epochs])
    sp = np.array([float(r["edm_error_shortestpath"]) for r in epochs])
    print(f"EDM error max: triangle {tri.max():.2f} m, shortest path {sp.max():.2f} m")
    print(f"{'method':>8} {'avail%':>7} {'yaw mean':>9} {'yaw max':>8} {'pos mean':>9} {'pos max':>8} {'iters':>6}")
    for r in read_rows(out / "summary.csv"):
        print(f"{r['method']:>8} {float(r['availability_pct']):7.1f} {float(r['att_mean']):9.4f} "
              f"{float(r['att_max']):8.4f} {float(r['pos_mean']):9.4f} {float(r['pos_max']):8.4f} "
              f"{float(r['mean_iterations']):6.2f}")


if __name__ == "__main__":
    seed = sys.argv[1] if len(sys.argv) > 1 else "0"
    out = Path(sys.argv[2] if len(sys.argv) > 2 else "out/warehouse")
    code = main(["trajectory", "--scene", "paper-warehouse", "--seed", seed,
                 "--methods", "erbl,dac,erbl_sp", "--out", str(out)])
    if code == 0:
        report(out)
    sys.exit(code)
