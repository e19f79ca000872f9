"""Static-scene Monte Carlo: ERBL and DAC RMSE against the CRLB over the noise grid.

Usage: python scripts/run_montecarlo.py [paper-2d|paper-3d] [runs] [out_dir]
"""

import sys
from pathlib import Path

from rigidloc.cli import main, read_rows


def report(path):
    print(f"{'sigma':>6} {'method':>7} {'att/crlb':>9} {'pos/crlb':>9}")
    for r in read_rows(path):
        att = float(r["rmse_attitude"]) / float(r["crlb_attitude"])
        pos = float(r["rmse_position"]) / float(r["crlb_position"])
        print(f"{float(r['sigma']):6.1f} {r['method']:>7} {att:9.3f} {pos:9.3f}")


if __name__ == "__main__":
    scene = sys.argv[1] if len(sys.argv) > 1 else "paper-2d"
    runs = sys.argv[2] if len(sys.argv) > 2 else "1000"
    out = Path(sys.argv[3] if len(sys.argv) > 3 else f"out/{scene}")
    code = main(["montecarlo", "--scene", scene, "--runs", runs, "--out", str(out)])
    if code == 0:
        report(out / "rmse.csv")
    sys.exit(code)
