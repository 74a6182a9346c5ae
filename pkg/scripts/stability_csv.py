"""Write the plot-ready stability tables into one directory.

    roots_grid.csv     alpha, beta, a, max_abs_xi, stable over [-2, 2]^2
    spectrum.csv       eigenvalues of random Hamiltonian Jacobians
    spectrum.jsonl     one summary record per trial
    lyapunov.jsonl     exponents for linear flows and relu Hamiltonian chains
"""
import argparse
import contextlib
import sys
from pathlib import Path

from revode.cli import run


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="runs/stability")
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--steps", type=int, default=40000)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    code = run(["analyze", "--roots-grid=-2:2:-2:2:41", "--csv", str(out / "roots_grid.csv"), "--out", str(out)])
    with open(out / "spectrum.jsonl", "w") as f, contextlib.redirect_stdout(f):
        code |= run(["analyze", "--spectrum-trials", str(args.trials), "--csv", str(out / "spectrum.csv")])
    with open(out / "lyapunov.jsonl", "w") as f, contextlib.redirect_stdout(f):
        code |= run(["analyze", "--lyapunov", "--steps", str(args.steps)])
    print(f"wrote {', '.join(sorted(p.name for p in out.iterdir()))} to {out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
