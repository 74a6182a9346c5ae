"""Launch one of the full-scale reference runs through the CLI.

    python scripts/train_table.py hamiltonian-74 --data /path/to/cifar-10-batches-bin --out runs/h74

These take days on a CPU; they are optional long-running targets. The
recorded reference accuracy and tolerance are printed next to the result.
"""
import argparse
import csv
import json
import sys
from pathlib import Path

from revode.cli import run

HERE = Path(__file__).resolve().parent


def main() -> int:
    ref = json.loads((HERE / "configs" / "reference_runs.json").read_text())
    names = [r["name"] for r in ref["runs"]]
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("name", choices=names)
    ap.add_argument("--data", required=True)
    ap.add_argument("--variant", default="cifar10", choices=["cifar10", "cifar100"])
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    entry = next(r for r in ref["runs"] if r["name"] == args.name)
    code = run(["train", "--config", str(HERE / "configs" / f"{args.name}.json"), "--data", args.data,
                "--variant", args.variant, "--seed", str(args.seed), "--out", args.out])
    if code:
        return code
    rows = list(csv.DictReader(open(Path(args.out) / "history.csv")))
    got = 100 * float(rows[-1]["test_acc"])
    want = entry["reference_test_accuracy"][args.variant]
    if want is None:
        print(f"test accuracy {got:.2f}% (no reference value for {args.variant})")
        return 0
    ok = abs(got - want) <= ref["tolerance_points"]
    print(f"{'PASS' if ok else 'FAIL'} {args.name} {args.variant}: test accuracy {got:.2f}% "
          f"vs reference {want:.2f}% (+-{ref['tolerance_points']})")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
