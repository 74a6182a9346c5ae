"""Memorize a 1000-image training subset with a small Hamiltonian network.

Uses CIFAR-10 when --data is given, otherwise synthetic prototype images.
Writes history.csv to --out (default runs/overfit).
"""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from revode.data import Dataset, load_cifar_dir, subsample
from revode.network import ArchSpec, init_network
from revode.train import TrainConfig, evaluate, run_training


def synthetic(n=1000, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(10), n // 10)
    protos = rng.integers(0, 256, (10, 3, 32, 32))
    imgs = np.clip(protos[labels] * 0.5 + rng.integers(0, 128, (n, 3, 32, 32)), 0, 255).astype(np.uint8)
    return Dataset(imgs, labels, 10)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", help="CIFAR-10 binary directory")
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--augment", action="store_true")
    ap.add_argument("--out", default="runs/overfit")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    train = synthetic() if args.data is None else subsample(load_cifar_dir(args.data), 1000 / 50000, seed=0)
    net = init_network(ArchSpec(units=(2, 2, 2), channels=(16, 32, 64)), 0, np.float32)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    history = run_training(net, train, None, TrainConfig(epochs=args.epochs, augment=args.augment), out_dir=args.out)
    losses = [r["train_loss"] for r in history[:10]]
    acc = evaluate(net, train)
    ok = acc >= 0.95 and all(b < a for a, b in zip(losses, losses[1:]))
    print(f"{'PASS' if ok else 'FAIL'} final train accuracy {acc:.4f}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
