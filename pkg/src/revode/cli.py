"""Command-line entry point: train, verify, analyze, bench-mem, inspect-data."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import data as D
from .network import ARCH_KINDS, ArchSpec, init_network, memory_report, table_arch
from .stability import (
    characteristic_roots,
    hamiltonian_chain_dynamics,
    lyapunov_estimate,
    roots_grid,
    spectrum_trials,
)
from .train import TrainConfig, TrainingDiverged, run_training
from .verify import SUITES, run_suites


class UsageError(Exception):
    pass


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _floats(text: str) -> float | tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or comma-separated numbers, got {text!r}")
    return vals[0] if len(vals) == 1 else vals


def _grid(text: str) -> tuple[float, float, float, float, int]:
    parts = text.split(":")
    if len(parts) != 5:
        raise argparse.ArgumentTypeError("roots grid must be amin:amax:bmin:bmax:steps")
    try:
        *bounds, steps = parts
        return (*(float(b) for b in bounds), int(steps))
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed roots grid {text!r}")


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"artifact": pkg, "numpy": np.__version__, "python": platform.python_version()}


def write_manifest(out: Path, command: str, config: dict, seed: int | None) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    blob = json.dumps(config, sort_keys=True, default=str)
    manifest = {
        "command": command,
        "seed": seed,
        "config": config,
        "config_hash": hashlib.sha256(blob.encode()).hexdigest(),
        "versions": _versions(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return manifest


def _arch_from_args(args) -> ArchSpec:
    if args.arch not in ARCH_KINDS:
        base = table_arch(args.arch)  # named table entry, e.g. hamiltonian-74
        kw = base.to_dict()
    else:
        kw = {"kind": args.arch}
    for key in ("units", "channels", "h", "activation", "leapfrog_init"):
        val = getattr(args, key, None)
        if val is not None:
            kw[key] = val
    if getattr(args, "classes", None):
        kw["classes"] = args.classes
    return ArchSpec(**kw)


def _load_dataset(path: Path, variant: str, split: str) -> D.Dataset:
    if path.suffix == ".json":
        return D.load_manifest(path, split)
    return D.load_cifar_dir(path, variant, split)


# -- subcommands ---------------------------------------------------------------------

def cmd_train(args) -> int:
    if args.config:
        cfg_file = json.loads(Path(args.config).read_text())
        arch = ArchSpec.from_dict(cfg_file["arch"])
        cfg = TrainConfig(**cfg_file.get("train", {}))
    else:
        arch = _arch_from_args(args)
        cfg = TrainConfig()
    overrides = {"epochs": args.epochs, "batch_size": args.batch_size, "base_lr": args.lr, "seed": args.seed,
                 "subsample": args.subsample, "precision": args.precision, "max_steps": args.max_steps}
    cfg_d = cfg.to_dict()
    cfg_d.update({k: v for k, v in overrides.items() if v is not None})
    if args.no_augment:
        cfg_d["augment"] = False
    cfg = TrainConfig(**cfg_d)

    print(f"arch: {arch.kind} units: {','.join(map(str, arch.units))} "
          f"channels: {','.join(map(str, arch.channels))} layers: {arch.layer_count}")
    if args.data is None:
        raise UsageError("train needs --data DIR (CIFAR binary directory or a dataset manifest .json)")
    data_path = Path(args.data)
    train = _load_dataset(data_path, args.variant, "train")
    try:
        test = _load_dataset(data_path, args.variant, "test")
    except (FileNotFoundError, KeyError):
        test = None
    if train.classes != arch.classes:
        arch = ArchSpec.from_dict({**arch.to_dict(), "classes": train.classes})
    out = Path(args.out)
    config = {"arch": arch.to_dict(), "train": cfg.to_dict(), "data": str(data_path), "variant": args.variant}
    write_manifest(out, "train", config, cfg.seed)
    (out / "config.json").write_text(json.dumps(config, indent=2) + "\n")

    net = init_network(arch, cfg.seed)
    print(f"parameters: {net.param_count()} train images: {len(train)}")
    from .persist import save_network

    history = run_training(net, train, test, cfg, out,
                           on_epoch=lambda r: print(f"epoch {r['epoch']} lr {r['lr']:g} loss {r['train_loss']:.4f} "
                                                    f"train_acc {r['train_acc']:.4f} test_acc {r['test_acc']:.4f}",
                                                    flush=True))
    save_network(out / "model.ckpt", net, extra={"epochs_run": len(history)})
    return 0


def cmd_verify(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    results = run_suites(names, args.precision, args.trials)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    if args.out:
        out = Path(args.out)
        write_manifest(out, "verify", {"suite": args.suite, "precision": args.precision, "trials": args.trials}, 0)
        with open(out / "verify.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["suite", "metric", "value", "tolerance", "passed"])
            w.writerows([r.suite, r.metric, r.value, r.tolerance, r.passed] for r in results)
    if failed:
        print(f"{len(failed)} check(s) failed: " + "; ".join(f"{r.suite} ({r.metric})" for r in failed),
              file=sys.stderr)
        return 1
    print(f"all {len(results)} checks passed")
    return 0


def _emit_csv(rows: list[dict], dest: str | None) -> None:
    if not rows:
        return
    fh = open(dest, "w", newline="") if dest else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    finally:
        if dest:
            fh.close()


def cmd_analyze(args) -> int:
    records: list[dict] = []
    if args.roots_grid:
        amin, amax, bmin, bmax, steps = args.roots_grid
        if steps < 1:
            raise UsageError("roots grid needs steps >= 1")
        _emit_csv(roots_grid(amin, amax, bmin, bmax, steps), args.csv)
        if args.alpha is not None and args.beta is not None:
            x1, x2, stable = characteristic_roots(args.alpha, args.beta)
            records.append({"record": "roots", "alpha": args.alpha, "beta": args.beta, "xi1": str(x1),
                            "xi2": str(x2), "max_abs": max(abs(x1), abs(x2)), "stable": stable})
    elif args.lyapunov:
        for c in (-1.0, -0.5, 0.5):
            lam = lyapunov_estimate(lambda y, c=c: y + 0.01 * c * y, np.ones(1), np.ones(1), args.steps, 0.01)
            records.append({"record": "lyapunov", "system": f"linear c={c}", "lambda": lam, "well_posed": lam <= 0})
        from .blocks import BlockParams

        rng = np.random.default_rng(args.seed)
        shape = (1, args.channels, 4, 4)
        m = args.channels
        p = BlockParams(k1=rng.uniform(-1, 1, (m, m, 3, 3)), b1=rng.uniform(-1, 1, m),
                        k2=rng.uniform(-1, 1, (m, m, 3, 3)), b2=rng.uniform(-1, 1, m), h=args.h,
                        activation=args.activation)
        y0 = rng.standard_normal(2 * int(np.prod(shape)))
        lam = lyapunov_estimate(hamiltonian_chain_dynamics(p, shape), y0, rng.standard_normal(y0.size),
                                args.steps, args.h)
        records.append({"record": "lyapunov", "system": f"hamiltonian chain h={args.h} {args.activation}",
                        "lambda": lam, "well_posed": lam <= 0})
    else:
        trials = spectrum_trials(args.spectrum_trials, args.size, args.activation, args.seed, args.network)
        scatter = []
        for t in trials:
            ev = t["eigenvalues"]
            records.append({"record": "spectrum", "trial": t["trial"], "network": args.network,
                            "activation": args.activation, "size": int(ev.size),
                            "max_real_part": float(ev.real.max()), "max_abs_real": t["max_abs_real"],
                            "stable": bool(ev.real.max() <= 1e-9)})
            scatter += [{"trial": t["trial"], "re": float(v.real), "im": float(v.imag)} for v in ev]
        if args.csv:
            _emit_csv(scatter, args.csv)
    for r in records:
        print(json.dumps(r))
    if args.out:
        write_manifest(Path(args.out), "analyze", {k: v for k, v in vars(args).items() if k != "func"}, args.seed)
    return 0


def cmd_bench_mem(args) -> int:
    arch = _arch_from_args(args)
    rep = memory_report(arch, args.mode, args.batch)
    print(json.dumps({"arch": arch.kind, "units": list(arch.units), "channels": list(arch.channels),
                      "layers": arch.layer_count, "mode": rep.mode, "batch": args.batch,
                      "stored_tensors": rep.stored_tensors, "stored_scalars": rep.stored_scalars,
                      "megabytes_f32": rep.stored_scalars * 4 / 2 ** 20}))
    return 0


def cmd_inspect_data(args) -> int:
    path = Path(args.data)
    found = False
    for split in ("train", "test"):
        try:
            ds = _load_dataset(path, args.variant, split)
        except (FileNotFoundError, KeyError) as e:
            print(f"{split}: not found ({e})")
            continue
        found = True
        counts = np.bincount(ds.labels, minlength=ds.classes)
        print(f"{split}: {len(ds)} images, shape {tuple(ds.images.shape[1:])}, {ds.classes} classes, "
              f"per-class min {counts.min()} max {counts.max()}")
    return 0 if found else 1


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="revode", description="Reversible ODE-inspired residual networks.")
    sub = ap.add_subparsers(dest="command", required=True)

    def arch_flags(p, required=True):
        p.add_argument("--arch", required=required, default="hamiltonian",
                       help=f"one of {', '.join(ARCH_KINDS)} or a table name such as hamiltonian-74")
        p.add_argument("--units", type=_ints)
        p.add_argument("--channels", type=_ints)
        p.add_argument("--h", type=_floats, help="step size, or one value per unit")
        p.add_argument("--activation", choices=("relu", "tanh", "identity"))
        p.add_argument("--leapfrog-init", dest="leapfrog_init", choices=("printed", "zero-velocity"),
                       help="first leapfrog step: 2Y0 - h^2 F(Y0), or the Y_-1 = Y0 start")

    t = sub.add_parser("train", help="train a network")
    arch_flags(t, required=False)
    t.add_argument("--config", help="run configuration JSON with 'arch' and 'train' sections")
    t.add_argument("--data", help="CIFAR binary directory or dataset manifest (.json)")
    t.add_argument("--variant", choices=("cifar10", "cifar100"), default="cifar10")
    t.add_argument("--subsample", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--precision", choices=("f32", "f64"))
    t.add_argument("--no-augment", action="store_true")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("verify", help="run the numerical self-check suites")
    v.add_argument("--suite", choices=(*SUITES, "all"), default="all")
    v.add_argument("--precision", choices=("f32", "f64"), default="f64")
    v.add_argument("--trials", type=int, default=100)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    a = sub.add_parser("analyze", help="stability analysis records")
    g = a.add_mutually_exclusive_group(required=True)
    g.add_argument("--roots-grid", type=_grid, metavar="AMIN:AMAX:BMIN:BMAX:STEPS")
    g.add_argument("--lyapunov", action="store_true")
    g.add_argument("--spectrum-trials", type=int, metavar="N")
    a.add_argument("--csv", help="write CSV here instead of stdout (grid) or as eigenvalue scatter (spectrum)")
    a.add_argument("--alpha", type=float)
    a.add_argument("--beta", type=float)
    a.add_argument("--size", type=int, default=32)
    a.add_argument("--network", choices=("hamiltonian", "midpoint"), default="hamiltonian")
    a.add_argument("--activation", choices=("relu", "tanh", "identity"), default="relu")
    a.add_argument("--steps", type=int, default=40_000)
    a.add_argument("--h", type=float, default=0.05)
    a.add_argument("--channels", type=int, default=2)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)

    b = sub.add_parser("bench-mem", help="activation memory of one training step")
    arch_flags(b)
    b.add_argument("--mode", choices=("reversible", "stored"), default="reversible")
    b.add_argument("--batch", type=int, default=100)
    b.set_defaults(func=cmd_bench_mem)

    i = sub.add_parser("inspect-data", help="validate dataset files and print counts")
    i.add_argument("--data", required=True)
    i.add_argument("--variant", choices=("cifar10", "cifar100"), default="cifar10")
    i.set_defaults(func=cmd_inspect_data)
    return ap


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # negative-leading values such as "--roots-grid -2:2:-2:2:41" would otherwise read as flags
    for i in range(len(argv) - 1):
        if argv[i] in ("--roots-grid", "--h", "--alpha", "--beta") and argv[i + 1].startswith("-"):
            argv[i:i + 2] = [f"{argv[i]}={argv[i + 1]}", ""]
    argv = [a for a in argv if a != ""]
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (UsageError, ValueError, FileNotFoundError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
