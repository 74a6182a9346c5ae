"""SGD-with-momentum training loop, step schedule, weight smoothness decay."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import Dataset, augment_batch, standardize, standardize_dataset, subsample
from .network import Network, net_backward, net_forward, softmax_cross_entropy

log = logging.getLogger(__name__)

PRECISIONS = {"f32": np.float32, "f64": np.float64}
HISTORY_FIELDS = ("epoch", "lr", "train_loss", "train_acc", "test_acc")


@dataclass
class TrainConfig:
    batch_size: int = 100
    epochs: int = 160
    max_steps: int | None = 80_000
    base_lr: float = 0.1
    decay_epochs: tuple[int, ...] = (80, 120, 160)
    decay_divisor: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 2e-4
    smoothness_decay: float = 2e-4
    seed: int = 0
    subsample: float = 1.0
    precision: str = "f32"
    augment: bool = True
    standardization: str = "per-image"  # or "dataset"
    eval_every: int = 1
    drift_every: int = 0  # compare rebuilt segment inputs with a stored copy every k steps; 0 = off

    def __post_init__(self):
        self.decay_epochs = tuple(int(e) for e in self.decay_epochs)
        if not 0 < self.subsample <= 1:
            raise ValueError(f"subsample fraction must be in (0, 1], got {self.subsample}")
        for name in ("base_lr", "momentum", "weight_decay", "smoothness_decay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}, got {self.precision!r}")
        if self.standardization not in ("per-image", "dataset"):
            raise ValueError(f"unknown standardization {self.standardization!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["decay_epochs"] = list(self.decay_epochs)
        return d


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Step schedule: base rate divided by ``decay_divisor`` once per decay epoch passed."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    d = sum(1 for e in cfg.decay_epochs if e <= epoch)
    # division keeps 0.1 / 10**d exact in binary (0.1 * 0.1**2 would not be 0.001)
    return cfg.base_lr / cfg.decay_divisor ** d


# -- weight smoothness decay -------------------------------------------------------

def smoothness_penalty(kernels: Sequence[Sequence[np.ndarray]], h: float) -> tuple[float, list[list[np.ndarray]]]:
    """R = h * sum_j sum_k ||(K_jk - K_{j+1,k}) / h||^2 over adjacent blocks.

    ``kernels[k][j]`` is role k's kernel in block j. Returns R and gradients in
    the same nesting.
    """
    if h <= 0:
        raise ValueError(f"smoothness penalty needs h > 0, got {h}")
    total = 0.0
    grads = []
    for k, role in enumerate(kernels):
        if len(role) < 2:
            raise ValueError(f"kernel role {k} has {len(role)} blocks; the penalty needs at least 2")
        shape = role[0].shape
        for j, kj in enumerate(role):
            if kj.shape != shape:
                raise ValueError(f"kernel role {k}, block {j}: shape {kj.shape} differs from {shape}")
        diffs = [role[j] - role[j + 1] for j in range(len(role) - 1)]
        total += sum(float(np.sum(d * d)) for d in diffs) / h
        g = [np.zeros_like(kj) for kj in role]
        for j, d in enumerate(diffs):
            g[j] += (2.0 / h) * d
            g[j + 1] -= (2.0 / h) * d
        grads.append(g)
    return total, grads


def smoothness_groups(net: Network) -> list[tuple[float, list[list[str]]]]:
    """Parameter names grouped per reversible chain and kernel role, with the chain's h."""
    arch = net.arch
    out = []
    for si, seg in enumerate(arch.segments()):
        if len(seg) < 2:
            continue
        roles = []
        for role in ("k1", "k2"):
            names = [f"u{u}.b{j}.{role}" for u, j in seg]
            if all(n in net.params for n in names):
                roles.append(names)
        out.append((arch.h_for(si), roles))
    return out


def network_smoothness(net: Network) -> tuple[float, dict[str, np.ndarray]]:
    total, grads = 0.0, {}
    for h, roles in smoothness_groups(net):
        if h <= 0:
            continue
        r, g = smoothness_penalty([[net.params[n] for n in names] for names in roles], h)
        total += r
        for names, gs in zip(roles, g):
            grads.update(zip(names, gs))
    return total, grads


# -- optimizer ------------------------------------------------------------------------

@dataclass
class OptimizerState:
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    epoch: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "OptimizerState":
        return cls({k: np.zeros_like(v) for k, v in params.items()})


def sgd_momentum_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    opt: OptimizerState,
    lr: float,
    cfg: TrainConfig,
    smooth_grads: dict[str, np.ndarray] | None = None,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """v <- mu v + (g + wd p + sd dR); p <- p - lr v. Updates in place and returns both."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    for name, p in params.items():
        total = grads.get(name, 0.0) + cfg.weight_decay * p
        if smooth_grads and name in smooth_grads:
            total = total + cfg.smoothness_decay * smooth_grads[name]
        v = opt.velocity.get(name)
        v = total if v is None else cfg.momentum * v + total
        opt.velocity[name] = np.asarray(v, dtype=p.dtype)
        p -= lr * opt.velocity[name]
    opt.step += 1
    return params, opt


# -- loop -----------------------------------------------------------------------------

class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, step: int, loss: float, checkpoint: Path | None):
        where = f"; last good parameters saved to {checkpoint}" if checkpoint else ""
        super().__init__(f"loss became {loss} at epoch {epoch}, step {step}{where}")
        self.epoch, self.step, self.checkpoint = epoch, step, checkpoint


@dataclass
class Preprocessor:
    mode: str = "per-image"
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    @classmethod
    def fit(cls, mode: str, train: Dataset) -> "Preprocessor":
        if mode == "dataset":
            return cls(mode, train.channel_mean.astype(np.float32), train.channel_std.astype(np.float32))
        return cls(mode)

    def __call__(self, images: np.ndarray) -> np.ndarray:
        if self.mode == "dataset":
            return standardize_dataset(images, self.mean, self.std)
        return standardize(images)


class DriftMonitor:
    """``on_reconstruct`` hook: relative gap of each rebuilt segment input vs a stored trace."""

    def __init__(self, stored):
        self.stored = stored
        self.worst = 0.0

    def __call__(self, segment: int, position: int, state) -> None:
        if position != 0:
            return
        ref = self.stored.trace[segment][0]
        scale = max(float(np.abs(r).max()) for r in ref) or 1.0
        gap = max(float(np.abs(a.astype(np.float64) - r).max()) for a, r in zip(state, ref))
        self.worst = max(self.worst, gap / scale)


def evaluate(net: Network, ds: Dataset, batch_size: int = 100, prep: Preprocessor | None = None) -> float:
    """Top-1 accuracy without augmentation."""
    prep = prep or Preprocessor()
    correct = 0
    for i in range(0, len(ds), batch_size):
        x = prep(ds.images[i:i + batch_size]).astype(net.dtype)
        logits, _ = net_forward(net, x, "infer")
        correct += int((logits.argmax(axis=1) == ds.labels[i:i + batch_size]).sum())
    return correct / max(len(ds), 1)


def _augmented(images: np.ndarray, rng: np.random.Generator, prep: Preprocessor) -> np.ndarray:
    if prep.mode == "per-image":
        return augment_batch(images, rng)
    # dataset-level statistics: draw the same crops/flips, standardize afterwards
    b, c, hgt, wid = images.shape
    padded = np.zeros((b, c, hgt + 8, wid + 8), dtype=images.dtype)
    padded[:, :, 4:4 + hgt, 4:4 + wid] = images
    offs = rng.integers(0, 9, size=(b, 2))
    flips = rng.random(b) < 0.5
    out = np.empty_like(images)
    for i in range(b):
        crop = padded[i, :, offs[i, 0]:offs[i, 0] + hgt, offs[i, 1]:offs[i, 1] + wid]
        out[i] = crop[..., ::-1] if flips[i] else crop
    return prep(out)


def write_history(path: Path, history: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=HISTORY_FIELDS, extrasaction="ignore")
        w.writeheader()
        w.writerows(history)


def run_training(
    net: Network,
    train: Dataset,
    test: Dataset | None,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> list[dict]:
    """Train ``net`` in place. Returns one history row per epoch.

    With ``out_dir`` the history CSV is rewritten after every epoch, and the
    parameters are saved there if the loss turns non-finite.
    """
    from .persist import save_network

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    dtype = PRECISIONS[cfg.precision]
    if net.dtype != dtype:
        net.params.update(net.astype(dtype).params)
    if cfg.subsample < 1:
        train = subsample(train, cfg.subsample, cfg.seed)
    prep = Preprocessor.fit(cfg.standardization, train)
    mode = "train-reversible" if net.arch.reversible else "train-stored"
    opt = OptimizerState.zeros_like(net.params)
    history: list[dict] = []
    last_good: dict[str, np.ndarray] = {k: v.copy() for k, v in net.params.items()}

    for epoch in range(cfg.epochs):
        if cfg.max_steps is not None and opt.step >= cfg.max_steps:
            break
        lr = lr_at(epoch, cfg)
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(train))
        t0 = time.perf_counter()
        loss_sum, correct, seen = 0.0, 0, 0
        drift = 0.0 if cfg.drift_every else float("nan")
        for i in range(0, len(order), cfg.batch_size):
            if cfg.max_steps is not None and opt.step >= cfg.max_steps:
                break
            idx = order[i:i + cfg.batch_size]
            imgs = train.images[idx]
            x = (_augmented(imgs, rng, prep) if cfg.augment else prep(imgs)).astype(dtype)
            y = train.labels[idx]
            logits, rec = net_forward(net, x, mode)
            loss, dlogits = softmax_cross_entropy(logits, y)
            if not math.isfinite(loss):
                ckpt = None
                if out is not None:
                    ckpt = out / "last_good.ckpt"
                    save_network(ckpt, Network(net.arch, last_good))
                raise TrainingDiverged(epoch, opt.step, loss, ckpt)
            monitor = None
            if cfg.drift_every and mode == "train-reversible" and opt.step % cfg.drift_every == 0:
                monitor = DriftMonitor(net_forward(net, x, "train-stored")[1])
            grads = net_backward(net, rec, dlogits.astype(dtype), on_reconstruct=monitor)
            if monitor is not None:
                drift = max(drift, monitor.worst)
            smooth = network_smoothness(net)[1] if cfg.smoothness_decay > 0 else None
            sgd_momentum_step(net.params, grads, opt, lr, cfg, smooth)
            if opt.step % 50 == 0:
                # cheap enough to refresh now and then; used only for divergence recovery
                last_good = {k: v.copy() for k, v in net.params.items()}
            loss_sum += loss * len(idx)
            correct += int((logits.argmax(axis=1) == y).sum())
            seen += len(idx)
        opt.epoch = epoch + 1
        row = {"epoch": epoch, "lr": lr, "train_loss": loss_sum / max(seen, 1),
               "train_acc": correct / max(seen, 1), "test_acc": float("nan")}
        if test is not None and ((epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs):
            row["test_acc"] = evaluate(net, test, cfg.batch_size, prep)
        if cfg.drift_every:
            row["max_drift"] = drift
        row["seconds"] = time.perf_counter() - t0
        history.append(row)
        log.info("epoch %d lr %g loss %.4f train_acc %.4f test_acc %.4f (%.1fs)", epoch, lr,
                 row["train_loss"], row["train_acc"], row["test_acc"], row["seconds"])
        if out is not None:
            write_history(out / "history.csv", history)
        if on_epoch is not None:
            on_epoch(row)
    return history
