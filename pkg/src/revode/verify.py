"""Self-check suites: activation reconstruction, Jacobian spectra, gradient agreement.

Each suite returns ``SuiteResult`` rows of (metric, worst value, tolerance).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import ArchSpec, Network, init_network, net_backward, net_forward, softmax_cross_entropy
from .stability import verify_imaginary_spectrum

SUITES = ("reversibility", "spectrum", "gradcheck")


@dataclass(frozen=True)
class SuiteResult:
    suite: str
    metric: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.suite}: {self.metric} = {self.value:.3e} (tolerance {self.tolerance:.1e})"


def reconstruction_error(net: Network, x: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Worst (max-abs, relative) gap between rebuilt and stored block inputs."""
    _, stored = net_forward(net, x, "train-stored")
    logits, rec = net_forward(net, x, "train-reversible")
    _, g = softmax_cross_entropy(logits, labels)
    worst_abs, worst_rel = 0.0, 0.0

    def check(si, pos, state):
        nonlocal worst_abs, worst_rel
        refs = stored.trace[si][pos]
        # relative to the whole state: a member can be exactly zero (channel padding)
        scale = max(float(np.abs(r).max()) for r in refs)
        for got, ref in zip(state, refs):
            diff = float(np.abs(got.astype(np.float64) - ref).max())
            worst_abs = max(worst_abs, diff)
            worst_rel = max(worst_rel, diff / max(scale, 1e-30))

    net_backward(net, rec, g.astype(net.dtype), on_reconstruct=check)
    return worst_abs, worst_rel


def reversibility_suite(precision: str = "f64", blocks: int = 32, seed: int = 0) -> list[SuiteResult]:
    dtype = np.float64 if precision == "f64" else np.float32
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 8, 8))
    labels = np.array([0, 1])
    out = []
    for kind in ("hamiltonian", "midpoint", "leapfrog"):
        arch = ArchSpec(kind=kind, units=(blocks,) * 3, channels=(4, 8, 8), image_size=8, classes=3, h=0.1)
        net = init_network(arch, seed, dtype)
        err_abs, err_rel = reconstruction_error(net, x.astype(dtype), labels)
        if precision == "f64":
            out.append(SuiteResult("reversibility", f"{kind} max-abs reconstruction error", err_abs, 1e-8))
        else:
            out.append(SuiteResult("reversibility", f"{kind} relative reconstruction error", err_rel, 1e-3))
    return out


def spectrum_suite(trials: int = 100, size: int = 32, seed: int = 0) -> list[SuiteResult]:
    out = []
    for network in ("hamiltonian", "midpoint"):
        for act in ("relu", "tanh"):
            worst = verify_imaginary_spectrum(trials, size, act, seed, network)
            out.append(SuiteResult("spectrum", f"{network}/{act} max |Re lambda| over {trials} trials", worst, 1e-9))
    return out


def _loss(net: Network, x: np.ndarray, labels: np.ndarray) -> float:
    return softmax_cross_entropy(net_forward(net, x, "infer")[0], labels)[0]


def directional_fd_errors(net: Network, x: np.ndarray, labels: np.ndarray, grads: dict[str, np.ndarray],
                          rng: np.random.Generator, eps: float = 1e-5) -> dict[str, float]:
    """Relative error of <grad, v> against a central difference along random v, per tensor."""
    errs = {}
    for name, p in net.params.items():
        v = rng.standard_normal(p.shape)
        orig = p.copy()
        p[...] = orig + eps * v
        lp = _loss(net, x, labels)
        p[...] = orig - eps * v
        lm = _loss(net, x, labels)
        p[...] = orig
        fd = (lp - lm) / (2 * eps)
        an = float(np.sum(grads[name] * v))
        errs[name] = abs(fd - an) / max(abs(fd), abs(an), 1e-12)
    return errs


def gradcheck_suite(seed: int = 0, blocks: int = 4) -> list[SuiteResult]:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 8, 8))
    labels = np.array([0, 2])
    out = []
    for kind in ("hamiltonian", "midpoint", "leapfrog"):
        arch = ArchSpec(kind=kind, units=(blocks,) * 3, channels=(4, 8, 8), image_size=8, classes=3,
                        activation="tanh", h=0.2)
        net = init_network(arch, seed)
        grads = {}
        for mode in ("train-reversible", "train-stored"):
            logits, rec = net_forward(net, x, mode)
            _, g = softmax_cross_entropy(logits, labels)
            grads[mode] = net_backward(net, rec, g)
        gap = max(float(np.abs(grads["train-reversible"][k] - grads["train-stored"][k]).max()) for k in net.params)
        out.append(SuiteResult("gradcheck", f"{kind} reversible vs stored max-abs", gap, 1e-10))
        for mode in ("train-reversible", "train-stored"):
            worst = max(directional_fd_errors(net, x, labels, grads[mode], rng).values())
            out.append(SuiteResult("gradcheck", f"{kind} {mode} vs finite differences (relative)", worst, 1e-5))
    return out


def run_suites(names: list[str], precision: str = "f64", trials: int = 100) -> list[SuiteResult]:
    results = []
    for name in names:
        if name == "reversibility":
            results += reversibility_suite(precision)
        elif name == "spectrum":
            results += spectrum_suite(trials)
        elif name == "gradcheck":
            results += gradcheck_suite()
        else:
            raise ValueError(f"unknown suite {name!r}; expected one of {SUITES} or 'all'")
    return results
