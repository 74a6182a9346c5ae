"""Stability analysis: Jacobian spectra, Lyapunov estimates, RevNet characteristic roots.

Convolutions are replaced by dense matrices here, so every linear operator
and its transpose can be materialized explicitly.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .blocks import BlockParams, hamiltonian_forward
from .linalg import eigenvalues
from .tensor import Activation, activate, activate_deriv


class LyapunovDivergence(FloatingPointError):
    def __init__(self, step: int, norm: float):
        super().__init__(f"trajectory diverged at step {step} (norm {norm:.3e})")
        self.step = step


@dataclass
class StabilityReport:
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))
    lyapunov: float | None = None
    characteristic_roots: tuple[complex, complex] | None = None
    tolerance: float = 1e-9

    @property
    def max_real_part(self) -> float:
        return float(self.eigenvalues.real.max()) if self.eigenvalues.size else 0.0

    @property
    def stable(self) -> bool:
        return self.max_real_part <= self.tolerance

    def records(self) -> list[dict]:
        out = [{"record": "spectrum", "size": int(self.eigenvalues.size),
                "max_real_part": self.max_real_part, "stable": self.stable}]
        if self.lyapunov is not None:
            out.append({"record": "lyapunov", "lambda": self.lyapunov, "well_posed": self.lyapunov <= 0})
        if self.characteristic_roots is not None:
            x1, x2 = self.characteristic_roots
            out.append({"record": "roots", "xi1": str(x1), "xi2": str(x2), "max_abs": max(abs(x1), abs(x2))})
        return out


def _square(name: str, k: np.ndarray) -> int:
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {k.shape}")
    return k.shape[0]


def hamiltonian_jacobian_factors(k1, k2, point, act, bias=None):
    """Factors ``(outer, d, inner)`` with J = outer @ diag(d) @ inner."""
    m = _square("k1", k1)
    if _square("k2", k2) != m:
        raise ValueError(f"k1 and k2 must have equal size, got {k1.shape} and {k2.shape}")
    point = np.asarray(point, dtype=np.float64)
    if point.shape != (2 * m,):
        raise ValueError(f"point must have length {2 * m}, got {point.shape}")
    zero = np.zeros((m, m))
    inner = np.block([[zero, k1], [k2, zero]])
    outer = np.block([[k1.T, zero], [zero, -k2.T]])
    pre = inner @ point + (0 if bias is None else bias)
    return outer, activate_deriv(pre, Activation(act)), inner


def assemble_hamiltonian_jacobian(k1, k2, point, act, bias=None) -> np.ndarray:
    """Jacobian of (K1^T s(K1 z + b1), -K2^T s(K2 y + b2)) at ``point = (y, z)``."""
    outer, d, inner = hamiltonian_jacobian_factors(k1, k2, point, act, bias)
    return outer @ (d[:, None] * inner)


def hamiltonian_rhs(k1, k2, point, act, bias=None) -> np.ndarray:
    m = k1.shape[0]
    y, z = point[:m], point[m:]
    b1, b2 = (np.zeros(m), np.zeros(m)) if bias is None else (bias[:m], bias[m:])
    return np.concatenate([k1.T @ activate(k1 @ z + b1, act), -k2.T @ activate(k2 @ y + b2, act)])


def hamiltonian_spectrum(k1, k2, point, act, bias=None) -> np.ndarray:
    """Spectrum of the Hamiltonian Jacobian, computed from the reordered product.

    For square factors, ``outer @ (D inner)`` and ``(D inner) @ outer`` have the
    same characteristic polynomial. The second is ``D M`` with ``M``
    antisymmetric; zero rows of ``D`` (relu) are split off exactly by
    balancing, which avoids the defective zero eigenvalue of the first form.
    """
    outer, d, inner = hamiltonian_jacobian_factors(k1, k2, point, act, bias)
    return eigenvalues((d[:, None] * inner) @ outer)


def assemble_midpoint_jacobian(k, point, act, bias=None) -> np.ndarray:
    """diag(s'((K - K^T) y + b)) (K - K^T)."""
    _square("k", k)
    point = np.asarray(point, dtype=np.float64)
    if point.shape != (k.shape[0],):
        raise ValueError(f"point must have length {k.shape[0]}, got {point.shape}")
    anti = k - k.T
    d = activate_deriv(anti @ point + (0 if bias is None else bias), Activation(act))
    return d[:, None] * anti


def verify_imaginary_spectrum(trials: int, size: int, act, seed=0, network: str = "hamiltonian") -> float:
    """Worst |Re lambda| over random Jacobians (weights uniform in [-1, 1])."""
    return max((t["max_abs_real"] for t in spectrum_trials(trials, size, act, seed, network)), default=0.0)


def spectrum_trials(trials: int, size: int, act, seed=0, network: str = "hamiltonian") -> list[dict]:
    if size > 128:
        raise ValueError(f"size {size} exceeds 128")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(trials):
        if network == "hamiltonian":
            k1, k2 = rng.uniform(-1, 1, (2, size, size))
            ev = hamiltonian_spectrum(k1, k2, rng.standard_normal(2 * size), act)
        elif network == "midpoint":
            k = rng.uniform(-1, 1, (size, size))
            ev = eigenvalues(assemble_midpoint_jacobian(k, rng.standard_normal(size), act))
        else:
            raise ValueError(f"unknown network {network!r}")
        out.append({"trial": i, "eigenvalues": ev, "max_abs_real": float(np.abs(ev.real).max())})
    return out


def lyapunov_estimate(
    dynamics: Callable[[np.ndarray], np.ndarray],
    y0: np.ndarray,
    delta0: np.ndarray,
    steps: int,
    h: float,
    delta_norm: float = 1e-6,
) -> float:
    """Benettin-style largest Lyapunov exponent of a discrete map.

    The separation is rescaled before every step to ``delta_norm`` times
    ``max(1, |y|)``, so it stays resolvable in floating point when the
    trajectory itself grows, and the mean log growth per step is divided by
    ``h`` to give a rate per unit time.
    """
    y = np.array(y0, dtype=np.float64)
    d = np.asarray(delta0, dtype=np.float64)
    n0 = np.linalg.norm(d)
    if not n0 > 0:
        raise ValueError("delta0 must be non-zero")
    d = d * (delta_norm * max(1.0, np.linalg.norm(y)) / n0)
    total = 0.0
    for step in range(steps):
        nd = np.linalg.norm(d)
        y_next = dynamics(y)
        sep = dynamics(y + d) - y_next
        ny, ns = np.linalg.norm(y_next), np.linalg.norm(sep)
        if not (np.isfinite(ny) and np.isfinite(ns)) or ny > 1e150 or ns == 0:
            raise LyapunovDivergence(step, ny)
        total += math.log(ns / nd)
        d = sep * (delta_norm * max(1.0, ny) / ns)
        y = y_next
    return total / (steps * h)


def hamiltonian_chain_dynamics(p: BlockParams, shape: tuple[int, ...]) -> Callable[[np.ndarray], np.ndarray]:
    """A flat-vector map applying one Hamiltonian block to a (Y, Z) pair of ``shape``."""
    size = int(np.prod(shape))

    def step(v):
        y, z = hamiltonian_forward((v[:size].reshape(shape), v[size:].reshape(shape)), p)
        return np.concatenate([y.ravel(), z.ravel()])

    return step


def characteristic_roots(alpha: float, beta: float) -> tuple[complex, complex, bool]:
    """Roots of xi^2 - (2 + alpha beta) xi + 1 = 0 and whether both lie in the unit disc."""
    a = 1.0 + alpha * beta / 2.0
    disc = a * a - 1.0
    if disc >= 0:
        x1 = a + math.copysign(math.sqrt(disc), a)
        x1, x2 = complex(x1), complex(1.0 / x1)
    else:
        s = math.sqrt(-disc)
        x1, x2 = complex(a, s), complex(a, -s)
    return x1, x2, max(abs(x1), abs(x2)) <= 1.0 + 1e-12


def roots_grid(amin: float, amax: float, bmin: float, bmax: float, steps: int) -> list[dict]:
    rows = []
    for alpha in np.linspace(amin, amax, steps):
        for beta in np.linspace(bmin, bmax, steps):
            x1, x2, stable = characteristic_roots(alpha, beta)
            a = 1.0 + alpha * beta / 2.0
            rows.append({"alpha": float(alpha), "beta": float(beta), "a": a,
                         "max_abs_xi": max(abs(x1), abs(x2)), "stable": stable})
    return rows


@dataclass
class Rollout:
    norms: np.ndarray
    truncated: bool

    def growth_rate(self) -> float:
        """Log-slope of the norms over the second half of the trajectory."""
        n = len(self.norms) - 1
        half = n // 2
        return float((np.log(self.norms[n]) - np.log(self.norms[half])) / (n - half))


def linear_revnet_rollout(alpha: float, beta: float, y0, z0, layers: int) -> Rollout:
    """Iterate Y += beta Z; Z += alpha Y_new and record the norm of (Y, Z)."""
    if layers < 1:
        raise ValueError("layers must be >= 1")
    y = np.array(y0, dtype=np.float64, ndmin=1)
    z = np.array(z0, dtype=np.float64, ndmin=1)
    norms = [math.sqrt(float(y @ y + z @ z))]
    for _ in range(layers):
        with np.errstate(over="ignore", invalid="ignore"):
            y = y + beta * z
            z = z + alpha * y
            nrm = math.sqrt(float(y @ y + z @ z))
        if not math.isfinite(nrm) or nrm > 1e300:
            return Rollout(np.array(norms), True)
        norms.append(nrm)
    return Rollout(np.array(norms), False)


def verlet_orbit_bound(k: float, h: float, steps: int, blowup: float = 1e6) -> tuple[float, bool]:
    """Sup-norm growth of a scalar identity-activation Hamiltonian chain with K1 = K2 = k.

    Returns ``(max |state| / |initial|, diverged)``; stops once the ratio
    passes ``blowup``.
    """
    one = np.ones((1, 1, 1, 1)) * k
    p = BlockParams(k1=one, b1=np.zeros(1), k2=one, b2=np.zeros(1), h=h, activation=Activation.IDENTITY)
    y, z = np.ones((1, 1, 1, 1)), np.zeros((1, 1, 1, 1))
    worst = 1.0
    for _ in range(steps):
        y, z = hamiltonian_forward((y, z), p)
        worst = max(worst, abs(y.item()), abs(z.item()))
        if worst > blowup:
            return worst, True
    return worst, False
