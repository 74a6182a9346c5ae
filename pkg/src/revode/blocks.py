"""Discrete propagation rules for residual, Hamiltonian, midpoint and leapfrog blocks.

A block state is a tuple of NCHW arrays:

* Hamiltonian kinds: ``(Y_j, Z_j)``, the two channel halves.
* midpoint / leapfrog: ``(Y_j, Y_{j-1})``, the two-step history.
* residual and the ``*_init`` kinds take a single-member input ``(Y_j,)``.

Every reversible kind has an exact algebraic inverse, and every kind has a
vector-Jacobian product for reverse-mode differentiation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    Activation,
    ShapeError,
    activate,
    activate_deriv,
    conv2d,
    conv2d_transpose,
    conv2d_weight_grad,
    conv2d_with_weight_grad,
)

State = tuple[np.ndarray, ...]

HAMILTONIAN = "hamiltonian"
HAMILTONIAN_ONE_LAYER = "hamiltonian1"
MIDPOINT = "midpoint"
MIDPOINT_INIT = "midpoint_init"
LEAPFROG = "leapfrog"
LEAPFROG_INIT = "leapfrog_init"
LEAPFROG_INIT_ZERO_VELOCITY = "leapfrog_init_zv"
RESIDUAL = "residual"

KINDS = (
    HAMILTONIAN,
    HAMILTONIAN_ONE_LAYER,
    MIDPOINT,
    MIDPOINT_INIT,
    LEAPFROG,
    LEAPFROG_INIT,
    LEAPFROG_INIT_ZERO_VELOCITY,
    RESIDUAL,
)
REVERSIBLE_KINDS = tuple(k for k in KINDS if k != RESIDUAL)
_INPUT_ARITY = {k: 2 for k in KINDS} | {MIDPOINT_INIT: 1, LEAPFROG_INIT: 1, LEAPFROG_INIT_ZERO_VELOCITY: 1, RESIDUAL: 1}


@dataclass(frozen=True)
class BlockParams:
    """Kernels, biases and step size for one block.

    Midpoint, leapfrog and the one-layer Hamiltonian use only ``k1``/``b1``.
    """

    k1: np.ndarray
    b1: np.ndarray
    k2: np.ndarray | None = None
    b2: np.ndarray | None = None
    h: float = 0.1
    activation: Activation = Activation.RELU

    def __post_init__(self):
        if not self.h >= 0:
            raise ValueError(f"step size h must be non-negative, got {self.h}")
        object.__setattr__(self, "activation", Activation(self.activation))

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in ("k1", "b1", "k2", "b2") if getattr(self, n) is not None}


def _check_state(kind: str, s: State) -> None:
    if kind not in _INPUT_ARITY:
        raise ValueError(f"unknown block kind {kind!r}")
    if len(s) != _INPUT_ARITY[kind]:
        raise ShapeError(f"{kind} block expects a state of {_INPUT_ARITY[kind]} tensors, got {len(s)}")
    if len(s) == 2 and (s[0].shape[0] != s[1].shape[0] or s[0].shape[2:] != s[1].shape[2:]):
        raise ShapeError(f"{kind} state members disagree in batch/spatial dims: {s[0].shape} vs {s[1].shape}")
    if len(s) == 2 and s[0].shape[1] != s[1].shape[1]:
        raise ShapeError(f"{kind} state members have {s[0].shape[1]} and {s[1].shape[1]} channels")


# -- shared pieces -----------------------------------------------------------

def _two_layer(x, ka, b, kb, act):
    """kb^T sigma(ka x + b); also returns the pre-activation."""
    a = conv2d(x, ka, b)
    return conv2d_transpose(activate(a, act), kb), a


def _two_layer_vjp(x, ka, kb, a, act, g):
    """Pullback of ``_two_layer`` at pre-activation ``a`` for upstream ``g``."""
    gs, dkb = conv2d_with_weight_grad(g, kb, activate(a, act))
    ga = gs * activate_deriv(a, act)
    dka = conv2d_weight_grad(x, ga, ka.shape)
    db = ga.sum(axis=(0, 2, 3))
    return conv2d_transpose(ga, ka), dka, db, dkb


def _antisym(y, k):
    """(K - K^T) y for a square-channel kernel."""
    if k.shape[0] != k.shape[1]:
        raise ShapeError(f"antisymmetric operator needs a square-channel kernel, got {k.shape}")
    return conv2d(y, k) - conv2d_transpose(y, k)


def _midpoint_rhs(y, p):
    a = _antisym(y, p.k1) + p.b1[:, None, None]
    return activate(a, p.activation), a


def _midpoint_rhs_vjp(y, p, a, g):
    ga = g * activate_deriv(a, p.activation)
    dk = conv2d_weight_grad(y, ga, p.k1.shape) - conv2d_weight_grad(ga, y, p.k1.shape)
    dy = conv2d_transpose(ga, p.k1) - conv2d(ga, p.k1)
    return dy, dk, ga.sum(axis=(0, 2, 3))


# -- Hamiltonian -------------------------------------------------------------

def hamiltonian_forward(s: State, p: BlockParams) -> State:
    """Verlet step: Y advances first, then Z is updated from the new Y."""
    _check_state(HAMILTONIAN, s)
    y, z = s
    f1, _ = _two_layer(z, p.k1, p.b1, p.k1, p.activation)
    y1 = y + p.h * f1
    f2, _ = _two_layer(y1, p.k2, p.b2, p.k2, p.activation)
    return y1, z - p.h * f2


def hamiltonian_inverse(s_next: State, p: BlockParams) -> State:
    _check_state(HAMILTONIAN, s_next)
    y1, z1 = s_next
    f2, _ = _two_layer(y1, p.k2, p.b2, p.k2, p.activation)
    z = z1 + p.h * f2
    f1, _ = _two_layer(z, p.k1, p.b1, p.k1, p.activation)
    return y1 - p.h * f1, z


def _hamiltonian_vjp(s, p, g):
    y, z = s
    f1, a1 = _two_layer(z, p.k1, p.b1, p.k1, p.activation)
    y1 = y + p.h * f1
    return _hamiltonian_pullback(y1, z, a1, conv2d(y1, p.k2, p.b2), p, g)


def _hamiltonian_pullback(y1, z, a1, a2, p, g):
    gy1, gz1 = g
    dy1, dka2, db2, dkb2 = _two_layer_vjp(y1, p.k2, p.k2, a2, p.activation, -p.h * gz1)
    gy = gy1 + dy1
    dz, dka1, db1, dkb1 = _two_layer_vjp(z, p.k1, p.k1, a1, p.activation, p.h * gy)
    grads = {"k1": dka1 + dkb1, "b1": db1, "k2": dka2 + dkb2, "b2": db2}
    return (gy, gz1 + dz), grads


def one_layer_hamiltonian_forward(s: State, p: BlockParams) -> State:
    """Verlet step of the single-kernel system: Y += h s(KZ+b); Z -= h s(K^T Y + b)."""
    _check_state(HAMILTONIAN_ONE_LAYER, s)
    y, z = s
    y1 = y + p.h * activate(conv2d(z, p.k1, p.b1), p.activation)
    z1 = z - p.h * activate(conv2d_transpose(y1, p.k1) + p.b1[:, None, None], p.activation)
    return y1, z1


def one_layer_hamiltonian_inverse(s_next: State, p: BlockParams) -> State:
    _check_state(HAMILTONIAN_ONE_LAYER, s_next)
    y1, z1 = s_next
    z = z1 + p.h * activate(conv2d_transpose(y1, p.k1) + p.b1[:, None, None], p.activation)
    return y1 - p.h * activate(conv2d(z, p.k1, p.b1), p.activation), z


def _one_layer_vjp(s, p, g):
    y, z = s
    gy1, gz1 = g
    act, k = p.activation, p.k1
    a1 = conv2d(z, k, p.b1)
    y1 = y + p.h * activate(a1, act)
    a2 = conv2d_transpose(y1, k) + p.b1[:, None, None]
    ga2 = -p.h * gz1 * activate_deriv(a2, act)
    gy = gy1 + conv2d(ga2, k)
    ga1 = p.h * gy * activate_deriv(a1, act)
    dk = conv2d_weight_grad(ga2, y1, k.shape) + conv2d_weight_grad(z, ga1, k.shape)
    db = ga2.sum(axis=(0, 2, 3)) + ga1.sum(axis=(0, 2, 3))
    return (gy, gz1 + conv2d_transpose(ga1, k)), {"k1": dk, "b1": db}


# -- midpoint ------------------------------------------------------------------

def midpoint_forward(s: State, p: BlockParams) -> State:
    _check_state(MIDPOINT, s)
    yj, yprev = s
    f, _ = _midpoint_rhs(yj, p)
    return yprev + 2 * p.h * f, yj


def midpoint_init(y0: np.ndarray, p: BlockParams) -> State:
    """First step by forward Euler: Y_1 = Y_0 + h F(Y_0)."""
    f, _ = _midpoint_rhs(y0, p)
    return y0 + p.h * f, y0


def midpoint_inverse(s_next: State, p: BlockParams) -> State:
    _check_state(MIDPOINT, s_next)
    ynext, yj = s_next
    f, _ = _midpoint_rhs(yj, p)
    return yj, ynext - 2 * p.h * f


def _midpoint_vjp(s, p, g, init=False):
    yj = s[0]
    g0, g1 = g
    _, a = _midpoint_rhs(yj, p)
    scale = p.h if init else 2 * p.h
    dy, dk, db = _midpoint_rhs_vjp(yj, p, a, scale * g0)
    if init:
        return (g0 + g1 + dy,), {"k1": dk, "b1": db}
    return (g1 + dy, g0), {"k1": dk, "b1": db}


# -- leapfrog ------------------------------------------------------------------

def leapfrog_forward(s: State, p: BlockParams) -> State:
    _check_state(LEAPFROG, s)
    yj, yprev = s
    f, _ = _two_layer(yj, p.k1, p.b1, p.k1, p.activation)
    return 2 * yj - yprev - p.h ** 2 * f, yj


def leapfrog_init(y0: np.ndarray, p: BlockParams, zero_velocity: bool = False) -> State:
    """First step. By default ``Y_1 = 2 Y_0 - h^2 G(Y_0)`` (implied ``Y_{-1} = 0``);
    ``zero_velocity`` uses ``Y_{-1} = Y_0`` instead."""
    f, _ = _two_layer(y0, p.k1, p.b1, p.k1, p.activation)
    lead = y0 if zero_velocity else 2 * y0
    return lead - p.h ** 2 * f, y0


def leapfrog_inverse(s_next: State, p: BlockParams) -> State:
    _check_state(LEAPFROG, s_next)
    ynext, yj = s_next
    f, _ = _two_layer(yj, p.k1, p.b1, p.k1, p.activation)
    return yj, 2 * yj - ynext - p.h ** 2 * f


def _leapfrog_vjp(s, p, g, init=None):
    yj = s[0]
    g0, g1 = g
    a = conv2d(yj, p.k1, p.b1)
    dy, dka, db, dkb = _two_layer_vjp(yj, p.k1, p.k1, a, p.activation, -(p.h ** 2) * g0)
    grads = {"k1": dka + dkb, "b1": db}
    if init is None:
        return (g1 + 2 * g0 + dy, -g0), grads
    lead = 1 if init == "zero_velocity" else 2
    return (g1 + lead * g0 + dy,), grads


# -- residual baseline -----------------------------------------------------------

def residual_forward(y: np.ndarray, p: BlockParams) -> np.ndarray:
    """Non-reversible two-layer baseline: Y + h K2^T s(K1 Y + b1)."""
    f, _ = _two_layer(y, p.k1, p.b1, p.k2, p.activation)
    return y + p.h * f


def _residual_vjp(s, p, g):
    (y,) = s
    (gy,) = g
    a = conv2d(y, p.k1, p.b1)
    dy, dk1, db1, dk2 = _two_layer_vjp(y, p.k1, p.k2, a, p.activation, p.h * gy)
    return (gy + dy,), {"k1": dk1, "b1": db1, "k2": dk2}


# -- dispatch ----------------------------------------------------------------------

def block_forward(kind: str, s: State, p: BlockParams) -> State:
    _check_state(kind, s)
    if kind == HAMILTONIAN:
        return hamiltonian_forward(s, p)
    if kind == HAMILTONIAN_ONE_LAYER:
        return one_layer_hamiltonian_forward(s, p)
    if kind == MIDPOINT:
        return midpoint_forward(s, p)
    if kind == MIDPOINT_INIT:
        return midpoint_init(s[0], p)
    if kind == LEAPFROG:
        return leapfrog_forward(s, p)
    if kind == LEAPFROG_INIT:
        return leapfrog_init(s[0], p)
    if kind == LEAPFROG_INIT_ZERO_VELOCITY:
        return leapfrog_init(s[0], p, zero_velocity=True)
    return (residual_forward(s[0], p),)


def block_inverse(kind: str, s_next: State, p: BlockParams) -> State:
    if kind == HAMILTONIAN:
        return hamiltonian_inverse(s_next, p)
    if kind == HAMILTONIAN_ONE_LAYER:
        return one_layer_hamiltonian_inverse(s_next, p)
    if kind == MIDPOINT:
        return midpoint_inverse(s_next, p)
    if kind == LEAPFROG:
        return leapfrog_inverse(s_next, p)
    if kind in (MIDPOINT_INIT, LEAPFROG_INIT, LEAPFROG_INIT_ZERO_VELOCITY):
        # the first step keeps Y_0 as the second history member
        return (s_next[1],)
    raise ValueError(f"block kind {kind!r} is not reversible")


def block_inverse_vjp(
    kind: str, s_next: State, p: BlockParams, upstream: State
) -> tuple[State, State, dict[str, np.ndarray]]:
    """Reconstruct the block input and pull ``upstream`` back through the block.

    Equivalent to ``block_inverse`` followed by ``block_vjp``; the Hamiltonian
    path reuses the pre-activations the inverse already computed.
    """
    if kind == HAMILTONIAN:
        _check_state(kind, s_next)
        y1, z1 = s_next
        f2, a2 = _two_layer(y1, p.k2, p.b2, p.k2, p.activation)
        z = z1 + p.h * f2
        f1, a1 = _two_layer(z, p.k1, p.b1, p.k1, p.activation)
        g, grads = _hamiltonian_pullback(y1, z, a1, a2, p, upstream)
        return (y1 - p.h * f1, z), g, grads
    s = block_inverse(kind, s_next, p)
    return (s,) + block_vjp(kind, s, p, upstream)


def block_vjp(kind: str, s: State, p: BlockParams, upstream: State) -> tuple[State, dict[str, np.ndarray]]:
    """Reverse-mode pullback through one block.

    ``s`` is the block input state and ``upstream`` the loss gradient with
    respect to the block output. Returns the gradient with respect to ``s`` and
    a dict of parameter gradients keyed like ``BlockParams.arrays()``.
    """
    _check_state(kind, s)
    if len(upstream) != (1 if kind == RESIDUAL else 2):
        raise ShapeError(f"{kind} block: upstream gradient has {len(upstream)} members")
    if kind == HAMILTONIAN:
        return _hamiltonian_vjp(s, p, upstream)
    if kind == HAMILTONIAN_ONE_LAYER:
        return _one_layer_vjp(s, p, upstream)
    if kind == MIDPOINT:
        return _midpoint_vjp(s, p, upstream)
    if kind == MIDPOINT_INIT:
        return _midpoint_vjp(s, p, upstream, init=True)
    if kind == LEAPFROG:
        return _leapfrog_vjp(s, p, upstream)
    if kind == LEAPFROG_INIT:
        return _leapfrog_vjp(s, p, upstream, init="printed")
    if kind == LEAPFROG_INIT_ZERO_VELOCITY:
        return _leapfrog_vjp(s, p, upstream, init="zero_velocity")
    return _residual_vjp(s, p, upstream)
