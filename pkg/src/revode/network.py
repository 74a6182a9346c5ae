"""Network assembly, checkpointed forward pass and reconstruction-based backprop.

Layout: stem conv -> units of blocks -> global average pool -> affine head.
For every unit after the first, block 0 still runs at the previous unit's
width and resolution; the downsampling stage (concat, 2x2 average pool,
zero channel padding, re-split) follows it. The network is therefore a list of
*segments*: maximal reversible chains of equal-shape blocks separated by
non-reversible stages. Reversible mode stores only each segment's final state
plus the logits.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import blocks as B
from .tensor import (
    Activation,
    ShapeError,
    avg_pool2,
    avg_pool2_backward,
    channel_zero_pad,
    concat_channels,
    conv2d,
    conv2d_weight_grad,
    global_avg_pool,
    global_avg_pool_backward,
    split_channels,
)

ARCH_KINDS = ("hamiltonian", "midpoint", "leapfrog", "resnet")
MODES = ("train-reversible", "train-stored", "infer")
_LAYERS_PER_BLOCK = {"hamiltonian": 4, "midpoint": 2, "leapfrog": 2, "resnet": 2}


@dataclass(frozen=True)
class ArchSpec:
    kind: str = "hamiltonian"
    units: tuple[int, ...] = (6, 6, 6)
    channels: tuple[int, ...] = (32, 64, 112)
    in_channels: int = 3
    image_size: int = 32
    classes: int = 10
    h: float | tuple[float, ...] = 0.1
    activation: str = "relu"
    kernel_size: int = 3
    stem_kernel: int = 3
    leapfrog_init: str = "printed"  # or "zero-velocity"

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(int(n) for n in self.units))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if isinstance(self.h, (list, tuple)):
            object.__setattr__(self, "h", tuple(float(v) for v in self.h))
        if self.kind not in ARCH_KINDS:
            raise ValueError(f"unknown architecture kind {self.kind!r}; expected one of {ARCH_KINDS}")
        if len(self.units) != len(self.channels) or not self.units:
            raise ValueError(f"units {self.units} and channels {self.channels} must be non-empty and equally long")
        if any(n < 1 for n in self.units):
            raise ValueError(f"every unit needs at least one block, got {self.units}")
        if self.kind == "hamiltonian" and any(c % 2 for c in self.channels):
            raise ValueError(f"Hamiltonian units need even channel counts, got {self.channels}")
        if any(b < a for a, b in zip(self.channels, self.channels[1:])):
            raise ValueError(f"channel widths must be non-decreasing, got {self.channels}")
        if self.image_size % 2 ** (len(self.units) - 1):
            raise ValueError(f"image size {self.image_size} cannot be halved {len(self.units) - 1} times")
        if isinstance(self.h, tuple) and len(self.h) != len(self.units):
            raise ValueError("per-unit h must have one value per unit")
        if self.leapfrog_init not in ("printed", "zero-velocity"):
            raise ValueError(f"leapfrog_init must be 'printed' or 'zero-velocity', got {self.leapfrog_init!r}")
        Activation(self.activation)

    def h_for(self, unit: int) -> float:
        return self.h[unit] if isinstance(self.h, tuple) else float(self.h)

    @property
    def layer_count(self) -> int:
        return _LAYERS_PER_BLOCK[self.kind] * sum(self.units) + 2

    @property
    def reversible(self) -> bool:
        return self.kind != "resnet"

    def block_kind(self, unit: int, block: int) -> str:
        first = unit == 0 and block == 0
        if self.kind == "hamiltonian":
            return B.HAMILTONIAN
        if self.kind == "resnet":
            return B.RESIDUAL
        if self.kind == "midpoint":
            return B.MIDPOINT_INIT if first else B.MIDPOINT
        if first:
            return B.LEAPFROG_INIT_ZERO_VELOCITY if self.leapfrog_init == "zero-velocity" else B.LEAPFROG_INIT
        return B.LEAPFROG

    def segments(self) -> list[list[tuple[int, int]]]:
        """(unit, block) indices of each reversible chain, one chain per width."""
        segs: list[list[tuple[int, int]]] = [[] for _ in self.units]
        for u, n in enumerate(self.units):
            for j in range(n):
                segs[u - 1 if (u > 0 and j == 0) else u].append((u, j))
        return segs

    def to_dict(self) -> dict:
        d = asdict(self)
        d["units"], d["channels"] = list(self.units), list(self.channels)
        if isinstance(self.h, tuple):
            d["h"] = list(self.h)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        d = dict(d)
        if isinstance(d.get("h"), list):
            d["h"] = tuple(d["h"])
        return cls(**d)


def _block_shapes(kind: str, c: int, ks: int) -> dict[str, tuple[int, ...]]:
    if kind == "hamiltonian":
        m = c // 2
        return {"k1": (m, m, ks, ks), "b1": (m,), "k2": (m, m, ks, ks), "b2": (m,)}
    if kind == "resnet":
        return {"k1": (c, c, ks, ks), "b1": (c,), "k2": (c, c, ks, ks)}
    return {"k1": (c, c, ks, ks), "b1": (c,)}


def param_shapes(arch: ArchSpec) -> dict[str, tuple[int, ...]]:
    shapes = {
        "stem.k": (arch.channels[0], arch.in_channels, arch.stem_kernel, arch.stem_kernel),
        "stem.b": (arch.channels[0],),
    }
    for s, seg in enumerate(arch.segments()):
        for u, j in seg:
            for name, shp in _block_shapes(arch.kind, arch.channels[s], arch.kernel_size).items():
                shapes[f"u{u}.b{j}.{name}"] = shp
    shapes["fc.w"] = (arch.classes, arch.channels[-1])
    shapes["fc.b"] = (arch.classes,)
    return shapes


@dataclass
class Network:
    arch: ArchSpec
    params: dict[str, np.ndarray]

    def block_params(self, unit: int, block: int) -> B.BlockParams:
        pre = f"u{unit}.b{block}."
        arrays = {n: self.params[pre + n] for n in ("k1", "b1", "k2", "b2") if pre + n in self.params}
        return B.BlockParams(h=self.arch.h_for(unit), activation=Activation(self.arch.activation), **arrays)

    def param_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    @property
    def dtype(self):
        return self.params["stem.k"].dtype

    def astype(self, dtype) -> "Network":
        return Network(self.arch, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "Network":
        return Network(self.arch, {k: v.copy() for k, v in self.params.items()})


def init_network(arch: ArchSpec, seed: int = 0, dtype=np.float64) -> Network:
    """He-normal kernels (std sqrt(2 / fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shp in param_shapes(arch).items():
        if len(shp) == 1:
            params[name] = np.zeros(shp, dtype=dtype)
        else:
            fan_in = int(np.prod(shp[1:]))
            params[name] = (rng.standard_normal(shp) * np.sqrt(2.0 / fan_in)).astype(dtype)
    return Network(arch, params)


def zero_network(arch: ArchSpec, dtype=np.float64) -> Network:
    return Network(arch, {n: np.zeros(s, dtype=dtype) for n, s in param_shapes(arch).items()})


# -- stage helpers -------------------------------------------------------------

def _split_input(arch: ArchSpec, y0: np.ndarray) -> B.State:
    if arch.kind == "hamiltonian":
        return split_channels(y0)
    return (y0,)


def _merge_input_grad(arch: ArchSpec, g: B.State) -> np.ndarray:
    return concat_channels(*g) if arch.kind == "hamiltonian" else g[0]


def _head_features(arch: ArchSpec, s: B.State) -> np.ndarray:
    return concat_channels(*s) if arch.kind == "hamiltonian" else s[0]


def _head_features_grad(arch: ArchSpec, s: B.State, g: np.ndarray) -> B.State:
    if arch.kind == "hamiltonian":
        return split_channels(g)
    return (g,) + tuple(np.zeros_like(m) for m in s[1:])


def _transition(arch: ArchSpec, s: B.State, new_channels: int) -> B.State:
    if arch.kind == "hamiltonian":
        return split_channels(channel_zero_pad(avg_pool2(concat_channels(*s)), new_channels))
    return tuple(channel_zero_pad(avg_pool2(m), new_channels) for m in s)


def _transition_grad(arch: ArchSpec, g: B.State, old_channels: int) -> B.State:
    if arch.kind == "hamiltonian":
        full = avg_pool2_backward(concat_channels(*g)[:, :old_channels])
        return split_channels(full)
    return tuple(avg_pool2_backward(m[:, :old_channels]) for m in g)


def _state_size(s: B.State) -> int:
    return int(sum(m.size for m in s))


# -- forward / backward --------------------------------------------------------

@dataclass
class CheckpointSet:
    """Activations retained by a reversible forward pass."""

    segment_ends: list[B.State]
    logits: np.ndarray

    def __len__(self) -> int:
        return len(self.segment_ends) + 1

    @property
    def stored_scalars(self) -> int:
        return sum(_state_size(s) for s in self.segment_ends) + self.logits.size


@dataclass
class ForwardRecord:
    mode: str
    x: np.ndarray
    logits: np.ndarray
    checkpoints: CheckpointSet | None = None
    trace: list[list[B.State]] | None = None  # stored mode: every block input plus the segment end
    stored_tensors: int = 0
    stored_scalars: int = 0


def _run_block(net: Network, u: int, j: int, s: B.State) -> B.State:
    try:
        return B.block_forward(net.arch.block_kind(u, j), s, net.block_params(u, j))
    except ShapeError as e:
        raise ShapeError(f"unit {u} block {j}: {e}") from e


def net_forward(net: Network, x: np.ndarray, mode: str = "train-reversible") -> tuple[np.ndarray, ForwardRecord]:
    arch = net.arch
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == "train-reversible" and not arch.reversible:
        raise ValueError("the resnet baseline is not reversible; use mode 'train-stored'")
    expect = (arch.in_channels, arch.image_size, arch.image_size)
    if x.ndim != 4 or x.shape[1:] != expect:
        raise ShapeError(f"input shape {x.shape} does not match (batch, {expect[0]}, {expect[1]}, {expect[2]})")
    x = x.astype(net.dtype, copy=False)

    state = _split_input(arch, conv2d(x, net.params["stem.k"], net.params["stem.b"]))
    segs = arch.segments()
    ends: list[B.State] = []
    trace: list[list[B.State]] = []
    for si, seg in enumerate(segs):
        if si > 0:
            state = _transition(arch, state, arch.channels[si])
        seg_trace = []
        for u, j in seg:
            if mode == "train-stored":
                seg_trace.append(state)
            state = _run_block(net, u, j, state)
        seg_trace.append(state)
        trace.append(seg_trace)
        ends.append(state)
    feats = global_avg_pool(_head_features(arch, state))
    logits = feats @ net.params["fc.w"].T + net.params["fc.b"]

    rec = ForwardRecord(mode=mode, x=x, logits=logits)
    if mode == "train-reversible":
        rec.checkpoints = CheckpointSet(ends, logits)
        rec.stored_tensors = len(rec.checkpoints)
        rec.stored_scalars = rec.checkpoints.stored_scalars
    elif mode == "train-stored":
        rec.trace = trace
        rec.stored_tensors = sum(len(t) for t in trace) + 1
        rec.stored_scalars = sum(_state_size(s) for t in trace for s in t) + logits.size
    return logits, rec


def net_backward(
    net: Network,
    rec: ForwardRecord,
    loss_grad: np.ndarray,
    on_reconstruct: Callable[[int, int, B.State], None] | None = None,
) -> dict[str, np.ndarray]:
    """Gradients of every parameter given dL/dlogits.

    Reversible records rebuild each block input by the block inverse, starting
    from the stored segment ends; stored records read the trace instead.
    ``on_reconstruct(segment, position, state)`` sees every rebuilt input.
    """
    arch = net.arch
    if rec.mode == "train-reversible":
        if rec.checkpoints is None or len(rec.checkpoints.segment_ends) != len(arch.segments()):
            raise ValueError("checkpoint set does not match the network's segment layout")
    elif rec.mode == "train-stored":
        if rec.trace is None:
            raise ValueError("stored-mode record carries no activation trace")
    else:
        raise ValueError("inference records cannot be differentiated")
    if loss_grad.shape != rec.logits.shape:
        raise ShapeError(f"loss gradient shape {loss_grad.shape} != logits shape {rec.logits.shape}")

    grads = {k: np.zeros_like(v) for k, v in net.params.items()}
    segs = arch.segments()

    if rec.mode == "train-reversible":
        last = rec.checkpoints.segment_ends[-1]
    else:
        last = rec.trace[-1][-1]
    feat_map = _head_features(arch, last)
    feats = global_avg_pool(feat_map)
    grads["fc.w"] = loss_grad.T @ feats
    grads["fc.b"] = loss_grad.sum(axis=0)
    g_feats = loss_grad @ net.params["fc.w"]
    g = _head_features_grad(arch, last, global_avg_pool_backward(g_feats, feat_map.shape[2:]))

    for si in range(len(segs) - 1, -1, -1):
        seg = segs[si]
        state = rec.checkpoints.segment_ends[si] if rec.mode == "train-reversible" else rec.trace[si][-1]
        for pos in range(len(seg) - 1, -1, -1):
            u, j = seg[pos]
            kind, p = arch.block_kind(u, j), net.block_params(u, j)
            if rec.mode == "train-reversible":
                state, g, pg = B.block_inverse_vjp(kind, state, p, g)
                if on_reconstruct is not None:
                    on_reconstruct(si, pos, state)
            else:
                state = rec.trace[si][pos]
                g, pg = B.block_vjp(kind, state, p, g)
            for name, v in pg.items():
                grads[f"u{u}.b{j}.{name}"] += v
        if si > 0:
            g = _transition_grad(arch, g, arch.channels[si - 1])

    g_stem = _merge_input_grad(arch, g)
    grads["stem.k"] = conv2d_weight_grad(rec.x, g_stem, net.params["stem.k"].shape)
    grads["stem.b"] = g_stem.sum(axis=(0, 2, 3))
    return grads


def net_backward_reversible(net: Network, cp_record: ForwardRecord, loss_grad: np.ndarray, **kw) -> dict[str, np.ndarray]:
    if cp_record.mode != "train-reversible":
        raise ValueError("net_backward_reversible needs a train-reversible forward record")
    return net_backward(net, cp_record, loss_grad, **kw)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    g = np.exp(logp)
    g[np.arange(n), labels] -= 1
    return float(loss), g / n


# -- memory accounting -----------------------------------------------------------

@dataclass(frozen=True)
class MemoryReport:
    mode: str
    stored_tensors: int
    stored_scalars: int


def memory_report(arch: ArchSpec, mode: str, batch: int = 1) -> MemoryReport:
    """Activation storage of one training step, counted from the layout alone.

    A block state (one tensor or a pair) counts as one stored activation.
    """
    segs = arch.segments()
    logits = batch * arch.classes
    sizes = []  # scalars of one state per segment
    for si, c in enumerate(arch.channels):
        side = arch.image_size // 2 ** si
        members = 1 if arch.kind == "resnet" else 2
        width = c // 2 if arch.kind == "hamiltonian" else c
        sizes.append(batch * members * width * side * side)
    if mode in ("reversible", "train-reversible"):
        if not arch.reversible:
            raise ValueError("the resnet baseline has no reversible mode")
        return MemoryReport("reversible", len(segs) + 1, sum(sizes) + logits)
    if mode not in ("stored", "train-stored"):
        raise ValueError(f"unknown mode {mode!r}")
    tensors, scalars = 1, logits
    for si, seg in enumerate(segs):
        tensors += len(seg) + 1
        scalars += (len(seg) + 1) * sizes[si]
    if arch.kind in ("midpoint", "leapfrog") and segs[0]:
        # the first block's input is the single stem output, not a pair
        scalars -= sizes[0] // 2
    return MemoryReport("stored", tensors, scalars)


def table_arch(name: str, **overrides) -> ArchSpec:
    """Architectures named as in the published comparison table."""
    table = {
        "hamiltonian-74": ("hamiltonian", (6, 6, 6), (32, 64, 112)),
        "hamiltonian-218": ("hamiltonian", (18, 18, 18), (32, 64, 128)),
        "hamiltonian-1202": ("hamiltonian", (100, 100, 100), (32, 64, 128)),
        "midpoint-26": ("midpoint", (4, 4, 4), (32, 64, 112)),
        "midpoint-62": ("midpoint", (10, 10, 10), (32, 64, 128)),
        "leapfrog-26": ("leapfrog", (4, 4, 4), (32, 64, 112)),
        "leapfrog-62": ("leapfrog", (10, 10, 10), (32, 64, 128)),
        "resnet-32": ("resnet", (5, 5, 5), (16, 32, 64)),
        "resnet-110": ("resnet", (18, 18, 18), (16, 32, 64)),
    }
    kind, units, channels = table[name.lower()]
    return ArchSpec(kind=kind, units=units, channels=channels, **overrides)
