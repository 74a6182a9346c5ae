"""Dense NCHW tensor arithmetic on plain numpy arrays.

Tensors are ``(batch, channels, height, width)`` ndarrays; the dtype is the
precision tag. Convolutions are stride-1 cross-correlations with symmetric
zero padding ("same"), so every reversible block preserves shape.
"""
from __future__ import annotations

import enum

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor or kernel dimensions are inconsistent."""


class Activation(str, enum.Enum):
    RELU = "relu"
    TANH = "tanh"
    IDENTITY = "identity"


def _check4(x: np.ndarray, name: str = "x") -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} must be rank 4 (batch, channels, height, width), got shape {x.shape}")


def _check_kernel(k: np.ndarray) -> tuple[int, int, int, int]:
    if k.ndim != 4:
        raise ShapeError(f"kernel must be rank 4 (out, in, kh, kw), got shape {k.shape}")
    o, c, kh, kw = k.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"kernel spatial size must be odd, got {kh}x{kw}")
    return o, c, kh, kw


def assert_finite(x: np.ndarray, name: str = "tensor") -> None:
    if not np.all(np.isfinite(x)):
        bad = np.argwhere(~np.isfinite(x))[0]
        raise FloatingPointError(f"{name} has non-finite value at index {tuple(int(i) for i in bad)}")


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Patch matrix of shape (C*kh*kw, B*H*W), channel-major."""
    b, c, hgt, wid = x.shape
    ph, pw = kh // 2, kw // 2
    if kh == 1 and kw == 1:
        return x.transpose(1, 0, 2, 3).reshape(c, b * hgt * wid)
    xp = np.zeros((c, b, hgt + 2 * ph, wid + 2 * pw), dtype=x.dtype)
    xp[:, :, ph:ph + hgt, pw:pw + wid] = x.transpose(1, 0, 2, 3)
    col = np.empty((c, kh, kw, b, hgt, wid), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            col[:, i, j] = xp[:, :, i:i + hgt, j:j + wid]
    return col.reshape(c * kh * kw, b * hgt * wid)


def conv2d(x: np.ndarray, k: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Same-padded stride-1 cross-correlation plus optional per-channel bias."""
    _check4(x)
    o, c, kh, kw = _check_kernel(k)
    if x.shape[1] != c:
        raise ShapeError(f"input channels {x.shape[1]} != kernel in_channels {c}")
    if b is not None and b.shape != (o,):
        raise ShapeError(f"bias length {b.shape} != kernel out_channels {o}")
    bs, _, hgt, wid = x.shape
    y = k.reshape(o, -1) @ _im2col(x, kh, kw)
    if b is not None:
        y += b[:, None]
    return y.reshape(o, bs, hgt, wid).transpose(1, 0, 2, 3)


def conv2d_transpose(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Exact adjoint of ``conv2d(., k)``: maps out_channels back to in_channels."""
    _check4(x)
    o, c, _, _ = _check_kernel(k)
    if x.shape[1] != o:
        raise ShapeError(f"input channels {x.shape[1]} != kernel out_channels {o}")
    return conv2d(x, k[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))


def conv2d_weight_grad(x: np.ndarray, gy: np.ndarray, kernel_shape: tuple[int, ...]) -> np.ndarray:
    """Gradient of ``<gy, conv2d(x, k)>`` with respect to ``k``."""
    o, c, kh, kw = kernel_shape
    if x.shape[1] != c or gy.shape[1] != o:
        raise ShapeError(f"weight grad: x channels {x.shape[1]}, gy channels {gy.shape[1]}, kernel {kernel_shape}")
    g = gy.transpose(1, 0, 2, 3).reshape(o, -1)
    return (g @ _im2col(x, kh, kw).T).reshape(o, c, kh, kw)


def conv2d_with_weight_grad(x: np.ndarray, k: np.ndarray, gy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(conv2d(x, k), conv2d_weight_grad(x, gy, k.shape))`` sharing one patch matrix."""
    _check4(x)
    o, c, kh, kw = _check_kernel(k)
    if x.shape[1] != c or gy.shape[1] != o:
        raise ShapeError(f"x channels {x.shape[1]}, gy channels {gy.shape[1]}, kernel {k.shape}")
    bs, _, hgt, wid = x.shape
    col = _im2col(x, kh, kw)
    y = (k.reshape(o, -1) @ col).reshape(o, bs, hgt, wid).transpose(1, 0, 2, 3)
    dk = (gy.transpose(1, 0, 2, 3).reshape(o, -1) @ col.T).reshape(k.shape)
    return y, dk


def activate(x: np.ndarray, a: Activation) -> np.ndarray:
    a = Activation(a)
    if a is Activation.RELU:
        return np.maximum(x, 0)
    if a is Activation.TANH:
        return np.tanh(x)
    return x.copy()


def activate_deriv(x: np.ndarray, a: Activation) -> np.ndarray:
    """Pointwise derivative; relu'(0) is 0."""
    a = Activation(a)
    if a is Activation.RELU:
        return (x > 0).astype(x.dtype)
    if a is Activation.TANH:
        t = np.tanh(x)
        return 1 - t * t
    return np.ones_like(x)


def avg_pool2(x: np.ndarray) -> np.ndarray:
    _check4(x)
    b, c, hgt, wid = x.shape
    if hgt % 2 or wid % 2:
        raise ShapeError(f"avg_pool2 needs even spatial dims, got {hgt}x{wid}")
    return x.reshape(b, c, hgt // 2, 2, wid // 2, 2).mean(axis=(3, 5))


def avg_pool2_backward(g: np.ndarray) -> np.ndarray:
    """Adjoint of avg_pool2 (spreads each gradient over its 2x2 window)."""
    return np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * g.dtype.type(0.25)


def channel_zero_pad(x: np.ndarray, new_channels: int) -> np.ndarray:
    _check4(x)
    c = x.shape[1]
    if new_channels < c:
        raise ShapeError(f"cannot pad {c} channels down to {new_channels}")
    out = np.zeros((x.shape[0], new_channels) + x.shape[2:], dtype=x.dtype)
    out[:, :c] = x
    return out


def split_channels(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    _check4(x)
    c = x.shape[1]
    if c % 2:
        raise ShapeError(f"split_channels needs an even channel count, got {c}")
    return x[:, : c // 2], x[:, c // 2:]


def concat_channels(y: np.ndarray, z: np.ndarray) -> np.ndarray:
    _check4(y, "y")
    _check4(z, "z")
    if y.shape[0] != z.shape[0] or y.shape[2:] != z.shape[2:]:
        raise ShapeError(f"concat_channels: incompatible shapes {y.shape} and {z.shape}")
    return np.concatenate([y, z], axis=1)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    _check4(x)
    return x.mean(axis=(2, 3))


def global_avg_pool_backward(g: np.ndarray, spatial: tuple[int, int]) -> np.ndarray:
    hgt, wid = spatial
    return np.broadcast_to(g[:, :, None, None] / (hgt * wid), g.shape + (hgt, wid)).copy()
