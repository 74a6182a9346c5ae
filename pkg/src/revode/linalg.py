"""Dense nonsymmetric eigenvalues: balancing, Hessenberg reduction, Francis QR."""
from __future__ import annotations

import math

import numpy as np

MAX_SIZE = 512


class EigenConvergenceError(RuntimeError):
    """QR iteration hit its sweep cap before every eigenvalue deflated."""


def _isolate(a: np.ndarray) -> tuple[list[float], np.ndarray]:
    """Peel off eigenvalues exposed by rows or columns with zero off-diagonal part.

    Expanding the determinant along such a row (column) shows its diagonal
    entry is an eigenvalue of the matrix and the rest are eigenvalues of the
    minor with that row and column removed.
    """
    found = []
    keep = np.arange(a.shape[0])
    while len(keep) > 1:
        sub = a[np.ix_(keep, keep)]
        off = np.abs(sub) > 0
        np.fill_diagonal(off, False)
        empty = ~off.any(axis=1) | ~off.any(axis=0)
        if not empty.any():
            break
        found.extend(np.diag(sub)[empty].tolist())
        keep = keep[~empty]
    return found, a[np.ix_(keep, keep)]


def _scale(a: np.ndarray) -> np.ndarray:
    """Parlett-Reinsch radix-2 diagonal similarity to equalize row/column norms."""
    a = a.copy()
    n = a.shape[0]
    done = False
    while not done:
        done = True
        for i in range(n):
            c = np.abs(a[:, i]).sum() - abs(a[i, i])
            r = np.abs(a[i, :]).sum() - abs(a[i, i])
            if c == 0 or r == 0:
                continue
            f, s = 1.0, c + r
            while c < r / 2:
                c, r, f = c * 4, r / 4, f * 2
            while c >= r * 2:
                c, r, f = c / 4, r * 4, f / 2
            if (c + r) < 0.95 * s:
                done = False
                a[i, :] /= f
                a[:, i] *= f
    return a


def hessenberg(a: np.ndarray) -> np.ndarray:
    """Householder reduction to upper Hessenberg form (orthogonal similarity)."""
    h = np.array(a, dtype=np.float64, copy=True)
    n = h.shape[0]
    for k in range(n - 2):
        x = h[k + 1:, k]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        v = x.copy()
        v[0] += math.copysign(alpha, x[0])
        v /= np.linalg.norm(v)
        h[k + 1:, k:] -= 2.0 * np.outer(v, v @ h[k + 1:, k:])
        h[:, k + 1:] -= 2.0 * np.outer(h[:, k + 1:] @ v, v)
        h[k + 2:, k] = 0.0
    return h


def _hqr(a: np.ndarray, max_sweeps: int) -> np.ndarray:
    """Eigenvalues of an upper Hessenberg matrix by implicit double-shift QR.

    Shifts are the two eigenvalues of the trailing 2x2 block, with ad hoc
    exceptional shifts every 10 stalled sweeps. ``a`` is overwritten.
    """
    n = a.shape[0]
    wr = np.zeros(n)
    wi = np.zeros(n)
    anorm = np.abs(a).sum()
    nn, t, sweeps = n - 1, 0.0, 0
    while nn >= 0:
        its = 0
        while True:
            l = nn
            while l >= 1:
                s = abs(a[l - 1, l - 1]) + abs(a[l, l])
                if s == 0.0:
                    s = anorm
                if abs(a[l, l - 1]) + s == s:
                    a[l, l - 1] = 0.0
                    break
                l -= 1
            x = a[nn, nn]
            if l == nn:
                wr[nn] = x + t
                nn -= 1
                break
            y = a[nn - 1, nn - 1]
            w = a[nn, nn - 1] * a[nn - 1, nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + w
                z = math.sqrt(abs(q))
                x += t
                if q >= 0.0:
                    z = p + math.copysign(z, p)
                    wr[nn - 1] = wr[nn] = x + z
                    if z:
                        wr[nn] = x - w / z
                else:
                    wr[nn - 1] = wr[nn] = x + p
                    wi[nn - 1], wi[nn] = z, -z
                nn -= 2
                break
            if sweeps >= max_sweeps:
                raise EigenConvergenceError(
                    f"no convergence after {sweeps} QR sweeps; {nn + 1} of {n} eigenvalues undeflated, "
                    f"trailing subdiagonal {a[nn, nn - 1]:.3e}"
                )
            if its and its % 10 == 0:
                t += x
                idx = np.arange(nn + 1)
                a[idx, idx] -= x
                s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
                x = y = 0.75 * s
                w = -0.4375 * s * s
            its += 1
            sweeps += 1

            m = nn - 2
            while True:
                z = a[m, m]
                r = x - z
                s = y - z
                p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
                q = a[m + 1, m + 1] - z - r - s
                r = a[m + 2, m + 1]
                s = abs(p) + abs(q) + abs(r)
                p, q, r = p / s, q / s, r / s
                if m == l:
                    break
                u = abs(a[m, m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1]))
                if u + v == v:
                    break
                m -= 1
            for i in range(m + 2, nn + 1):
                a[i, i - 2] = 0.0
                if i != m + 2:
                    a[i, i - 3] = 0.0

            for k in range(m, nn):
                last = k == nn - 1
                if k != m:
                    p = a[k, k - 1]
                    q = a[k + 1, k - 1]
                    r = 0.0 if last else a[k + 2, k - 1]
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p, q, r = p / x, q / x, r / x
                s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
                if s == 0.0:
                    continue
                if k == m:
                    if l != m:
                        a[k, k - 1] = -a[k, k - 1]
                else:
                    a[k, k - 1] = -s * x
                p += s
                x, y, z = p / s, q / s, r / s
                q, r = q / p, r / p
                cols = slice(k, nn + 1)
                pv = a[k, cols] + q * a[k + 1, cols]
                if not last:
                    pv += r * a[k + 2, cols]
                    a[k + 2, cols] -= pv * z
                a[k + 1, cols] -= pv * y
                a[k, cols] -= pv * x
                rows = slice(l, min(nn, k + 3) + 1)
                pv = x * a[rows, k] + y * a[rows, k + 1]
                if not last:
                    pv += z * a[rows, k + 2]
                    a[rows, k + 2] -= pv * r
                a[rows, k + 1] -= pv * q
                a[rows, k] -= pv
    return wr + 1j * wi


def eigenvalues(m: np.ndarray, balance: bool = True, max_sweeps: int | None = None) -> np.ndarray:
    """All eigenvalues of a real square matrix (complex array, unordered).

    Raises ``EigenConvergenceError`` if QR needs more than ``100 n^2`` sweeps.
    """
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"eigenvalues needs a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n > MAX_SIZE:
        raise ValueError(f"matrix size {n} exceeds the supported maximum {MAX_SIZE}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    if n == 0:
        return np.zeros(0, dtype=complex)
    found: list[float] = []
    if balance:
        found, a = _isolate(a)
        a = _scale(a) if a.shape[0] > 1 else a
    rest = np.zeros(0, dtype=complex)
    if a.shape[0]:
        cap = max_sweeps if max_sweeps is not None else 100 * a.shape[0] ** 2
        rest = _hqr(hessenberg(a), cap)
    return np.concatenate([np.asarray(found, dtype=complex), rest])


def eigenvector(m: np.ndarray, lam: complex, iterations: int = 3) -> np.ndarray:
    """Unit eigenvector for an already computed eigenvalue, by inverse iteration."""
    a = np.asarray(m, dtype=complex)
    n = a.shape[0]
    scale = max(np.abs(a).max(), 1.0)
    shifted = a - (lam + 1e-10 * scale) * np.eye(n)
    v = np.random.default_rng(0).standard_normal(n) + 0j
    for _ in range(iterations):
        v = np.linalg.solve(shifted, v)
        v /= np.linalg.norm(v)
    return v
