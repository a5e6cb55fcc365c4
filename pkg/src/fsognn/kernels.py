"""Batched graph-filter network kernels.

Two interchangeable backends compute the same forward pass and reverse-mode
tap gradients: explicit loops compiled with numba, and a vectorised numpy
path. ``FSOGNN_DISABLE_NUMBA=1`` selects numpy by default.

Array conventions (``B`` samples, ``V`` nodes, ``L`` layers, order ``K``):

- ``shift``: ``(B, V, V)``
- ``signal``: ``(B, V, F0)``
- ``theta``: flat taps, layer-major then (output feature, input feature, tap)
- caches are zero-padded to ``fmax`` features:
  ``xs (L+1, B, V, fmax)``, ``zs (L, B, V, fmax)``, ``sh (L, B, K+1, V, fmax)``
"""

import math
from typing import NamedTuple

import numpy as np

from ._accel import HAVE_NUMBA, njit

__all__ = [
    "Layout",
    "default_backend",
    "forward_batch",
    "backward_batch",
]


class Layout(NamedTuple):
    offsets: np.ndarray  # (L+1,) int64
    fin: np.ndarray  # (L,) int64
    fout: np.ndarray  # (L,) int64
    order: int
    fmax: int


def default_backend():
    return "numba" if HAVE_NUMBA else "numpy"


def _resolve(backend):
    backend = backend or default_backend()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is unavailable")
    return backend


# ---------------------------------------------------------------- numba path


@njit(cache=True)
def _sigmoid(u):
    if u >= 0.0:
        return 1.0 / (1.0 + math.exp(-u))
    e = math.exp(u)
    return e / (1.0 + e)


@njit(cache=True)
def _forward_loops(shift, signal, theta, offsets, fin, fout, order, fmax):
    B, V, _ = shift.shape
    L = fin.shape[0]
    K1 = order + 1
    xs = np.zeros((L + 1, B, V, fmax))
    zs = np.zeros((L, B, V, fmax))
    sh = np.zeros((L, B, K1, V, fmax))
    for b in range(B):
        for i in range(V):
            for g in range(signal.shape[2]):
                xs[0, b, i, g] = signal[b, i, g]
    for l in range(L):
        w = theta[offsets[l]:offsets[l + 1]].reshape((fout[l], fin[l], K1))
        last = l == L - 1
        for b in range(B):
            for g in range(fin[l]):
                for i in range(V):
                    sh[l, b, 0, i, g] = xs[l, b, i, g]
                for k in range(1, K1):
                    for i in range(V):
                        acc = 0.0
                        for j in range(V):
                            acc += shift[b, i, j] * sh[l, b, k - 1, j, g]
                        sh[l, b, k, i, g] = acc
            for i in range(V):
                for f in range(fout[l]):
                    acc = 0.0
                    for g in range(fin[l]):
                        for k in range(K1):
                            acc += w[f, g, k] * sh[l, b, k, i, g]
                    zs[l, b, i, f] = acc
                    if last:
                        xs[l + 1, b, i, f] = _sigmoid(acc)
                    elif acc > 0.0:
                        xs[l + 1, b, i, f] = acc
    return xs, zs, sh


@njit(cache=True)
def _backward_loops(shift, theta, offsets, fin, fout, order, xs, zs, sh, dout):
    L, B, V, fmax = zs.shape
    K1 = order + 1
    grad = np.zeros_like(theta)
    dz = np.zeros((B, V, fmax))
    nxt = np.zeros((B, V, fmax))
    c = np.zeros((K1, V))
    r = np.zeros(V)
    tmp = np.zeros(V)
    top = L - 1
    for b in range(B):
        for i in range(V):
            for f in range(fout[top]):
                y = xs[L, b, i, f]
                dz[b, i, f] = dout[b, i, f] * y * (1.0 - y)
    for l in range(L - 1, -1, -1):
        w = theta[offsets[l]:offsets[l + 1]].reshape((fout[l], fin[l], K1))
        base = offsets[l]
        for f in range(fout[l]):
            for g in range(fin[l]):
                for k in range(K1):
                    acc = 0.0
                    for b in range(B):
                        for i in range(V):
                            acc += dz[b, i, f] * sh[l, b, k, i, g]
                    grad[base + (f * fin[l] + g) * K1 + k] = acc
        if l == 0:
            break
        for b in range(B):
            for g in range(fin[l]):
                for k in range(K1):
                    for i in range(V):
                        acc = 0.0
                        for f in range(fout[l]):
                            acc += w[f, g, k] * dz[b, i, f]
                        c[k, i] = acc
                # Horner: r = sum_k (S^T)^k c_k
                for i in range(V):
                    r[i] = c[K1 - 1, i]
                for k in range(K1 - 2, -1, -1):
                    for i in range(V):
                        acc = 0.0
                        for j in range(V):
                            acc += shift[b, j, i] * r[j]
                        tmp[i] = acc + c[k, i]
                    for i in range(V):
                        r[i] = tmp[i]
                for i in range(V):
                    nxt[b, i, g] = r[i] if zs[l - 1, b, i, g] > 0.0 else 0.0
        for b in range(B):
            for i in range(V):
                for g in range(fmax):
                    dz[b, i, g] = nxt[b, i, g]
                    nxt[b, i, g] = 0.0
    return grad


# ---------------------------------------------------------------- numpy path


def _sigmoid_np(u):
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _forward_numpy(shift, signal, theta, layout):
    B, V, _ = shift.shape
    L = len(layout.fin)
    K1 = layout.order + 1
    xs = np.zeros((L + 1, B, V, layout.fmax))
    zs = np.zeros((L, B, V, layout.fmax))
    sh = np.zeros((L, B, K1, V, layout.fmax))
    xs[0, :, :, : signal.shape[2]] = signal
    for l in range(L):
        fi, fo = layout.fin[l], layout.fout[l]
        w = theta[layout.offsets[l] : layout.offsets[l + 1]].reshape(fo, fi, K1)
        cur = xs[l, :, :, :fi]
        sh[l, :, 0, :, :fi] = cur
        for k in range(1, K1):
            sh[l, :, k, :, :fi] = shift @ sh[l, :, k - 1, :, :fi]
        z = np.einsum("fgk,bkig->bif", w, sh[l, :, :, :, :fi])
        zs[l, :, :, :fo] = z
        xs[l + 1, :, :, :fo] = _sigmoid_np(z) if l == L - 1 else np.maximum(z, 0.0)
    return xs, zs, sh


def _backward_numpy(shift, theta, layout, xs, zs, sh, dout):
    L = len(layout.fin)
    K1 = layout.order + 1
    grad = np.zeros_like(theta)
    fo = layout.fout[-1]
    y = xs[L, :, :, :fo]
    dz = dout[:, :, :fo] * y * (1.0 - y)
    shift_t = np.swapaxes(shift, 1, 2)
    for l in range(L - 1, -1, -1):
        fi, fo = layout.fin[l], layout.fout[l]
        lo, hi = layout.offsets[l], layout.offsets[l + 1]
        w = theta[lo:hi].reshape(fo, fi, K1)
        grad[lo:hi] = np.einsum("bif,bkig->fgk", dz, sh[l, :, :, :, :fi]).ravel()
        if l == 0:
            break
        c = np.einsum("fgk,bif->kbig", w, dz)
        r = c[K1 - 1]
        for k in range(K1 - 2, -1, -1):
            r = shift_t @ r + c[k]
        dz = r * (zs[l - 1, :, :, :fi] > 0.0)
    return grad


# ---------------------------------------------------------------- dispatch


def forward_batch(shift, signal, theta, layout, backend=None):
    """Run the layered filter bank on a batch; returns ``(xs, zs, sh)``."""
    backend = _resolve(backend)
    shift = np.ascontiguousarray(shift, dtype=np.float64)
    signal = np.ascontiguousarray(signal, dtype=np.float64)
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    if backend == "numba":
        return _forward_loops(
            shift, signal, theta, layout.offsets, layout.fin, layout.fout,
            layout.order, layout.fmax,
        )
    return _forward_numpy(shift, signal, theta, layout)


def backward_batch(shift, theta, layout, xs, zs, sh, dout, backend=None):
    """Tap gradient of ``sum(dout * outputs)``, summed over the batch."""
    backend = _resolve(backend)
    shift = np.ascontiguousarray(shift, dtype=np.float64)
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    full = np.zeros(xs.shape[1:], dtype=np.float64)
    full[:, :, : dout.shape[2]] = dout
    if backend == "numba":
        return _backward_loops(
            shift, theta, layout.offsets, layout.fin, layout.fout,
            layout.order, xs, zs, sh, full,
        )
    return _backward_numpy(shift, theta, layout, xs, zs, sh, full)
