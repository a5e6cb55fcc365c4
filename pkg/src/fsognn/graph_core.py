"""Bipartite RRH/AN graph: shift matrix, polynomial filters, permutations.

Node order is fixed everywhere: indices ``0..N-1`` are RRHs and
``N..N+M-1`` are ANs. Channel matrices are ``(N, M)`` arrays (or stacks
``(B, N, M)``); shift matrices are ``(N+M, N+M)`` (or ``(B, V, V)``).

A permutation map ``p`` acts on a signal as ``(Pi x)[i] = x[p[i]]`` and on a
shift matrix as ``Pi S Pi^T = S[p][:, p]``.
"""

import numpy as np

__all__ = [
    "check_channel",
    "build_shift",
    "apply_shift",
    "graph_filter",
    "check_permutation",
    "is_class_preserving",
    "invert_permutation",
    "permute_signal",
    "permute_shift",
    "split_permutation",
    "random_class_preserving",
    "PI_1",
    "PI_2",
]

# The two relabelings of the 5-RRH / 2-AN network used for the permutation table.
PI_1 = np.array([2, 3, 4, 1, 0, 5, 6])
PI_2 = np.array([1, 0, 4, 3, 2, 6, 5])


def check_channel(h):
    h = np.asarray(h, dtype=np.float64)
    if h.ndim not in (2, 3):
        raise ValueError(f"channel matrix must be (N, M) or (B, N, M), got {h.shape}")
    if not np.all(np.isfinite(h)):
        raise ValueError("channel matrix has non-finite entries")
    if np.any(h < 0):
        raise ValueError("channel gains must be nonnegative")
    return h


def build_shift(h):
    """Return ``[[0, H], [H^T, 0]]`` for one channel matrix or a stack."""
    h = check_channel(h)
    n, m = h.shape[-2:]
    s = np.zeros(h.shape[:-2] + (n + m, n + m))
    s[..., :n, n:] = h
    s[..., n:, :n] = np.swapaxes(h, -1, -2)
    return s


def _check_pair(s, x):
    s = np.asarray(s, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if s.shape[-1] != s.shape[-2] or x.shape[0 if x.ndim == 1 else -1] != s.shape[-1]:
        raise ValueError(f"shape mismatch: shift {s.shape}, signal {x.shape}")
    return s, x


def apply_shift(s, x):
    s, x = _check_pair(s, x)
    return s @ x


def graph_filter(s, x, taps):
    """``sum_k taps[k] S^k x`` by repeated shifting (``S^k`` is never formed)."""
    s, x = _check_pair(s, x)
    taps = np.asarray(taps, dtype=np.float64)
    if taps.ndim != 1 or taps.size == 0:
        raise ValueError("taps must be a nonempty 1-d sequence")
    if not np.all(np.isfinite(taps)):
        raise ValueError("taps must be finite")
    z = x.copy()
    out = taps[0] * z
    for t in taps[1:]:
        z = s @ z
        out = out + t * z
    return out


def check_permutation(p, size=None):
    p = np.asarray(p)
    if p.ndim != 1 or not np.issubdtype(p.dtype, np.integer):
        raise ValueError("permutation map must be a 1-d integer sequence")
    if size is not None and p.size != size:
        raise ValueError(f"permutation has length {p.size}, expected {size}")
    if not np.array_equal(np.sort(p), np.arange(p.size)):
        raise ValueError("permutation map is not a bijection")
    return p.astype(np.int64)


def is_class_preserving(p, n_rrh):
    """True when RRH slots receive RRHs and AN slots receive ANs."""
    p = check_permutation(p)
    return bool(np.all(p[:n_rrh] < n_rrh) and np.all(p[n_rrh:] >= n_rrh))


def invert_permutation(p):
    p = check_permutation(p)
    inv = np.empty_like(p)
    inv[p] = np.arange(p.size)
    return inv


def permute_signal(p, x):
    """Reorder the node axis (axis 0 for 1-d/2-d signals, else axis -2)."""
    x = np.asarray(x)
    axis = 0 if x.ndim <= 2 else -2
    p = check_permutation(p, x.shape[axis])
    return np.take(x, p, axis=axis)


def permute_shift(p, s):
    s = np.asarray(s)
    p = check_permutation(p, s.shape[-1])
    return s[..., p, :][..., :, p]


def split_permutation(p, n_rrh):
    """Split a class-preserving map into its RRH map and its AN map."""
    p = check_permutation(p)
    if not is_class_preserving(p, n_rrh):
        raise ValueError("permutation mixes RRH and AN nodes")
    return p[:n_rrh], p[n_rrh:] - n_rrh


def random_class_preserving(n_rrh, n_an, rng):
    return np.concatenate([rng.permutation(n_rrh), n_rrh + rng.permutation(n_an)])
