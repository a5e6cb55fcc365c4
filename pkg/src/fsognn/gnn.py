"""Layered graph-filter network with exact reverse-mode tap gradients.

Each layer maps ``F_in`` node features to ``F_out`` through a bank of
order-``K`` polynomial filters of the shift matrix, summed over input
features and passed through a rectifier; the last layer uses the logistic
sigmoid so every output lies in (0, 1).

Output head layout (three features per node, independent of ``M``):

- feature 0 at RRH ``n``: power mean as a fraction of the peak power
- feature 1 at RRH ``n``: selection sharpness ``a_n`` (logit scale)
- feature 2 at AN ``m``: AN preference ``b_m`` (logit scale)

and the selection logit of RRH ``n`` for AN ``m`` is ``a_n * h_nm + b_m``.
Every head reads a node's own output or an edge weight, so relabeling RRHs
or ANs relabels the policy the same way.
"""

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .graph_core import build_shift, check_channel
from .policy import PolicyParams

__all__ = [
    "GnnConfig",
    "GnnParams",
    "ForwardCache",
    "init_params",
    "forward",
    "backward",
    "split_heads",
    "heads_backward",
    "save_params",
    "load_params",
    "dumps_params",
    "loads_params",
    "HEAD_FEATURES",
]

HEAD_FEATURES = 3
HIDDEN_DAMP = 0.1

MAGIC = b"FSOGNN"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<6sH5IQ")


@dataclass(frozen=True)
class GnnConfig:
    n_layers: int = 8
    hidden_features: int = 1
    filter_order: int = 5
    output_features: int = HEAD_FEATURES
    input_features: int = 1

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.hidden_features < 1 or self.output_features < 1 or self.input_features < 1:
            raise ValueError("feature counts must be positive")
        if self.filter_order < 0:
            raise ValueError("filter_order must be >= 0")

    def layer_shapes(self):
        """``(F_out, F_in, K+1)`` for every layer."""
        k1 = self.filter_order + 1
        fin = [self.input_features] + [self.hidden_features] * (self.n_layers - 1)
        fout = [self.hidden_features] * (self.n_layers - 1) + [self.output_features]
        return [(fo, fi, k1) for fo, fi in zip(fout, fin)]

    @property
    def n_params(self):
        return int(sum(np.prod(s) for s in self.layer_shapes()))

    def layout(self):
        shapes = self.layer_shapes()
        sizes = [int(np.prod(s)) for s in shapes]
        return kernels.Layout(
            offsets=np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64),
            fin=np.array([s[1] for s in shapes], dtype=np.int64),
            fout=np.array([s[0] for s in shapes], dtype=np.int64),
            order=self.filter_order,
            fmax=max(self.input_features, self.hidden_features, self.output_features),
        )


@dataclass
class GnnParams:
    """Filter taps stored flat in layer-major (f_out, f_in, tap) order."""

    config: GnnConfig
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (self.config.n_params,):
            raise ValueError(
                f"expected {self.config.n_params} taps, got shape {self.theta.shape}"
            )

    @property
    def size(self):
        return self.theta.size

    def layer(self, index):
        lay = self.config.layout()
        shape = self.config.layer_shapes()[index]
        return self.theta[lay.offsets[index] : lay.offsets[index + 1]].reshape(shape)

    def copy(self):
        return GnnParams(self.config, self.theta.copy())


@dataclass
class ForwardCache:
    shift: np.ndarray
    signal: np.ndarray
    params: GnnParams
    xs: np.ndarray
    zs: np.ndarray
    sh: np.ndarray
    batched: bool
    backend: str = field(default="numpy")


def init_params(cfg, seed, scheme="identity"):
    """Draw initial taps, deterministic in ``seed``.

    ``"uniform"``: every tap uniform on ``[-a, a]``, ``a = 1/sqrt(F * (K+1))``.
    ``"identity"`` (default): the same draw with tap ``k >= 1`` damped by
    ``1/k!`` (a further 10x on hidden layers) and the zero-order tap of
    hidden layers centred on 1, so each hidden layer starts near the
    identity. With one hidden feature the plain uniform draw leaves most
    networks with a dead rectifier layer, and undamped high-order taps blow
    up on the unnormalised shift.
    """
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(cfg.hidden_features * (cfg.filter_order + 1))
    theta = rng.uniform(-bound, bound, size=cfg.n_params)
    if scheme == "uniform":
        return GnnParams(cfg, theta)
    if scheme != "identity":
        raise ValueError(f"unknown init scheme {scheme!r}")
    params = GnnParams(cfg, theta)
    damp = 1.0 / np.array([math.factorial(k) for k in range(cfg.filter_order + 1)])
    for l in range(cfg.n_layers):
        taps = params.layer(l)
        taps *= damp
        if l < cfg.n_layers - 1:
            taps[..., 1:] *= HIDDEN_DAMP
            fo, fi, _ = taps.shape
            taps[np.arange(min(fo, fi)), np.arange(min(fo, fi)), 0] += 1.0
    return params


def _as_batch(x, s, n_in):
    s = np.asarray(s, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    batched = s.ndim == 3
    if not batched:
        if s.ndim != 2:
            raise ValueError(f"shift must be (V, V) or (B, V, V), got {s.shape}")
        s = s[None]
    B, V = s.shape[0], s.shape[1]
    if x.ndim == 1:
        x = np.broadcast_to(x[None, :, None], (B, V, 1))
    elif x.ndim == 2:
        x = x[None] if not batched else x[:, :, None]
        x = np.broadcast_to(x, (B,) + x.shape[1:])
    if x.shape[:2] != (B, V) or x.shape[2] != n_in:
        raise ValueError(f"signal shape {x.shape} does not match shift {s.shape}")
    return x, s, batched


def forward(x, s, params, backend=None):
    """Evaluate the network; returns ``(outputs, cache)``.

    ``x`` is a node signal ``(V,)`` / ``(V, F0)``; for a batch of shift
    matrices ``(B, V, V)`` it may also be ``(B, V)`` or ``(B, V, F0)``.
    Outputs are ``(V, F_out)`` or ``(B, V, F_out)``.
    """
    cfg = params.config
    x, s, batched = _as_batch(x, s, cfg.input_features)
    lay = cfg.layout()
    backend = backend or kernels.default_backend()
    xs, zs, sh = kernels.forward_batch(s, x, params.theta, lay, backend)
    if not np.all(np.isfinite(zs)):
        bad = [l for l in range(cfg.n_layers) if not np.all(np.isfinite(zs[l]))]
        raise FloatingPointError(f"non-finite pre-activations at layer {bad[0] + 1}")
    out = xs[-1, :, :, : cfg.output_features]
    cache = ForwardCache(s, x, params, xs, zs, sh, batched, backend)
    return (out if batched else out[0]), cache


def backward(cache, out_grad):
    """Gradient of ``sum(out_grad * outputs)`` with respect to every tap."""
    cfg = cache.params.config
    g = np.asarray(out_grad, dtype=np.float64)
    if not cache.batched:
        g = g[None]
    expected = cache.xs.shape[1:3] + (cfg.output_features,)
    if g.shape != expected:
        raise ValueError(f"out_grad shape {g.shape} != outputs shape {expected}")
    grad = kernels.backward_batch(
        cache.shift, cache.params.theta, cfg.layout(),
        cache.xs, cache.zs, cache.sh, g, cache.backend,
    )
    return GnnParams(cfg, grad)


_Y_HI = 1.0 - 2.0**-53
_Y_LO = 2.0**-1000


def _logit(y):
    y = np.clip(y, _Y_LO, _Y_HI)
    return np.log(y) - np.log1p(-y)


def _dlogit(y):
    y = np.clip(y, _Y_LO, _Y_HI)
    return 1.0 / (y * (1.0 - y))


def split_heads(outputs, n_rrh, n_an, p_peak, channel, power_std=None, allow_idle=False):
    """Map network outputs to truncated-Gaussian means and selection logits.

    ``channel`` is the ``(N, M)`` (or batched) gain matrix the outputs were
    computed on. ``power_std`` defaults to ``0.1 * p_peak``. With
    ``allow_idle`` a constant zero logit for a no-transmit choice is
    appended as column ``M``.
    """
    y = np.asarray(outputs, dtype=np.float64)
    h = check_channel(channel)
    if y.shape[-1] < HEAD_FEATURES:
        raise ValueError(f"need {HEAD_FEATURES} output features, got {y.shape[-1]}")
    if y.shape[-2] != n_rrh + n_an or h.shape[-2:] != (n_rrh, n_an):
        raise ValueError("outputs/channel do not match the topology sizes")
    means = p_peak * y[..., :n_rrh, 0]
    sharp = _logit(y[..., :n_rrh, 1])
    pref = _logit(y[..., n_rrh:, 2])
    logits = sharp[..., :, None] * h + pref[..., None, :]
    if allow_idle:
        logits = np.concatenate([logits, np.zeros(logits.shape[:-1] + (1,))], axis=-1)
    std = 0.1 * p_peak if power_std is None else power_std
    return PolicyParams(means, logits, std, p_peak)


def heads_backward(outputs, channel, grad_means, grad_logits, p_peak):
    """Pull gradients w.r.t. (means, logits) back onto the output grid."""
    y = np.asarray(outputs, dtype=np.float64)
    h = np.asarray(channel, dtype=np.float64)
    n, m = h.shape[-2:]
    grad_logits = np.asarray(grad_logits)[..., :m]
    dy = np.zeros_like(y)
    dy[..., :n, 0] = p_peak * grad_means
    dy[..., :n, 1] = (grad_logits * h).sum(-1) * _dlogit(y[..., :n, 1])
    dy[..., n:, 2] = grad_logits.sum(-2) * _dlogit(y[..., n:, 2])
    return dy


def dumps_params(params):
    cfg = params.config
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION, cfg.n_layers, cfg.hidden_features, cfg.filter_order,
        cfg.output_features, cfg.input_features, params.size,
    )
    return header + params.theta.astype("<f8").tobytes()


def loads_params(blob):
    if len(blob) < _HEADER.size:
        raise ValueError("model file truncated (no header)")
    magic, version, L, F, K, fo, fi, count = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ValueError("not a model file (bad magic)")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version}")
    cfg = GnnConfig(L, F, K, fo, fi)
    if count != cfg.n_params or len(blob) != _HEADER.size + 8 * count:
        raise ValueError("model file corrupt: tap count does not match header")
    theta = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size, count=count)
    return GnnParams(cfg, theta.astype(np.float64))


def save_params(path, params):
    with open(path, "wb") as fh:
        fh.write(dumps_params(params))


def load_params(path):
    with open(path, "rb") as fh:
        return loads_params(fh.read())


def policy_from_channel(x, channel, params, p_peak, power_std=None, allow_idle=False,
                        backend=None):
    """Forward pass plus heads for a (batch of) channel matrices."""
    h = check_channel(channel)
    n, m = h.shape[-2:]
    out, cache = forward(x, build_shift(h), params, backend)
    pp = split_heads(out, n, m, p_peak, h, power_std, allow_idle)
    return pp, out, cache
