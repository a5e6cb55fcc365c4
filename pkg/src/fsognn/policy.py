"""Stochastic allocation policy: truncated-Gaussian powers, categorical AN choice.

All functions broadcast over leading batch dimensions: means are ``(..., N)``
and logits ``(..., N, M)``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, ndtr, ndtri, softmax

__all__ = [
    "PolicyParams",
    "Allocation",
    "sample",
    "sample_from_noise",
    "draw_noise",
    "log_prob",
    "log_prob_grad",
    "mean_action",
]

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass
class PolicyParams:
    power_means: np.ndarray
    selection_logits: np.ndarray
    power_std: float
    p_peak: float

    def __post_init__(self):
        self.power_means = np.asarray(self.power_means, dtype=np.float64)
        self.selection_logits = np.asarray(self.selection_logits, dtype=np.float64)
        if self.selection_logits.shape[:-1] != self.power_means.shape:
            raise ValueError("means and logits disagree on the RRH count")
        if not self.power_std > 0:
            raise ValueError(f"power_std must be positive, got {self.power_std}")
        if not self.p_peak > 0:
            raise ValueError(f"p_peak must be positive, got {self.p_peak}")

    @property
    def n_choices(self):
        return self.selection_logits.shape[-1]


@dataclass
class Allocation:
    powers: np.ndarray
    selections: np.ndarray

    def __post_init__(self):
        self.powers = np.asarray(self.powers, dtype=np.float64)
        self.selections = np.asarray(self.selections, dtype=np.int64)
        if self.powers.shape != self.selections.shape:
            raise ValueError("powers and selections must have the same shape")


def _interval(params):
    sigma = params.power_std
    lo = (0.0 - params.power_means) / sigma
    hi = (params.p_peak - params.power_means) / sigma
    return lo, hi


def draw_noise(params, rng):
    """Uniforms for the powers and Gumbel variates for the selections."""
    u = rng.random(params.power_means.shape)
    g = rng.gumbel(size=params.selection_logits.shape)
    return u, g


def sample_from_noise(params, u, g):
    """Inverse-CDF truncated-normal powers and Gumbel-max selections."""
    lo, hi = _interval(params)
    flo, fhi = ndtr(lo), ndtr(hi)
    q = np.clip(flo + u * (fhi - flo), flo, fhi)
    powers = params.power_means + params.power_std * ndtri(q)
    powers = np.clip(powers, 0.0, params.p_peak)
    selections = np.argmax(params.selection_logits + g, axis=-1)
    return Allocation(powers, selections)


def sample(params, rng):
    return sample_from_noise(params, *draw_noise(params, rng))


def mean_action(params, tiebreak=None):
    """Powers at the means, selection at the largest logit.

    Exact logit ties go to the largest ``tiebreak`` entry (e.g. the channel
    gain), which keeps the choice independent of how ANs are numbered;
    without ``tiebreak`` the lowest index wins.
    """
    logits = params.selection_logits
    if tiebreak is None:
        sel = np.argmax(logits, axis=-1)
    else:
        key = np.asarray(tiebreak, dtype=np.float64)
        extra = logits.shape[-1] - key.shape[-1]
        if extra:  # the idle column never wins a tie
            key = np.concatenate([key, np.full(key.shape[:-1] + (extra,), -np.inf)], axis=-1)
        key = np.broadcast_to(key, logits.shape)
        top = logits == logits.max(axis=-1, keepdims=True)
        sel = np.argmax(np.where(top, key, -np.inf), axis=-1)
    return Allocation(params.power_means.copy(), sel)


def _check_support(params, a):
    if a.powers.shape != params.power_means.shape:
        raise ValueError(
            f"allocation shape {a.powers.shape} != policy shape {params.power_means.shape}"
        )
    if np.any(a.powers < 0) or np.any(a.powers > params.p_peak):
        raise ValueError("allocation power outside [0, p_peak]")
    if np.any(a.selections < 0) or np.any(a.selections >= params.n_choices):
        raise ValueError("allocation selects a non-existent AN")


def log_prob(params, a):
    """Log-density of an allocation, summed over RRHs.

    Raises ``ValueError`` for allocations outside the support.
    """
    _check_support(params, a)
    sigma = params.power_std
    lo, hi = _interval(params)
    mass = ndtr(hi) - ndtr(lo)
    z = (a.powers - params.power_means) / sigma
    lp_power = -0.5 * z * z - _LOG_SQRT_2PI - np.log(sigma) - np.log(mass)
    lsm = log_softmax(params.selection_logits, axis=-1)
    lp_sel = np.take_along_axis(lsm, a.selections[..., None], axis=-1)[..., 0]
    return (lp_power + lp_sel).sum(axis=-1)


def log_prob_grad(params, a):
    """Return ``(d/d means, d/d logits)`` of :func:`log_prob`."""
    _check_support(params, a)
    sigma = params.power_std
    lo, hi = _interval(params)
    mass = ndtr(hi) - ndtr(lo)
    pdf_lo = np.exp(-0.5 * lo * lo - _LOG_SQRT_2PI)
    pdf_hi = np.exp(-0.5 * hi * hi - _LOG_SQRT_2PI)
    g_mean = (a.powers - params.power_means) / sigma**2 - (pdf_lo - pdf_hi) / (sigma * mass)
    g_logit = -softmax(params.selection_logits, axis=-1)
    np.put_along_axis(
        g_logit,
        a.selections[..., None],
        np.take_along_axis(g_logit, a.selections[..., None], axis=-1) + 1.0,
        axis=-1,
    )
    return g_mean, g_logit
