"""Model-free primal-dual training of the graph policy.

Each iteration draws a batch of channel matrices, samples allocations from
the current policy, observes capacities, ascends the Lagrangian with a
score-function gradient (Adam) and takes a projected dual descent step with
a geometrically decaying step size.
"""

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import channel as chan
from . import policy as pol
from .gnn import GnnParams, backward, heads_backward, init_params, policy_from_channel

__all__ = [
    "TrainConfig",
    "TrainMetrics",
    "AdamState",
    "Rollout",
    "rollout",
    "lagrangian_terms",
    "reward_factors",
    "policy_gradient",
    "primal_step",
    "dual_step",
    "train",
    "train_with_restarts",
    "restart_config",
]

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    p_total: float = 1.5
    p_peak: float = 0.5
    c_cap: float = 20.0
    batch_size: int = 32
    iterations: int = 20000
    lr: float = 1e-3
    lr_decay: float = 0.99985  # per iteration
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    dual_step0: float = 0.01
    dual_decay: float = 0.9998
    lambda_init: float = 0.0
    power_std: float = None  # default 0.1 * p_peak
    reward_baseline: bool = True
    allow_idle: bool = False
    node_state: str = "ones"
    seed: int = 0
    init_seed: int = 0

    def __post_init__(self):
        for name in ("p_total", "p_peak", "c_cap", "lr", "dual_step0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0 < self.dual_decay <= 1 or not 0 < self.lr_decay <= 1:
            raise ValueError("dual_decay and lr_decay must lie in (0, 1]")
        if self.lambda_init < 0:
            raise ValueError("lambda_init must be >= 0")
        if self.power_std is None:
            self.power_std = 0.1 * self.p_peak
        if not self.power_std > 0:
            raise ValueError("power_std must be positive")

    def primal_rate(self, k):
        return self.lr * self.lr_decay**k

    def dual_rate(self, k):
        return self.dual_step0 * self.dual_decay**k


@dataclass
class TrainMetrics:
    n_an: int
    rows: list = field(default_factory=list)

    def append(self, k, objective, lagrangian, lam, power_slack, cong_slack):
        self.rows.append(
            (k, float(objective), float(lagrangian), *map(float, lam),
             float(power_slack), *map(float, cong_slack))
        )

    def __len__(self):
        return len(self.rows)

    @property
    def columns(self):
        m = self.n_an
        return (
            ["iter", "objective", "lagrangian"]
            + [f"lambda_{i}" for i in range(m + 1)]
            + ["power_slack"]
            + [f"cong_slack_{i}" for i in range(1, m + 1)]
        )

    def array(self):
        return np.array(self.rows, dtype=np.float64).reshape(-1, len(self.columns))

    def column(self, name):
        return self.array()[:, self.columns.index(name)]

    def lambdas(self):
        a = self.array()
        return a[:, 3 : 3 + self.n_an + 1]

    def tail_mean(self, name, frac=0.1):
        col = self.column(name)
        if col.size == 0:
            return float("nan")
        return float(col[-max(1, int(len(col) * frac)) :].mean())

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for row in self.rows:
                w.writerow([row[0]] + [repr(v) for v in row[1:]])

    @classmethod
    def read_csv(cls, path):
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            n_an = sum(1 for c in header if c.startswith("cong_slack_"))
            out = cls(n_an)
            for row in r:
                out.rows.append((int(row[0]), *map(float, row[1:])))
        return out


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)


@dataclass
class Rollout:
    """One batch of observations under the current policy."""

    channel: np.ndarray  # (B, N, M)
    outputs: np.ndarray  # (B, V, F_out)
    cache: object
    policy: pol.PolicyParams
    allocation: pol.Allocation
    capacities: np.ndarray  # (B, N, M)

    @property
    def powers(self):
        return self.allocation.powers

    def loads(self):
        return self.capacities.sum(-2)


def rollout(params, topology, fading, cfg, rng, backend=None):
    h = chan.sample_csi(topology, fading, rng, size=cfg.batch_size)
    x = chan.default_node_state(topology, cfg.node_state)
    pp, out, cache = policy_from_channel(
        x, h, params, cfg.p_peak, cfg.power_std, cfg.allow_idle, backend
    )
    a = pol.sample(pp, rng)
    caps = chan.link_capacities(h, a, fading)
    return Rollout(h, out, cache, pp, a, caps)


def lagrangian_terms(weights, capacities, powers, cfg, lam):
    """Batch-average estimates of the Lagrangian and its pieces.

    ``capacities`` is ``(B, N, M)`` with zeros on unselected links and
    ``powers`` is ``(B, N)``.
    """
    capacities = np.asarray(capacities, dtype=np.float64)
    if capacities.ndim != 3 or capacities.shape[0] == 0:
        raise ValueError("need a nonempty (B, N, M) batch of capacities")
    lam = np.asarray(lam, dtype=np.float64)
    objective = float((np.asarray(weights) * capacities.sum(-1)).sum(-1).mean())
    power_term = lam[0] * (cfg.p_total - float(np.asarray(powers).sum(-1).mean()))
    cong_terms = lam[1:] * (cfg.c_cap - capacities.sum(-2).mean(0))
    total = objective + power_term + float(cong_terms.sum())
    return objective, power_term, cong_terms, total


def reward_factors(weights, capacities, powers, cfg, lam):
    """Per-sample Lagrangian integrand multiplying the score function."""
    lam = np.asarray(lam, dtype=np.float64)
    obj = (weights * capacities.sum(-1)).sum(-1)
    power = lam[0] * (cfg.p_total - powers.sum(-1))
    cong = ((cfg.c_cap - capacities.sum(-2)) * lam[1:]).sum(-1)
    return obj + power + cong


def policy_gradient(batch, params, lam, cfg, weights):
    """Score-function estimate of the Lagrangian gradient w.r.t. the taps."""
    r = reward_factors(weights, batch.capacities, batch.powers, cfg, lam)
    if cfg.reward_baseline:
        r = r - r.mean()
    g_mean, g_logit = pol.log_prob_grad(batch.policy, batch.allocation)
    scale = r / r.shape[0]
    dy = heads_backward(
        batch.outputs, batch.channel,
        g_mean * scale[:, None], g_logit * scale[:, None, None], cfg.p_peak,
    )
    if batch.cache.params is not params:
        raise ValueError("batch was not generated by these parameters")
    return backward(batch.cache, dy)


def primal_step(params, gradient, state, cfg):
    """Adam ascent step; ``state`` is updated in place."""
    g = gradient.theta if isinstance(gradient, GnnParams) else np.asarray(gradient)
    if g.shape != params.theta.shape:
        raise ValueError("gradient shape does not match parameters")
    if not np.all(np.isfinite(g)):
        bad = np.flatnonzero(~np.isfinite(g))
        raise FloatingPointError(
            f"non-finite gradient at step {state.step + 1}, taps {bad[:10].tolist()}"
        )
    state.step += 1
    state.m = cfg.beta1 * state.m + (1 - cfg.beta1) * g
    state.v = cfg.beta2 * state.v + (1 - cfg.beta2) * g * g
    m_hat = state.m / (1 - cfg.beta1**state.step)
    v_hat = state.v / (1 - cfg.beta2**state.step)
    lr = cfg.primal_rate(state.step - 1)
    return GnnParams(params.config, params.theta + lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps))


def dual_step(lam, mean_power, mean_loads, eta, cfg):
    if not eta > 0:
        raise ValueError("dual step size must be positive")
    lam = np.asarray(lam, dtype=np.float64)
    slack = np.concatenate([[cfg.p_total - mean_power], cfg.c_cap - np.asarray(mean_loads)])
    return np.maximum(lam - eta * slack, 0.0)


def train(cfg, topology, fading, gnn_cfg, params=None, backend=None, progress=None):
    """Run the primal-dual loop; returns ``(params, lambda, metrics)``."""
    if params is None:
        params = init_params(gnn_cfg, cfg.init_seed)
    rng = np.random.default_rng(cfg.seed)
    lam = np.full(topology.n_an + 1, float(cfg.lambda_init))
    state = AdamState.zeros(params.size)
    metrics = TrainMetrics(topology.n_an)
    w = topology.weights
    for k in range(cfg.iterations):
        batch = rollout(params, topology, fading, cfg, rng, backend)
        objective, _, _, total = lagrangian_terms(w, batch.capacities, batch.powers, cfg, lam)
        if not np.isfinite(total):
            raise FloatingPointError(f"non-finite Lagrangian at iteration {k}")
        grad = policy_gradient(batch, params, lam, cfg, w)
        params = primal_step(params, grad, state, cfg)
        mean_power = float(batch.powers.sum(-1).mean())
        mean_loads = batch.loads().mean(0)
        lam = dual_step(lam, mean_power, mean_loads, cfg.dual_rate(k), cfg)
        metrics.append(k, objective, total, lam, cfg.p_total - mean_power, cfg.c_cap - mean_loads)
        if progress is not None:
            progress(k, metrics)
    return params, lam, metrics


def _final_summary(metrics, cfg, frac=0.1, tol=0.02):
    a = metrics.array()
    if a.shape[0] == 0:
        return float("-inf"), True
    tail = a[-max(1, int(len(a) * frac)) :]
    cols = metrics.columns
    obj = tail[:, cols.index("objective")].mean()
    p_ok = tail[:, cols.index("power_slack")].mean() >= -tol * cfg.p_total
    c_ok = all(
        tail[:, cols.index(f"cong_slack_{i}")].mean() >= -tol * cfg.c_cap
        for i in range(1, metrics.n_an + 1)
    )
    return float(obj), bool(p_ok and c_ok)


def restart_config(cfg, r):
    """Seeds used by restart ``r`` (restart 0 is ``cfg`` itself)."""
    return replace(cfg, seed=cfg.seed + 1000 * r, init_seed=cfg.init_seed + 1000 * r)


def train_with_restarts(cfg, topology, fading, gnn_cfg, restarts=1, backend=None,
                        validate=None):
    """Independent runs (shifted seeds); keep the best feasible final objective.

    Runs are scored by ``validate(params) -> (objective, feasible)`` when
    given (e.g. a held-out Monte-Carlo evaluation), otherwise by the mean
    of the last 10% of training iterations.

    Returns ``(params, lambda, metrics, run_index, summaries)``.
    """
    runs = []
    for r in range(max(1, restarts)):
        rc = restart_config(cfg, r)
        params, lam, metrics = train(rc, topology, fading, gnn_cfg, backend=backend)
        obj, ok = validate(params) if validate else _final_summary(metrics, cfg)
        log.info("restart %d: objective %.4f feasible=%s", r, obj, ok)
        runs.append((params, lam, metrics, obj, ok))
    feasible = [i for i, run in enumerate(runs) if run[4]] or list(range(len(runs)))
    best = max(feasible, key=lambda i: runs[i][3])
    summaries = [
        {"restart": i, "objective": float(run[3]), "feasible": bool(run[4])}
        for i, run in enumerate(runs)
    ]
    params, lam, metrics = runs[best][:3]
    return params, lam, metrics, best, summaries
