"""Evaluation: baseline policy, Monte-Carlo estimates, permutation experiment."""

import json

import numpy as np

from . import channel as chan
from . import policy as pol
from .gnn import policy_from_channel
from .graph_core import PI_1, PI_2, check_permutation, split_permutation

__all__ = [
    "FEASIBILITY_TOL",
    "baseline_alloc",
    "estimate",
    "evaluate",
    "evaluate_baseline",
    "validator",
    "permutation_test",
    "write_report",
]

FEASIBILITY_TOL = 0.02


def baseline_alloc(topology, cfg, rng, size=None):
    """Equal power ``min(P_t/N, P_s)`` and a uniformly random AN per RRH."""
    n, m = topology.n_rrh, topology.n_an
    shape = (n,) if size is None else (size, n)
    p = min(cfg.p_total / n, cfg.p_peak)
    return pol.Allocation(np.full(shape, p), rng.integers(0, m, size=shape))


def estimate(topology, h, a, fading, cfg, tol=FEASIBILITY_TOL):
    """Summary statistics of a batch of allocations on channel draws ``h``."""
    obj = chan.weighted_objective(topology, h, a, fading)
    power = a.powers.sum(-1)
    loads = chan.per_an_load(topology, h, a, fading)
    n = obj.shape[0]
    mean_power = float(power.mean())
    mean_loads = loads.mean(0)
    return {
        "objective": float(obj.mean()),
        "objective_se": float(obj.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
        "power": mean_power,
        "loads": mean_loads.tolist(),
        "power_slack": cfg.p_total - mean_power,
        "congestion_slack": (cfg.c_cap - mean_loads).tolist(),
        "power_ok": bool(mean_power <= cfg.p_total * (1 + tol)),
        "congestion_ok": bool(np.all(mean_loads <= cfg.c_cap * (1 + tol))),
    }


def _policy(params, topology, h, cfg, backend=None):
    x = chan.default_node_state(topology, cfg.node_state)
    pp, _, _ = policy_from_channel(
        x, h, params, cfg.p_peak, cfg.power_std, cfg.allow_idle, backend
    )
    return pp


def evaluate(params, topology, fading, cfg, n_samples, seed=0, backend=None):
    """Mean-action and stochastic-policy estimates over fresh channel draws."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    h = chan.sample_csi(topology, fading, rng, size=n_samples)
    pp = _policy(params, topology, h, cfg, backend)
    mean_est = estimate(topology, h, pol.mean_action(pp, h), fading, cfg)
    stoch_est = estimate(topology, h, pol.sample(pp, rng), fading, cfg)
    return {
        "n_samples": n_samples,
        "seed": seed,
        "mean_action": mean_est,
        "stochastic": stoch_est,
        "mean_power_means": pp.power_means.mean(0).tolist(),
    }


def validator(topology, fading, cfg, n_samples, seed, backend=None):
    """Restart scorer: stochastic-policy objective and feasibility on held-out draws."""

    def score(params):
        est = evaluate(params, topology, fading, cfg, n_samples, seed, backend)["stochastic"]
        return est["objective"], est["power_ok"] and est["congestion_ok"]

    return score


def evaluate_baseline(topology, fading, cfg, n_samples, seed=0):
    rng = np.random.default_rng(seed)
    h = chan.sample_csi(topology, fading, rng, size=n_samples)
    a = baseline_alloc(topology, cfg, rng, size=n_samples)
    out = estimate(topology, h, a, fading, cfg)
    out.update(n_samples=n_samples, seed=seed, power_per_rrh=float(a.powers[0, 0]))
    return out


def _network_view(perm, topology, h, u, g, x):
    """Relabel topology, channel draws, policy noise and node state."""
    rmap, amap = split_permutation(perm, topology.n_rrh)
    t = chan.permute_topology(topology, rmap, amap)
    hp = h[:, rmap][:, :, amap]
    up = u[:, rmap]
    m = topology.n_an
    gp = g[:, rmap]
    gp = np.concatenate([gp[:, :, amap], gp[:, :, m:]], axis=-1)
    return t, hp, up, gp, x[perm]


def permutation_test(params, topology, fading, cfg, perms=None, n_samples=100,
                     seed=0, mode="coupled", backend=None):
    """Objective of one trained policy on relabeled copies of the network.

    ``mode="coupled"`` reuses the same channel draws and policy noise,
    relabeled, for every network, so equivariance implies equal objectives
    up to rounding. ``mode="independent"`` keeps the relabeled channel draws
    but samples the policy afresh per network, so the spread is pure
    policy-sampling noise; ``mode="fresh"`` redraws the channel too.
    The identity relabeling is always evaluated first as the reference.
    """
    n, m = topology.n_rrh, topology.n_an
    if perms is None:
        perms = [PI_1, PI_2] if (n, m) == (5, 2) else []
    perms = [check_permutation(p, n + m) for p in perms]
    for p in perms:
        split_permutation(p, n)
    all_perms = [np.arange(n + m)] + perms
    x = chan.default_node_state(topology, cfg.node_state)
    rows = []
    if mode == "coupled":
        rng = np.random.default_rng(seed)
        h = chan.sample_csi(topology, fading, rng, size=n_samples)
        pp = _policy(params, topology, h, cfg, backend)
        u, g = pol.draw_noise(pp, rng)
        for p in all_perms:
            t, hp, up, gp, xp = _network_view(p, topology, h, u, g, x)
            ppp, _, _ = policy_from_channel(
                xp, hp, params, cfg.p_peak, cfg.power_std, cfg.allow_idle, backend
            )
            mean_obj = chan.weighted_objective(t, hp, pol.mean_action(ppp, hp), fading).mean()
            stoch_obj = chan.weighted_objective(t, hp, pol.sample_from_noise(ppp, up, gp), fading).mean()
            rows.append({"perm": p.tolist(), "mean_action": float(mean_obj),
                         "stochastic": float(stoch_obj)})
        keys = ("mean_action", "stochastic")
    elif mode in ("independent", "fresh"):
        # "independent": the same channel draws (relabeled) with fresh policy
        # samples per network; "fresh": new channel draws as well
        rng = np.random.default_rng(seed)
        h = chan.sample_csi(topology, fading, rng, size=n_samples)
        for i, p in enumerate(all_perms):
            rmap, amap = split_permutation(p, n)
            t = chan.permute_topology(topology, rmap, amap)
            rng_i = np.random.default_rng([seed, i])
            if mode == "fresh":
                hp = chan.sample_csi(t, fading, rng_i, size=n_samples)
            else:
                hp = h[:, rmap][:, :, amap]
            ppp = _policy(params, t, hp, cfg, backend)
            est = estimate(t, hp, pol.sample(ppp, rng_i), fading, cfg)
            rows.append({"perm": p.tolist(), "stochastic": est["objective"],
                         "stochastic_se": est["objective_se"]})
        keys = ("stochastic",)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    summary = {}
    for k in keys:
        vals = np.array([r[k] for r in rows])
        ref = vals[0]
        summary[k] = {
            "max_rel_diff": float(np.max(np.abs(vals - ref)) / abs(ref)) if ref else 0.0,
            "rel_spread": float((vals.max() - vals.min()) / abs(vals.mean())),
        }
    return {"mode": mode, "n_samples": n_samples, "seed": seed, "networks": rows,
            "summary": summary}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_report(path, report):
    with open(path, "w") as fh:
        json.dump(_jsonable(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
