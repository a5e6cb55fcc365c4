"""Synthetic FSO fronthaul environment.

The learner treats this module as a black box that returns link gains and
capacities. Gains follow exponential path attenuation with unit-mean
log-normal fading; a selected link carries ``B * log2(1 + gamma * h * p)``.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Topology",
    "FadingConfig",
    "sample_topology",
    "permute_topology",
    "distances",
    "sample_csi",
    "capacity",
    "link_capacities",
    "weighted_objective",
    "per_an_load",
    "default_node_state",
    "topology_to_text",
    "topology_from_text",
    "save_topology",
    "load_topology",
]

RRH_BOX_KM = 5.0
AN_BOX_KM = 1.0


@dataclass
class Topology:
    rrh_positions: np.ndarray  # (N, 2) km
    an_positions: np.ndarray  # (M, 2) km
    weights: np.ndarray  # (N,) in (0, 1]

    def __post_init__(self):
        self.rrh_positions = np.asarray(self.rrh_positions, dtype=np.float64).reshape(-1, 2)
        self.an_positions = np.asarray(self.an_positions, dtype=np.float64).reshape(-1, 2)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (len(self.rrh_positions),):
            raise ValueError("one weight per RRH required")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")
        if len(self.rrh_positions) == 0 or len(self.an_positions) == 0:
            raise ValueError("need at least one RRH and one AN")

    @property
    def n_rrh(self):
        return len(self.rrh_positions)

    @property
    def n_an(self):
        return len(self.an_positions)


@dataclass(frozen=True)
class FadingConfig:
    attenuation_rate: float = 0.2  # per km
    lognormal_sigma: float = 0.5
    snr_gain: float = 10.0
    bandwidth_scale: float = 1.0

    def __post_init__(self):
        if self.attenuation_rate <= 0 or self.snr_gain <= 0 or self.bandwidth_scale <= 0:
            raise ValueError("attenuation_rate, snr_gain and bandwidth_scale must be > 0")
        if self.lognormal_sigma < 0:
            raise ValueError("lognormal_sigma must be >= 0")


def sample_topology(n, m, seed):
    if n < 1 or m < 1:
        raise ValueError("need N >= 1 and M >= 1")
    rng = np.random.default_rng(seed)
    rrh = rng.uniform(-RRH_BOX_KM, RRH_BOX_KM, size=(n, 2))
    an = rng.uniform(-AN_BOX_KM, AN_BOX_KM, size=(m, 2))
    # uniform on (0, 1]
    w = 1.0 - rng.random(n)
    return Topology(rrh, an, w)


def permute_topology(t, rrh_map, an_map):
    """Relabel nodes: new RRH ``i`` is old RRH ``rrh_map[i]`` (same for ANs)."""
    return Topology(t.rrh_positions[rrh_map], t.an_positions[an_map], t.weights[rrh_map])


def distances(t):
    diff = t.rrh_positions[:, None, :] - t.an_positions[None, :, :]
    return np.sqrt((diff**2).sum(-1))


def sample_csi(t, f, rng, size=None):
    """Draw one ``(N, M)`` gain matrix, or ``(size, N, M)`` i.i.d. draws."""
    shape = (t.n_rrh, t.n_an) if size is None else (size, t.n_rrh, t.n_an)
    path = np.exp(-f.attenuation_rate * distances(t))
    s = f.lognormal_sigma
    if s == 0:
        return np.broadcast_to(path, shape).copy()
    fading = np.exp(rng.normal(-0.5 * s * s, s, size=shape))
    return path * fading


def capacity(h, p, selected, f):
    h = np.asarray(h, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if np.any(h < 0) or np.any(p < 0):
        raise ValueError("capacity needs nonnegative gain and power")
    c = f.bandwidth_scale * np.log2(1.0 + f.snr_gain * h * p)
    return np.where(selected, c, 0.0)


def link_capacities(h, a, f):
    """``(..., N, M)`` capacities; zero on every unselected link.

    A selection equal to ``M`` (idle) leaves the RRH's row empty.
    """
    h = np.asarray(h, dtype=np.float64)
    m = h.shape[-1]
    onehot = a.selections[..., None] == np.arange(m)
    return capacity(h, a.powers[..., None], onehot, f)


def weighted_objective(t, h, a, f):
    return (t.weights * link_capacities(h, a, f).sum(-1)).sum(-1)


def per_an_load(t, h, a, f):
    return link_capacities(h, a, f).sum(-2)


def default_node_state(t, mode="ones"):
    """Node signal fed to the network: all ones, or RRH weights then ones."""
    if mode == "ones":
        return np.ones(t.n_rrh + t.n_an)
    if mode == "weights":
        return np.concatenate([t.weights, np.ones(t.n_an)])
    raise ValueError(f"unknown node_state mode {mode!r}")


def topology_to_text(t):
    lines = ["# fsognn topology v1 (positions in km)", f"n_rrh {t.n_rrh}", f"n_an {t.n_an}"]
    for (x, y), w in zip(t.rrh_positions, t.weights):
        lines.append(f"rrh {float(x)!r} {float(y)!r} {float(w)!r}")
    for x, y in t.an_positions:
        lines.append(f"an {float(x)!r} {float(y)!r}")
    return "\n".join(lines) + "\n"


def topology_from_text(text):
    rrh, an, w, sizes = [], [], [], {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *vals = line.split()
        try:
            if key in ("n_rrh", "n_an"):
                sizes[key] = int(vals[0])
            elif key == "rrh":
                x, y, wt = map(float, vals)
                rrh.append((x, y))
                w.append(wt)
            elif key == "an":
                x, y = map(float, vals)
                an.append((x, y))
            else:
                raise ValueError(f"unknown record {key!r}")
        except (ValueError, IndexError) as exc:
            raise ValueError(f"topology line {lineno}: {exc}") from None
    if sizes.get("n_rrh", len(rrh)) != len(rrh) or sizes.get("n_an", len(an)) != len(an):
        raise ValueError("topology record counts do not match the header")
    return Topology(np.array(rrh), np.array(an), np.array(w))


def save_topology(path, t):
    with open(path, "w") as fh:
        fh.write(topology_to_text(t))


def load_topology(path):
    with open(path) as fh:
        return topology_from_text(fh.read())
