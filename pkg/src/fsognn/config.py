"""Flat ``key = value`` experiment configuration.

Example::

    # 5 RRHs / 2 ANs
    n_rrh = 5
    n_an = 2
    p_total = 1.5
    p_peak = 0.5
    c_cap = 20

Lines starting with ``#`` are comments. ``p_total``, ``p_peak``, ``c_cap``,
``n_rrh`` and ``n_an`` are required; every other key has a default (see
``KEYS``). A run manifest (``manifest.json``) is also accepted as a config.
"""

import json
from dataclasses import dataclass, fields

from .channel import FadingConfig, load_topology, sample_topology
from .gnn import GnnConfig
from .optim import TrainConfig

__all__ = ["ExperimentConfig", "KEYS", "REQUIRED", "parse_config", "load_config",
           "apply_overrides", "config_to_text", "ConfigError"]

REQUIRED = ("n_rrh", "n_an", "p_total", "p_peak", "c_cap")


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s):
    return None if str(s).strip().lower() in ("", "none", "default") else float(s)


def _opt_str(s):
    s = str(s).strip()
    return None if s.lower() in ("", "none") else s


# key -> (section, parser, default); a default of None in the train, gnn
# and fading sections defers to the corresponding dataclass
KEYS = {
    "n_rrh": ("exp", int, None),
    "n_an": ("exp", int, None),
    "topology_seed": ("exp", int, 0),
    "topology_file": ("exp", _opt_str, None),
    "eval_samples": ("exp", int, 10000),
    "eval_seed": ("exp", int, 12345),
    "restarts": ("exp", int, 1),
    "validation_samples": ("exp", int, 4000),
    "validation_seed": ("exp", int, 54321),
    "p_total": ("train", float, None),
    "p_peak": ("train", float, None),
    "c_cap": ("train", float, None),
    "batch_size": ("train", int, None),
    "iterations": ("train", int, None),
    "lr": ("train", float, None),
    "lr_decay": ("train", float, None),
    "beta1": ("train", float, None),
    "beta2": ("train", float, None),
    "adam_eps": ("train", float, None),
    "dual_step0": ("train", float, None),
    "dual_decay": ("train", float, None),
    "lambda_init": ("train", float, None),
    "power_std": ("train", _opt_float, None),
    "reward_baseline": ("train", _bool, None),
    "allow_idle": ("train", _bool, None),
    "node_state": ("train", str, None),
    "seed": ("train", int, None),
    "init_seed": ("train", int, None),
    "n_layers": ("gnn", int, None),
    "hidden_features": ("gnn", int, None),
    "filter_order": ("gnn", int, None),
    "attenuation_rate": ("fading", float, None),
    "lognormal_sigma": ("fading", float, None),
    "snr_gain": ("fading", float, None),
    "bandwidth_scale": ("fading", float, None),
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    n_rrh: int
    n_an: int
    topology_seed: int
    topology_file: str
    eval_samples: int
    eval_seed: int
    restarts: int
    validation_samples: int
    validation_seed: int
    train: TrainConfig
    gnn: GnnConfig
    fading: FadingConfig

    def topology(self):
        if self.topology_file:
            t = load_topology(self.topology_file)
            if (t.n_rrh, t.n_an) != (self.n_rrh, self.n_an):
                raise ConfigError(
                    f"topology file has N={t.n_rrh}, M={t.n_an}; config says "
                    f"N={self.n_rrh}, M={self.n_an}"
                )
            return t
        return sample_topology(self.n_rrh, self.n_an, self.topology_seed)

    def to_dict(self):
        out = {k: getattr(self, k) for k, spec in KEYS.items() if spec[0] == "exp"}
        for section in (self.train, self.gnn, self.fading):
            for f in fields(section):
                if f.name in KEYS:
                    out[f.name] = getattr(section, f.name)
        return out


def parse_config(text):
    """Parse the flat format into a raw ``{key: str}`` mapping."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        raw[key] = value
    return raw


def apply_overrides(raw, overrides):
    """Merge ``key=value`` strings (or a dict) over a raw mapping."""
    raw = dict(raw)
    items = overrides.items() if isinstance(overrides, dict) else (
        o.split("=", 1) for o in overrides
    )
    for key, value in items:
        key = key.strip()
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        raw[key] = str(value).strip()
    return raw


def build_config(raw):
    missing = [k for k in REQUIRED if k not in raw]
    if missing:
        raise ConfigError("missing required config keys: " + ", ".join(missing))
    vals = {"exp": {}, "train": {}, "gnn": {}, "fading": {}}
    for key, (section, parse, default) in KEYS.items():
        if key in raw:
            try:
                vals[section][key] = parse(raw[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from None
        elif section == "exp":
            vals[section][key] = default
    if vals["exp"]["restarts"] < 1:
        raise ConfigError("restarts must be >= 1")
    try:
        return ExperimentConfig(
            train=TrainConfig(**vals["train"]),
            gnn=GnnConfig(**vals["gnn"]),
            fading=FadingConfig(**vals["fading"]),
            **vals["exp"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, overrides=()):
    with open(path) as fh:
        text = fh.read()
    if str(path).endswith(".json"):
        data = json.loads(text)
        data = data.get("config", data)
        raw = {k: "none" if v is None else str(v) for k, v in data.items()}
    else:
        raw = parse_config(text)
    return build_config(apply_overrides(raw, overrides))


def config_to_text(cfg):
    lines = ["# resolved fsognn configuration"]
    for key, value in cfg.to_dict().items():
        lines.append(f"{key} = {'none' if value is None else value}")
    return "\n".join(lines) + "\n"
