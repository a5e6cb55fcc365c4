"""Command-line front end: ``fsognn {train,eval,permtest,baseline}``."""

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__, kernels
from . import harness
from .config import ConfigError, config_to_text, load_config
from .channel import save_topology
from .gnn import load_params, save_params
from .graph_core import PI_1, PI_2, random_class_preserving
from .optim import restart_config, train_with_restarts

log = logging.getLogger("fsognn")

EXIT_INFEASIBLE = 3


def _overrides(args):
    out = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        out += [f"seed={args.seed}", f"init_seed={args.seed}"]
    if getattr(args, "iters", None) is not None:
        out.append(f"iterations={args.iters}")
    if getattr(args, "restarts", None) is not None:
        out.append(f"restarts={args.restarts}")
    return out


def _out_dir(path):
    os.makedirs(path, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise OSError(f"output directory {path!r} is not writable")
    return path


def cmd_train(args):
    cfg = load_config(args.config, _overrides(args))
    out = _out_dir(args.out_dir)
    sys.stdout.write(config_to_text(cfg))
    topo = cfg.topology()
    backend = kernels.default_backend()
    t0 = time.time()
    validate = None
    if cfg.restarts > 1 and cfg.validation_samples > 0:
        validate = harness.validator(
            topo, cfg.fading, cfg.train, cfg.validation_samples, cfg.validation_seed, backend
        )
    params, lam, metrics, best, summaries = train_with_restarts(
        cfg.train, topo, cfg.fading, cfg.gnn, cfg.restarts, backend=backend, validate=validate
    )
    elapsed = time.time() - t0
    chosen = restart_config(cfg.train, best)
    files = {
        "metrics": "metrics.csv",
        "model": "model.bin",
        "topology": "topology.txt",
        "config": "config.cfg",
    }
    metrics.write_csv(os.path.join(out, files["metrics"]))
    save_params(os.path.join(out, files["model"]), params)
    save_topology(os.path.join(out, files["topology"]), topo)
    with open(os.path.join(out, files["config"]), "w") as fh:
        fh.write(config_to_text(cfg))
    manifest = {
        "format": "fsognn-run/1",
        "version": __version__,
        "backend": backend,
        "config": cfg.to_dict(),
        "seeds": {
            "topology_seed": cfg.topology_seed,
            "seed": chosen.seed,
            "init_seed": chosen.init_seed,
        },
        "restart_selected": best,
        "restarts": summaries,
        "lambda": lam.tolist(),
        "iterations": len(metrics),
        "elapsed_s": round(elapsed, 3),
        "files": files,
    }
    harness.write_report(os.path.join(out, "manifest.json"), manifest)
    log.info("trained %d iterations in %.1fs -> %s", len(metrics), elapsed, out)
    return 0


def _load_model(args, cfg):
    params = load_params(args.model)
    if params.config != cfg.gnn:
        raise ConfigError(
            f"model shape {params.config} does not match configured network {cfg.gnn}"
        )
    return params


def _emit(report, args):
    text = json.dumps(harness._jsonable(report), indent=2, sort_keys=True)
    print(text)
    if args.out_dir:
        harness.write_report(os.path.join(_out_dir(args.out_dir), "report.json"), report)


def cmd_eval(args):
    cfg = load_config(args.config, _overrides(args))
    params = _load_model(args, cfg)
    topo = cfg.topology()
    n = args.samples or cfg.eval_samples
    report = harness.evaluate(params, topo, cfg.fading, cfg.train, n, cfg.eval_seed)
    report["baseline"] = harness.evaluate_baseline(topo, cfg.fading, cfg.train, n, cfg.eval_seed)
    report["config"] = cfg.to_dict()
    _emit(report, args)
    st = report["stochastic"]
    if args.strict and not (st["power_ok"] and st["congestion_ok"]):
        return EXIT_INFEASIBLE
    return 0


def _parse_perm(spec):
    return np.array([int(v) for v in spec.replace(" ", "").split(",")])


def cmd_permtest(args):
    cfg = load_config(args.config, _overrides(args))
    params = _load_model(args, cfg)
    topo = cfg.topology()
    perms = [_parse_perm(p) for p in args.perm or []]
    if not perms and (topo.n_rrh, topo.n_an) == (5, 2) and not args.random:
        perms = [PI_1, PI_2]
    rng = np.random.default_rng(cfg.eval_seed)
    perms += [random_class_preserving(topo.n_rrh, topo.n_an, rng) for _ in range(args.random)]
    modes = {"both": ["coupled", "independent"],
             "all": ["coupled", "independent", "fresh"]}.get(args.mode, [args.mode])
    report = {
        mode: harness.permutation_test(
            params, topo, cfg.fading, cfg.train, perms, args.samples, cfg.eval_seed, mode
        )
        for mode in modes
    }
    report["config"] = cfg.to_dict()
    _emit(report, args)
    return 0


def cmd_baseline(args):
    cfg = load_config(args.config, _overrides(args))
    topo = cfg.topology()
    n = args.samples or cfg.eval_samples
    report = harness.evaluate_baseline(topo, cfg.fading, cfg.train, n, cfg.eval_seed)
    report["config"] = cfg.to_dict()
    _emit(report, args)
    if args.strict and not (report["power_ok"] and report["congestion_ok"]):
        return EXIT_INFEASIBLE
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="fsognn", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=False):
        sp.add_argument("--config", required=True, metavar="PATH")
        if model:
            sp.add_argument("--model", required=True, metavar="PATH")
        sp.add_argument("--out-dir", metavar="PATH")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable)")

    sp = sub.add_parser("train", help="run primal-dual training")
    common(sp)
    sp.add_argument("--iters", type=int)
    sp.add_argument("--restarts", type=int)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a trained model")
    common(sp, model=True)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--strict", action="store_true")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("permtest", help="permutation experiment")
    common(sp, model=True)
    sp.add_argument("--perm", action="append", metavar="I,J,...",
                    help="class-preserving relabeling (repeatable)")
    sp.add_argument("--random", type=int, default=0, help="add N random relabelings")
    sp.add_argument("--mode", choices=["coupled", "independent", "fresh", "both", "all"],
                    default="both", help="'both' = coupled + independent; 'all' adds fresh")
    sp.add_argument("--samples", type=int, default=100)
    sp.set_defaults(func=cmd_permtest)

    sp = sub.add_parser("baseline", help="equal-power / random-AN baseline report")
    common(sp)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--strict", action="store_true")
    sp.set_defaults(func=cmd_baseline)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "train" and not args.out_dir:
        print("fsognn train: --out-dir is required", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"fsognn {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
