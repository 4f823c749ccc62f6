"""Command-line interface.

Subcommands: simulate, calibrate-eta, sweep, via-compare, bound. Exit codes:
0 success, 2 configuration error, 3 numeric divergence, 4 non-convergence.
"""

import argparse
import json
import os
import sys

import numpy as np

from .config import POLICIES, SimConfig, build_model
from .episode import run_episode
from .errors import ConfigError, ConvergenceError, DivergenceError
from .sweeps import (bound_sweep, calibrate_eta, compare_with_oracle,
                     metrics_to_json, run_batch, sweep, write_csv,
                     write_trace_csv)


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _load_config(args):
    if args.config:
        cfg = SimConfig.from_yaml(args.config)
    else:
        cfg = SimConfig.reference_preset()
    if args.seed is not None:
        cfg = cfg.replace(master_seed=args.seed)
    if getattr(args, "episodes", None) is not None:
        cfg = cfg.replace(episodes=args.episodes)
    if getattr(args, "horizon", None) is not None:
        cfg = cfg.replace(horizon=args.horizon, burn_in=args.horizon // 10)
    if getattr(args, "policy", None):
        cfg = cfg.replace(policy=args.policy)
    return cfg


def _common(sub, episodes=True):
    sub.add_argument("--config", help="YAML config file (defaults to the built-in preset)")
    sub.add_argument("--seed", type=int, default=None, help="master seed override")
    sub.add_argument("--out", default="out", help="output directory")
    if episodes:
        sub.add_argument("--episodes", type=int, default=None)
        sub.add_argument("--horizon", type=int, default=None)
    sub.add_argument("--workers", type=int, default=1)


def build_parser():
    p = argparse.ArgumentParser(prog="ncsim",
                                description="event-driven MIMO AF precoding simulator")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run episodes for one configuration")
    _common(s)
    s.add_argument("--policy", choices=POLICIES, default=None)
    s.add_argument("--trace", action="store_true", help="write a per-slot trace CSV for episode 0")

    s = sub.add_parser("calibrate-eta", help="sweep the regime-switch threshold")
    _common(s)
    s.add_argument("--eta-grid", default="0.1,0.16,0.25,0.31,0.4,0.63,1.0")
    s.add_argument("--metric", choices=("normalized_mse", "objective"),
                   default="normalized_mse")

    s = sub.add_parser("sweep", help="sweep F_bar, lambda, or policy")
    _common(s)
    s.add_argument("--axis", choices=("F_bar", "lam", "policy"), required=True)
    s.add_argument("--values", required=True,
                   help="comma list (numbers, or policy names for --axis policy)")
    s.add_argument("--policies", default=None, help="comma list of policies per point")

    s = sub.add_parser("via-compare", help="optimality loss against the value-iteration oracle")
    _common(s)
    s.add_argument("--n-delta", type=int, default=81)
    s.add_argument("--n-sigma", type=int, default=49)
    s.add_argument("--n-sstar", type=int, default=16)
    s.add_argument("--eta-grid", default="0.1,0.2,0.3,0.5,0.8")
    s.add_argument("--no-refine-check", action="store_true")

    s = sub.add_parser("bound", help="estimation-error bound fixed point")
    _common(s)
    s.add_argument("--f-bars", default=None, help="comma list (default: config F_bar)")
    s.add_argument("--lams", default=None, help="comma list (default: config lambda)")
    s.add_argument("--surrogate", action="store_true",
                   help="isotropic-direction surrogate sampler instead of pilot pairs")
    return p


def _cmd_simulate(args):
    cfg = _load_config(args)
    model = build_model(cfg)
    metrics, failures = run_batch(model, cfg.policy, cfg.episodes,
                                  workers=args.workers)
    if not metrics:
        raise DivergenceError(f"all episodes diverged: {failures}")
    os.makedirs(args.out, exist_ok=True)
    out = metrics_to_json(metrics, model, os.path.join(args.out, "metrics.json"))
    if failures:
        out["failures"] = failures
    if args.trace:
        m0 = run_episode(model, 0, collect_trace=True)
        write_trace_csv(os.path.join(args.out, "trace.csv"), m0.trace)
    print(json.dumps(out["aggregate"], indent=2, sort_keys=True))
    return 0


def _cmd_calibrate(args):
    cfg = _load_config(args)
    curve = calibrate_eta(cfg, _floats(args.eta_grid), workers=args.workers,
                          metric=args.metric)
    rows = list(zip(curve.etas, curve.mean_nmse, curve.ci99))
    write_csv(os.path.join(args.out, "eta_curve.csv"),
              ("eta_th", f"mean_{args.metric}", f"ci99_{args.metric}"), rows,
              meta={"master_seed": cfg.master_seed, "best_eta": curve.best_eta})
    print(f"best eta_th = {curve.best_eta} "
          f"(interior minimum: {curve.interior_minimum})")
    return 0


def _cmd_sweep(args):
    cfg = _load_config(args)
    if args.axis == "policy":
        values = [v.strip() for v in args.values.split(",") if v.strip()]
    else:
        values = _floats(args.values)
    policies = ([v.strip() for v in args.policies.split(",")]
                if args.policies else None)
    rows = sweep(cfg, args.axis, values, policies=policies,
                 workers=args.workers,
                 out_path=os.path.join(args.out, f"sweep_{args.axis}.csv"))
    print(f"wrote {len(rows)} rows to {args.out}/sweep_{args.axis}.csv")
    return 0


def _cmd_via(args):
    cfg = _load_config(args)
    report = compare_with_oracle(
        cfg, n_delta=args.n_delta, n_sigma=args.n_sigma, n_sstar=args.n_sstar,
        eta_grid=_floats(args.eta_grid), refine_check=not args.no_refine_check,
        episodes=cfg.episodes, out_path=os.path.join(args.out, "via_compare.csv"))
    print(json.dumps({k: v for k, v in report.items()}, indent=2, sort_keys=True,
                     default=float))
    return 0


def _cmd_bound(args):
    cfg = _load_config(args)
    f_bars = _floats(args.f_bars) if args.f_bars else [cfg.F_bar]
    lams = _floats(args.lams) if args.lams else [cfg.lam]
    rows = bound_sweep(cfg, f_bars, lams, episodes=cfg.episodes,
                       surrogate=args.surrogate,
                       out_path=os.path.join(args.out, "bound.csv"))
    for row in rows:
        print(f"F_bar={row[0]} lambda={row[1]} bound={row[2]!r} sim_mse={row[5]!r}")
    return 0


COMMANDS = {
    "simulate": _cmd_simulate,
    "calibrate-eta": _cmd_calibrate,
    "sweep": _cmd_sweep,
    "via-compare": _cmd_via,
    "bound": _cmd_bound,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return 3
    except ConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
