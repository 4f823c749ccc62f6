"""Sweep drivers: eta calibration, parameter/policy sweeps, oracle comparison.

Every driver derives per-episode seeds from (master_seed, episode_index)
only, so sweeps are matched-seed across grid values and reproduce the same
CSV bytes for the same configuration. Floats are written with repr (shortest
round-trip) to keep output byte-stable.
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import mdp_oracle, stability
from .config import SimConfig, build_model
from .episode import TRACE_COLUMNS, run_episode
from .errors import ConfigError, DivergenceError

Z99 = 2.5758293035489004  # two-sided 99% normal quantile


def mean_ci99(values):
    v = np.asarray(values, float)
    m = float(v.mean())
    if v.size < 2:
        return m, 0.0
    half = Z99 * float(v.std(ddof=1)) / float(np.sqrt(v.size))
    return m, float(half)


def run_batch(model, policy, episodes, horizon=None, workers=1, table=None,
              episode_base=0):
    """Run `episodes` independent episodes; returns (metrics list, failures).

    Collection order is by episode index regardless of worker count, so
    aggregates are deterministic.
    """
    def one(i):
        return run_episode(model, episode_base + i, policy=policy,
                           horizon=horizon, table=table)

    results = [None] * episodes
    failures = []
    if workers <= 1:
        for i in range(episodes):
            try:
                results[i] = one(i)
            except DivergenceError as exc:
                failures.append((i, str(exc)))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = {pool.submit(one, i): i for i in range(episodes)}
            for fut, i in futs.items():
                try:
                    results[i] = fut.result()
                except DivergenceError as exc:
                    failures.append((i, str(exc)))
    return [r for r in results if r is not None], sorted(failures)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows, meta=None):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        fh.write("# ncsim-csv v1\n")
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={v}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_trace_csv(path, trace):
    rows = zip(trace.slot, trace.mode, trace.sigma_star, trace.nu_star,
               trace.power_gain, trace.delta_norm_sq, trace.trace_sigma,
               trace.weighted_error)
    formatted = [(int(s), int(m), repr(float(ss)), repr(float(nu)), repr(float(p)),
                  repr(float(d)), repr(float(t)), repr(float(w)))
                 for s, m, ss, nu, p, d, t, w in rows]
    write_csv(path, TRACE_COLUMNS, formatted)


@dataclass
class EtaCurve:
    etas: np.ndarray
    mean_nmse: np.ndarray
    ci99: np.ndarray
    best_eta: float

    @property
    def interior_minimum(self):
        k = int(np.argmin(self.mean_nmse))
        return 0 < k < self.etas.size - 1


def calibrate_eta(config: SimConfig, eta_grid, episodes=None, horizon=None,
                  workers=1, metric="normalized_mse"):
    """Matched-seed sweep over the regime-switch threshold; returns the curve
    and its argmin.

    metric selects the calibrated quantity: "normalized_mse" (default) or
    "objective" (error plus priced power, the quantity the policy trades
    off; the threshold only shows an interior optimum on a priced metric).
    """
    if metric not in ("normalized_mse", "objective"):
        raise ConfigError("metric must be normalized_mse or objective")
    eta_grid = np.asarray(list(eta_grid), float)
    if eta_grid.size == 0:
        raise ConfigError("eta grid must be nonempty")
    episodes = config.episodes if episodes is None else episodes
    means, cis = [], []
    all_failed = True
    for eta in eta_grid:
        model = build_model(config.replace(eta_th=float(eta)))
        metrics, failures = run_batch(model, config.policy, episodes,
                                      horizon=horizon, workers=workers)
        if metrics:
            all_failed = False
            m, ci = mean_ci99([getattr(x, metric) for x in metrics])
        else:
            m, ci = np.nan, np.nan
        means.append(m)
        cis.append(ci)
    if all_failed:
        raise DivergenceError("every point of the eta grid diverged")
    means = np.array(means)
    best = float(eta_grid[int(np.nanargmin(means))])
    return EtaCurve(etas=eta_grid, mean_nmse=means, ci99=np.array(cis), best_eta=best)


SWEEP_HEADER = ("axis", "value", "policy", "episodes", "mean_nmse", "ci99_nmse",
                "mean_objective", "ci99_objective", "mean_norm_objective",
                "mean_power_gain", "mean_mse", "activation_rate", "failures")


def sweep(config: SimConfig, axis, values, policies=None, episodes=None,
          horizon=None, workers=1, out_path=None):
    """Sweep F_bar, lam, or policy; per point per policy aggregate metrics.

    Per-point failures (divergence) are recorded and the sweep continues.
    """
    if axis not in ("F_bar", "lam", "policy"):
        raise ConfigError("axis must be one of F_bar, lam, policy")
    values = list(values)
    if not values:
        raise ConfigError("sweep values must be nonempty")
    episodes = config.episodes if episodes is None else episodes
    if axis == "policy":
        policies = [str(v) for v in values]
        values = [None]
    elif policies is None:
        policies = [config.policy]

    rows = []
    for val in values:
        cfg = config if val is None else config.replace(**{axis: float(val)})
        model = build_model(cfg)
        for pol in policies:
            metrics, failures = run_batch(model, pol, episodes,
                                          horizon=horizon, workers=workers)
            if metrics:
                nm, nci = mean_ci99([x.normalized_mse for x in metrics])
                ob, oci = mean_ci99([x.objective for x in metrics])
                nobj = float(np.mean([x.objective for x in metrics])) / (cfg.tau * model.normalizer)
                pw = float(np.mean([x.avg_power_gain for x in metrics]))
                ms = float(np.mean([x.mse for x in metrics]))
                act = float(np.mean([x.activation_rate for x in metrics]))
            else:
                nm = nci = ob = oci = nobj = pw = ms = act = np.nan
            rows.append((axis, _fmt(val if val is not None else pol), pol,
                         episodes - len(failures), nm, nci, ob, oci, nobj,
                         pw, ms, act, len(failures)))
    if out_path:
        write_csv(out_path, SWEEP_HEADER, rows,
                  meta={"master_seed": config.master_seed, "horizon": horizon or config.horizon})
    return rows


def compare_with_oracle(config: SimConfig, *, n_delta=81, n_sigma=49,
                        n_sstar=16, grid_pad=1.3, episodes=6, horizon=None,
                        eta_grid=(0.1, 0.2, 0.3, 0.5, 0.8), refine_check=True,
                        out_path=None):
    """Solve the oracle on a scalar instance and report the optimality loss
    of the tuned closed-form policy, both simulated under matched seeds."""
    if config.L > 2:
        raise ConfigError("oracle comparison is capped at 2 state dimensions")
    model = build_model(config)
    horizon = horizon or config.horizon
    pilot = run_episode(model, 0, horizon=horizon, collect_trace=True)
    dmax = float(np.sqrt(pilot.trace.delta_norm_sq.max())) * grid_pad
    smax = float(np.quantile(pilot.trace.trace_sigma, 0.9995)) * 1.5
    mdp = mdp_oracle.discretize_mdp(model.disc, model.dist, model.S,
                                    config.F_bar, config.lam,
                                    n_delta=n_delta, delta_max=dmax,
                                    n_sigma=n_sigma, sigma_max=smax,
                                    n_sstar=n_sstar)
    sol = mdp_oracle.relative_value_iteration(mdp)

    theta_refined = None
    if refine_check:
        mdp2 = mdp_oracle.discretize_mdp(model.disc, model.dist, model.S,
                                         config.F_bar, config.lam,
                                         n_delta=2 * n_delta - 1, delta_max=dmax,
                                         n_sigma=n_sigma, sigma_max=smax,
                                         n_sstar=n_sstar)
        theta_refined = mdp_oracle.relative_value_iteration(mdp2).theta

    table = mdp_oracle.OracleTable(mdp=mdp, policy=sol.policy_table)
    via_metrics, _ = run_batch(model, "oracle-via", episodes, horizon=horizon,
                               table=table)
    via_cost = float(np.mean([m.objective for m in via_metrics])) / config.tau

    best = None
    for eta in eta_grid:
        em = build_model(config.replace(eta_th=float(eta)))
        mm, _ = run_batch(em, config.policy if config.policy.startswith("proposed")
                          else "proposed-feedback", episodes, horizon=horizon)
        cost = float(np.mean([m.objective for m in mm])) / config.tau
        if best is None or cost < best[1]:
            best = (float(eta), cost)

    loss_sim = mdp_oracle.performance_loss(best[1], via_cost)
    loss_theta = mdp_oracle.performance_loss(best[1], sol.theta)
    report = {
        "theta": sol.theta,
        "theta_refined": theta_refined,
        "refine_change": (abs(theta_refined - sol.theta) / sol.theta
                          if theta_refined is not None else None),
        "via_sim_cost": via_cost,
        "best_eta": best[0],
        "proposed_cost": best[1],
        "loss_vs_via_sim_pct": loss_sim,
        "loss_vs_theta_pct": loss_theta,
        "oracle_extrapolations": table.extrapolations,
        "upset_violations": (mdp_oracle.transmit_upset_violations(mdp, sol.policy_table)
                             if config.L == 1 else None),
    }
    if out_path:
        write_csv(out_path, ("key", "value"),
                  [(k, _fmt(v) if v is not None else "") for k, v in report.items()],
                  meta={"master_seed": config.master_seed})
    return report


BOUND_HEADER = ("F_bar", "lambda", "mse_bound", "iterations", "residual",
                "sim_mse_mean", "sim_mse_ci99")


def bound_sweep(config: SimConfig, f_bars, lams, episodes=0, horizon=None,
                surrogate=False, out_path=None):
    """Fixed-point bound over (F_bar, lambda) pairs with one harvested sample
    set (reused across the sweep per the calibration contract); optional
    Monte Carlo MSE columns from closed-loop episodes."""
    model = build_model(config)
    samples = stability.harvest_q1_samples(model)
    if surrogate:
        samples = stability.surrogate_q1_samples(samples.nu_star, config.L,
                                                 samples.nu_star.size,
                                                 seed=config.master_seed)
    rows = []
    for fb in f_bars:
        for lv in lams:
            res = stability.solve_fixed_point(model.disc, model.dist, fb, lv,
                                              samples)
            sim_mean = sim_ci = np.nan
            if episodes:
                mm, _ = run_batch(build_model(config.replace(F_bar=float(fb), lam=float(lv))),
                                  config.policy, episodes, horizon=horizon)
                sim_mean, sim_ci = mean_ci99([m.mse for m in mm])
            rows.append((float(fb), float(lv), res.mse_bound, res.iterations,
                         res.residual, sim_mean, sim_ci))
    if out_path:
        write_csv(out_path, BOUND_HEADER, rows,
                  meta={"master_seed": config.master_seed})
    return rows


def metrics_to_json(metrics_list, model, path=None):
    """Aggregate metrics dictionary (and optional JSON file)."""
    agg = {}
    for key in ("normalized_mse", "objective", "mse", "avg_power_gain",
                "activation_rate", "avg_weighted_error"):
        vals = [getattr(m, key) for m in metrics_list]
        mean, ci = mean_ci99(vals)
        agg[key] = {"mean": mean, "ci99": ci}
    out = {
        "episodes": len(metrics_list),
        "normalizer": model.normalizer,
        "aggregate": agg,
        "per_episode": [
            {k: getattr(m, k) for k in ("normalized_mse", "objective", "mse",
                                        "avg_power_gain", "activation_rate",
                                        "min_sigma_eig", "n_slots")}
            for m in metrics_list],
    }
    if path:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w") as fh:
            json.dump(out, fh, indent=2, sort_keys=True)
    return out
