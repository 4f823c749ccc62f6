#!/usr/bin/env python3
"""Compare the numba and pure-numpy slot-loop backends.

The backend is fixed per process (NCSIM_BACKEND is read at import), so each
side runs in a subprocess. Prints wall time per backend, speedup, and the
worst per-slot deviation over a short window (one-ulp library differences can
flip a trigger deep into long horizons, so agreement is checked before the
paths can decorrelate).

Usage: python3 benchmarks/bench_backends.py [--horizon 30000] [--policy proposed-feedback]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, os, time
import numpy as np
from ncsim.config import SimConfig, build_model
from ncsim.episode import run_episode
from ncsim import _kernels

policy = {policy!r}
horizon = {horizon}
model = build_model(SimConfig.reference_preset(horizon=horizon, master_seed=7))
run_episode(model, 0, policy=policy, horizon=min(horizon, 512), burn_in=0)  # warm up / compile
t0 = time.time()
m = run_episode(model, 0, policy=policy, collect_trace=True)
dt = time.time() - t0
short = run_episode(model, 1, policy=policy, horizon=64, burn_in=0, collect_trace=True)
out = dict(backend="numba" if _kernels.NUMBA_ENABLED else "numpy",
           seconds=dt, nmse=m.normalized_mse, activation=m.activation_rate,
           short_werr=list(short.trace.weighted_error),
           short_nu=[x if np.isfinite(x) else None for x in short.trace.nu_star])
print(json.dumps(out))
"""


def run_side(backend, policy, horizon):
    env = dict(os.environ, NCSIM_BACKEND=backend)
    code = WORKER.format(policy=policy, horizon=horizon)
    proc = subprocess.run([sys.executable, "-c", code], capture_output=True,
                          text=True, env=env)
    if proc.returncode != 0:
        raise SystemExit(f"{backend} run failed:\n{proc.stderr}")
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--horizon", type=int, default=30_000)
    ap.add_argument("--policy", default="proposed-feedback")
    args = ap.parse_args()

    sides = {b: run_side(b, args.policy, args.horizon) for b in ("numba", "numpy")}
    for b, r in sides.items():
        print(f"{b:6s}: {r['seconds']:8.3f}s for {args.horizon} slots "
              f"(nmse {r['nmse']:.4f}, activation {r['activation']:.4f})")
    speedup = sides["numpy"]["seconds"] / max(sides["numba"]["seconds"], 1e-9)
    print(f"speedup: {speedup:.1f}x")

    a = sides["numba"]["short_werr"]
    b = sides["numpy"]["short_werr"]
    worst = max(abs(x - y) / max(abs(y), 1e-300) for x, y in zip(a, b))
    print(f"worst per-slot relative deviation over 64 slots: {worst:.2e}")
    if worst > 1e-9:
        raise SystemExit("backends disagree beyond floating-point roundoff")


if __name__ == "__main__":
    main()
