#!/usr/bin/env python3
"""Finite-difference audit of the analytic gradient.

Central differences over every parameter coordinate, so keep the model
tiny: the default shape has a few hundred parameters and two forward
passes per coordinate. Useful when touching anything in the backward
path; the relative-error report makes a broken gradient obvious long
before training does.
"""

import argparse
import sys
import time
import os

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from phasemotion.lossgrad import loss_and_grad  # noqa: E402
from phasemotion.network import (ModelConfig, flatten_params,  # noqa: E402
                                 init_params, unflatten_params)


def audit_one(cfg: ModelConfig, seed: int, batch: int, eps: float) -> float:
    rng = np.random.default_rng(seed)
    params = init_params(cfg, seed=seed)
    slabs = rng.standard_normal((batch, cfg.d, cfg.window + cfg.horizon))
    _, grad = loss_and_grad(slabs, params, cfg)
    flat = flatten_params(params)
    gflat = flatten_params(grad)
    worst = 0.0
    for j in range(flat.size):
        up = flat.copy()
        up[j] += eps
        down = flat.copy()
        down[j] -= eps
        lp, _ = loss_and_grad(slabs, unflatten_params(up, cfg), cfg)
        lm, _ = loss_and_grad(slabs, unflatten_params(down, cfg), cfg)
        fd = (lp - lm) / (2 * eps)
        worst = max(worst, abs(fd - gflat[j])
                    / max(abs(fd), abs(gflat[j]), 1e-6))
    return worst


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", type=int, default=2, help="input channels")
    ap.add_argument("--c", type=int, default=2, help="latent channels")
    ap.add_argument("--window", type=int, default=8)
    ap.add_argument("--hidden", type=int, default=2)
    ap.add_argument("--kernel", type=int, default=3)
    ap.add_argument("--horizons", default="0,3",
                    help="comma list of prediction horizons to audit")
    ap.add_argument("--seeds", type=int, default=10,
                    help="instances per horizon")
    ap.add_argument("--batch", type=int, default=3)
    ap.add_argument("--eps", type=float, default=1e-6)
    ap.add_argument("--tol", type=float, default=1e-4)
    args = ap.parse_args()

    horizons = [int(s) for s in args.horizons.split(",")]
    t0 = time.monotonic()
    worst_overall = 0.0
    for horizon in horizons:
        cfg = ModelConfig(d=args.d, c=args.c, window=args.window,
                          hidden=args.hidden, kernel=args.kernel,
                          dt=0.01, horizon=horizon)
        n_params = flatten_params(init_params(cfg, seed=0)).size
        for seed in range(args.seeds):
            worst = audit_one(cfg, seed, args.batch, args.eps)
            worst_overall = max(worst_overall, worst)
            print(f"horizon={horizon} seed={seed} params={n_params} "
                  f"worst_rel_err={worst:.3e}", flush=True)

    elapsed = time.monotonic() - t0
    verdict = "OK" if worst_overall <= args.tol else "FAIL"
    print(f"{verdict}: {len(horizons) * args.seeds} instances, "
          f"worst {worst_overall:.3e} (tol {args.tol:.1e}), {elapsed:.1f}s")
    return 0 if worst_overall <= args.tol else 1


if __name__ == "__main__":
    sys.exit(main())
