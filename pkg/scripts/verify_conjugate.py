#!/usr/bin/env python3
"""Scalar conjugate check: prior N(0, 1), A = 1, sigma_y = 1, y = 2.

The exact posterior is N(1, 0.5). Prints the sample moments of 2000 chains at
T = 1000 for Vanilla and for DPS over a range of step sizes in both step-size
modes, next to the analytic target.

    python scripts/verify_conjugate.py [--chains N] [--steps T]
"""

import argparse

import numpy as np

from dpsweep.benchmarks import conjugate_1d
from dpsweep.harness.config import build_operator, build_prior
from dpsweep.prior import analytic_posterior
from dpsweep.sampler import ConditioningMethod, SamplerConfig, chain_seed, run_chains
from dpsweep.schedule import build_linear_schedule


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--chains", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=1000)
    args = ap.parse_args()

    cfg = conjugate_1d()
    prior, op = build_prior(cfg), build_operator(cfg)
    y = np.array([2.0])
    mean, cov = analytic_posterior(prior, op, y, cfg.operator.noise_sigma)
    print(f"analytic posterior: mean {mean[0]:.4f}, variance {cov[0, 0]:.4f}")

    schedule = build_linear_schedule(args.steps)
    seeds = [chain_seed(0, 0, j) for j in range(args.chains)]
    settings = [ConditioningMethod("vanilla")]
    settings += [ConditioningMethod("dps", z) for z in (0.1, 0.3, 1.0, 3.0)]
    settings += [ConditioningMethod("dps", z, "constant") for z in (0.01, 0.1, 0.5)]
    print(f"{'variant':<8}{'mode':<21}{'zeta':>6}{'mean':>9}{'variance':>10}")
    for cond in settings:
        out = run_chains(SamplerConfig(args.steps, cond), schedule, prior, op, y, seeds)
        s = out.reconstructions[:, 0]
        mode = "-" if cond.variant == "vanilla" else cond.step_size_mode
        print(f"{cond.variant:<8}{mode:<21}{cond.zeta:>6g}{s.mean():>9.4f}{s.var(ddof=1):>10.4f}")


if __name__ == "__main__":
    main()
