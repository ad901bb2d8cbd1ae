#!/usr/bin/env python3
"""Step-size / step-count ablation on the d = 8 Gaussian benchmark.

Runs every (variant, T, zeta) setting of configs/gaussian_benchmark.yaml,
writes results.csv, timings.csv and SVG charts, and prints a summary table with
the two trend statistics (error range across zeta vs across T).

    python scripts/run_gaussian_ablation.py [--config PATH] [--out DIR] [--workers N]
"""

import argparse
import logging
from pathlib import Path

import numpy as np

from dpsweep.harness import load_config, run_sweep

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "gaussian_benchmark.yaml"))
    ap.add_argument("--out", default=None)
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = load_config(args.config, {"output_dir": args.out, "workers": args.workers})
    rows = run_sweep(cfg)

    print(f"\n{'setting':<18}{'error':>10}{'residual':>11}{'PSNR':>9}{'FID':>9}")
    for r in rows:
        print(f"{r.label:<18}{r.recon_error[0]:>10.4f}{r.residual_mean:>11.4f}"
              f"{r.report.aggregate['psnr'][0]:>9.2f}{r.report.frechet:>9.4f}")

    dps = {(r.step_count, r.zeta): r.recon_error[0] for r in rows if r.variant == "dps"}
    t_max = max(t for t, _ in dps)
    across_zeta = [e for (t, _), e in dps.items() if t == t_max]
    across_t = [e for (_, z), e in dps.items() if z == 1.0]
    if len(across_zeta) > 1 and len(across_t) > 1:
        print(f"\nDPS error range across zeta (T={t_max}): {np.ptp(across_zeta):.4f}")
        print(f"DPS error range across T (zeta=1):      {np.ptp(across_t):.4f}")
    print(f"\noutputs in {cfg.output_dir}")


if __name__ == "__main__":
    main()
