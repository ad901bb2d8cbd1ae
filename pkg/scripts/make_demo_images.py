#!/usr/bin/env python3
"""Write a small set of smooth synthetic PNGs plus noisy copies for `dpsweep evaluate`.

    python scripts/make_demo_images.py OUT_DIR [--count N] [--size S]

Creates OUT_DIR/ref and OUT_DIR/recon; point evaluate.ref_dir / recon_dir at them.
"""

import argparse
from pathlib import Path

import numpy as np

from dpsweep.harness.data import save_png
from dpsweep.prior import GaussianPrior, squared_exponential_covariance


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out")
    ap.add_argument("--count", type=int, default=8)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    shape = (args.size, args.size, 1)
    prior = GaussianPrior(0.5, squared_exponential_covariance(shape, 4.0, 0.03, 1e-4), dim=args.size**2)
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    for sub in ("ref", "recon"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        img = prior.sample(rng).reshape(shape)
        save_png(out / "ref" / f"{i:03d}.png", img)
        save_png(out / "recon" / f"{i:03d}.png", img + 0.05 * rng.standard_normal(shape))
    print(f"wrote {args.count} reference/reconstruction pairs to {out}")


if __name__ == "__main__":
    main()
