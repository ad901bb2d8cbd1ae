"""Command line entry point: ``dpsweep sample|sweep|evaluate|verify-posterior``.

Exit codes: 0 success, 1 configuration error, 2 runtime error or diverged
chains, 3 posterior verification failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DpsweepError
from .harness.config import ExperimentConfig, load_config, write_resolved_config
from .harness.data import ingest_dataset, list_pngs, load_png, save_png
from .harness.sweep import CsvAppender, SWEEP_COLUMNS, run_setting, run_sweep
from .harness.verify import verify_posterior
from .metrics import CSV_COLUMNS, evaluate_batch

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3

log = logging.getLogger("dpsweep")


def cmd_sample(cfg: ExperimentConfig, args) -> int:
    data = ingest_dataset(cfg)
    if not 0 <= args.index < len(data):
        raise ConfigurationError(f"--index {args.index} outside dataset of size {len(data)}")
    variant = cfg.sweep.variants[0]
    steps = cfg.step_counts[0]
    zeta = None if variant == "vanilla" else cfg.sweep.zeta[0]
    i = args.index
    one = replace(data, names=[data.names[i]], x0=data.x0[i:i + 1], y=data.y[i:i + 1])
    single = replace(cfg, repeats=1)
    row, batch = run_setting(single, one, variant, steps, zeta)

    out = Path(cfg.output_dir) / "sample"
    out.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out)
    recon = batch.reconstructions[0].reshape(data.shape)
    if data.is_image:
        recon = np.clip(recon, 0.0, 1.0)
        save_png(out / "reconstruction.png", recon)
        save_png(out / "truth.png", data.image(i))
    np.save(out / "reconstruction.npy", recon)
    np.save(out / "measurement.npy", data.y[i].reshape(data.operator.output_shape))
    summary = {
        "item": one.names[0], "label": row.label,
        "psnr": row.report.aggregate["psnr"][0], "rmse": row.report.aggregate["rmse"][0],
        "ssim": row.report.aggregate["ssim"][0], "recon_error": row.recon_error[0],
        "residual": row.residual_mean, "divergences": row.divergences,
    }
    text = json.dumps(summary, indent=2, allow_nan=True)
    (out / "summary.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_RUNTIME if row.divergences else EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    rows = run_sweep(cfg, plots=not args.no_plots)
    for row in rows:
        print(f"{row.label}: recon_error={row.recon_error[0]:.4g} divergences={row.divergences}")
    return EXIT_RUNTIME if any(r.divergences for r in rows) else EXIT_OK


def cmd_evaluate(cfg: ExperimentConfig, args) -> int:
    ev = cfg.evaluate
    if ev.recon_dir is None or ev.ref_dir is None:
        raise ConfigurationError("evaluate.recon_dir and evaluate.ref_dir are required")
    recon_files = {p.name: p for p in list_pngs(ev.recon_dir)}
    ref_files = {p.name: p for p in list_pngs(ev.ref_dir)}
    if set(recon_files) != set(ref_files):
        missing = sorted(set(recon_files) ^ set(ref_files))
        raise ConfigurationError(f"reconstruction and reference directories differ: {missing[:5]}")
    names = sorted(recon_files)
    report = evaluate_batch(
        [load_png(recon_files[n]) for n in names], [load_png(ref_files[n]) for n in names],
        max_value=cfg.metrics.max_value,
    )
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with CsvAppender(out / "evaluate.csv", CSV_COLUMNS) as fh:
        fh.append(report.csv_row("evaluate", None, None))
    with CsvAppender(out / "per_image.csv", ("name", "psnr", "ssim", "rmse", "k")) as fh:
        for name, m in zip(names, report.per_image):
            fh.append({"name": name, "psnr": m.psnr, "ssim": m.ssim, "rmse": m.rmse, "k": m.k})
    agg = report.aggregate
    print(f"{len(names)} images: PSNR {agg['psnr'][0]:.3f}±{agg['psnr'][1]:.3f} dB, "
          f"SSIM {agg['ssim'][0]:.3f}±{agg['ssim'][1]:.3f}, RMSE {agg['rmse'][0]:.4f}, "
          f"FID(pixel) {report.frechet:.3f}, K {agg['k'][0]:.5f}")
    return EXIT_OK


def cmd_verify(cfg: ExperimentConfig, args) -> int:
    report = verify_posterior(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out)
    (out / "verify.json").write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.to_text())
    return EXIT_OK if report.passed else EXIT_VERIFY


COMMANDS = {"sample": cmd_sample, "sweep": cmd_sweep, "evaluate": cmd_evaluate, "verify-posterior": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpsweep", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML experiment configuration")
        p.add_argument("--seed", type=int, default=None, help="override the global seed")
        p.add_argument("--workers", type=int, default=None, help="override the chain worker count")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "sample":
            p.add_argument("--index", type=int, default=0, help="dataset item to reconstruct")
        if name == "sweep":
            p.add_argument("--no-plots", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        out = None if args.out is None else str(Path(args.out).resolve())
        cfg = load_config(args.config, {"seed": args.seed, "workers": args.workers, "output_dir": out})
        return COMMANDS[args.command](cfg, args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DpsweepError, ArithmeticError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
