"""Ablation sweeps over conditioning variant, step count and step size."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..metrics import CSV_COLUMNS, MetricsReport, evaluate_batch
from ..sampler import BatchResult, SamplerConfig, chain_seed, run_chains
from ..schedule import truncate_or_rebuild
from .config import ExperimentConfig, sweep_settings, write_resolved_config
from .data import Dataset, ingest_dataset

log = logging.getLogger(__name__)

EXTRA_COLUMNS = ("recon_error_mean", "recon_error_std", "residual_mean", "divergences", "lpips", "label")
SWEEP_COLUMNS = CSV_COLUMNS + EXTRA_COLUMNS
RESULTS_NAME = "results.csv"
TIMINGS_NAME = "timings.csv"


def setting_label(variant: str, step_count: int, zeta: float | None) -> str:
    if zeta is None:
        return f"{variant.capitalize()}-{step_count}"
    return f"{variant.upper()}-{step_count}-{zeta:.2f}"


@dataclass
class SweepRow:
    variant: str
    step_count: int
    zeta: float | None
    report: MetricsReport
    recon_error: tuple[float, float]
    residual_mean: float
    divergences: int
    wall_time: float

    @property
    def label(self) -> str:
        return setting_label(self.variant, self.step_count, self.zeta)

    def csv_row(self) -> dict:
        row = self.report.csv_row(self.variant, self.step_count, self.zeta)
        row.update(
            recon_error_mean=self.recon_error[0],
            recon_error_std=self.recon_error[1],
            residual_mean=self.residual_mean,
            divergences=self.divergences,
            lpips=self.report.lpips,
            label=self.label,
        )
        return row


def format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return ""
        return repr(v)
    return str(v)


class CsvAppender:
    """Header on open, then one fsync'd row per call: a killed run leaves a valid prefix."""

    def __init__(self, path: Path, columns):
        self.path = Path(path)
        self.columns = tuple(columns)
        self._fh = open(self.path, "w", encoding="utf-8", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._emit(self.columns)

    def _emit(self, cells):
        self._writer.writerow(cells)
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def append(self, row: dict):
        self._emit([format_cell(row.get(c)) for c in self.columns])

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def run_setting(
    cfg: ExperimentConfig, data: Dataset, variant: str, step_count: int, zeta: float | None
) -> tuple[SweepRow, BatchResult]:
    """All chains for one (variant, step_count, zeta) and their metrics.

    Chain ``(item, repeat)`` draws its noise from ``(seed, item, repeat)`` only,
    so every setting shares the same noise streams.
    """
    schedule = truncate_or_rebuild(cfg.schedule_spec, step_count)
    sampler_cfg = SamplerConfig(
        step_count=step_count,
        conditioning=cfg.conditioning_method(variant, zeta),
        seed=cfg.seed,
        deterministic_noise=cfg.conditioning.deterministic_noise,
    )
    n, reps = len(data), cfg.repeats
    item = np.repeat(np.arange(n), reps)
    seeds = [chain_seed(cfg.seed, i, r) for i in range(n) for r in range(reps)]
    batch = run_chains(
        sampler_cfg, schedule, data.model, data.operator, data.y[item], seeds,
        chunk_size=cfg.chunk_size, workers=cfg.workers,
    )

    ok = batch.diverged_at == 0
    recon = batch.reconstructions[ok]
    truth = data.x0[item[ok]]
    y = data.y[item[ok]]
    clamp = cfg.metrics.clamp_output if cfg.metrics.clamp_output is not None else data.is_image
    if clamp:
        recon = np.clip(recon, 0.0, 1.0)
    errors = np.linalg.norm(recon - truth, axis=-1)
    residuals = np.linalg.norm(y - data.operator.matvec(recon), axis=-1) if len(recon) else np.array([])
    report = evaluate_batch(
        [r.reshape(data.shape) for r in recon],
        [t.reshape(data.shape) for t in truth],
        max_value=cfg.metrics.max_value,
    )
    row = SweepRow(
        variant=variant,
        step_count=step_count,
        zeta=zeta,
        report=report,
        recon_error=(float(errors.mean()), float(errors.std())) if len(errors) else (math.nan, math.nan),
        residual_mean=float(residuals.mean()) if len(residuals) else math.nan,
        divergences=batch.divergence_count,
        wall_time=batch.wall_time,
    )
    return row, batch


def run_sweep(cfg: ExperimentConfig, data: Dataset | None = None, plots: bool = True) -> list[SweepRow]:
    """Run every setting in order, appending each row to ``results.csv`` as it completes.

    Wall times go to ``timings.csv`` so ``results.csv`` stays byte-reproducible.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out)
    data = data if data is not None else ingest_dataset(cfg)
    rows: list[SweepRow] = []
    with CsvAppender(out / RESULTS_NAME, SWEEP_COLUMNS) as results, \
            CsvAppender(out / TIMINGS_NAME, ("label", "wall_time_s")) as timings:
        for variant, steps, zeta in sweep_settings(cfg):
            row, _ = run_setting(cfg, data, variant, steps, zeta)
            results.append(row.csv_row())
            timings.append({"label": row.label, "wall_time_s": row.wall_time})
            log.info("%s: recon_error=%.4g divergences=%d (%.1fs)",
                     row.label, row.recon_error[0], row.divergences, row.wall_time)
            rows.append(row)
    if plots:
        from .plots import render_plots

        render_plots(rows, out)
    return rows


def read_results(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
