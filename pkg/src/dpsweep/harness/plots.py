"""Static SVG line charts of sweep metrics against step size and step count."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

log = logging.getLogger(__name__)

# key -> (axis label, higher is better)
METRICS = {
    "psnr": ("PSNR (dB) ↑", True),
    "ssim": ("SSIM ↑", True),
    "k": ("Kaggle score K ↑", True),
    "rmse": ("RMSE ↓", False),
    "fid": ("FID (pixel features) ↓", False),
}


def _value(row, metric: str) -> float:
    if metric == "fid":
        return row.report.frechet
    return row.report.aggregate[metric][0]


def _chart(path: Path, title: str, xlabel: str, ylabel: str, series: dict) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for name in sorted(series):
        pts = sorted(series[name])
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=name)
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    if len(series) > 1:
        ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def render_plots(rows, out_dir) -> list[Path]:
    """One chart per metric with finite values, against zeta and/or step count.

    ``{metric}_vs_zeta.svg`` groups conditioned rows by (variant, steps);
    ``{metric}_vs_steps.svg`` groups rows by (variant, zeta). Vs-zeta charts are
    drawn when several step sizes exist or only one step count does; vs-steps
    charts when several step counts exist or no row carries a step size.
    """
    if not rows:
        log.warning("no sweep rows; skipping plots")
        return []
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plt.rcParams["svg.hashsalt"] = "dpsweep"

    zetas = {r.zeta for r in rows if r.zeta is not None}
    steps = {r.step_count for r in rows}
    want_zeta = bool(zetas) and (len(zetas) > 1 or len(steps) == 1)
    want_steps = len(steps) > 1 or not zetas

    written = []
    for metric, (label, _) in METRICS.items():
        if not any(math.isfinite(_value(r, metric)) for r in rows):
            continue
        if want_zeta:
            series = defaultdict(list)
            for r in rows:
                if r.zeta is not None and math.isfinite(_value(r, metric)):
                    series[f"{r.variant.upper()} T={r.step_count}"].append((r.zeta, _value(r, metric)))
            path = out / f"{metric}_vs_zeta.svg"
            _chart(path, f"{label.split(' ')[0]} vs step size", "step size ζ", label, series)
            written.append(path)
        if want_steps:
            series = defaultdict(list)
            for r in rows:
                if math.isfinite(_value(r, metric)):
                    name = r.variant.upper() if r.zeta is None else f"{r.variant.upper()} ζ={r.zeta:g}"
                    series[name].append((r.step_count, _value(r, metric)))
            path = out / f"{metric}_vs_steps.svg"
            _chart(path, f"{label.split(' ')[0]} vs step count", "step count T", label, series)
            written.append(path)
    return written
