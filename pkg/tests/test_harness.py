import csv
import dataclasses
import os
import signal
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import yaml
from PIL import Image

from dpsweep.benchmarks import conjugate_1d, gaussian_benchmark
from dpsweep.errors import ConfigurationError, UnsupportedPriorError
from dpsweep.harness import (
    candidate_settings,
    ingest_dataset,
    load_config,
    render_plots,
    run_sweep,
    sweep_settings,
    verify_posterior,
)
from dpsweep.harness import plots as plots_module
from dpsweep.harness import sweep as sweep_module
from dpsweep.harness.config import (
    MixtureComponent,
    OperatorConfig,
    PriorConfig,
    SweepConfig,
    VerifyConfig,
)
from dpsweep.harness.data import DataError, load_png
from dpsweep.harness.sweep import SWEEP_COLUMNS, format_cell, read_results, setting_label

REPO = Path(__file__).resolve().parents[1]
ABLATION_ZETAS = [0.3, 0.5, 0.75, 0.8, 1.0, 2.0, 2.2, 3.0, 5.0]


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


def small_sweep(tmp_path, **over):
    base = dict(count=40, output_dir=str(tmp_path / "out"),
                sweep=SweepConfig(variants=["vanilla", "dps", "mcg"], zeta=[0.3, 1.0], steps=[50, 100]))
    base.update(over)
    return gaussian_benchmark(**base)


# --- config --------------------------------------------------------------

def test_minimal_config_gets_defaults(tmp_path):
    p = write_yaml(tmp_path / "c.yaml", {
        "prior": {"type": "gaussian", "cov": 1.0},
        "operator": {"kind": "identity"},
        "sweep": {"zeta": [1.0]},
    })
    cfg = load_config(p)
    assert cfg.schedule.step_count == 1000
    assert cfg.schedule.beta_start == 1e-4 and cfg.schedule.beta_end == 0.02
    assert cfg.sweep.variants == ["dps"]
    assert cfg.conditioning.step_size_mode == "residual_normalized"
    assert cfg.step_counts == [1000]
    assert Path(cfg.output_dir).is_absolute()


@pytest.mark.parametrize("bad, key", [
    ({"sweep": {"zetas": [1.0]}}, "sweep.zetas"),
    ({"priors": {}}, "priors"),
    ({"prior": {"type": "mixture", "components": [{"wieght": 1.0}]}}, "prior.components[0].wieght"),
])
def test_unknown_keys_are_fatal(tmp_path, bad, key):
    with pytest.raises(ConfigurationError, match=key.replace("[", r"\[").replace("]", r"\]")):
        load_config(write_yaml(tmp_path / "c.yaml", bad))


@pytest.mark.parametrize("bad, key", [
    ({"repeats": 0}, "repeats"),
    ({"sweep": {"zeta": [-1.0]}}, "sweep.zeta"),
    ({"operator": {"kind": "bicubic"}}, "operator.kind"),
    ({"schedule": {"beta_start": 0.1, "beta_end": 0.01}}, "schedule"),
])
def test_invalid_values_name_the_key(tmp_path, bad, key):
    with pytest.raises(ConfigurationError, match=key):
        load_config(write_yaml(tmp_path / "c.yaml", bad))


def test_ablation_grid_has_27_candidates(tmp_path):
    p = write_yaml(tmp_path / "c.yaml", {"sweep": {"variants": ["vanilla", "dps"], "zeta": ABLATION_ZETAS,
                                                   "steps": [1000, 1500, 2000]}})
    cfg = load_config(p)
    assert len(candidate_settings(cfg)) == 27
    settings = sweep_settings(cfg)
    assert len(settings) == 3 + 27
    assert settings[0] == ("vanilla", 1000, None)


def test_cli_overrides_and_relative_paths(tmp_path):
    p = write_yaml(tmp_path / "c.yaml", {"output_dir": "runs/x", "seed": 1})
    cfg = load_config(p, {"seed": 9, "workers": None})
    assert cfg.seed == 9 and cfg.workers == 1
    assert cfg.output_dir == str((tmp_path / "runs/x").resolve())


def test_example_config_matches_benchmark_definition():
    from_file = load_config(REPO / "configs" / "gaussian_benchmark.yaml")
    bench = gaussian_benchmark(count=500)
    for section in ("prior", "operator", "data", "conditioning", "metrics", "schedule"):
        assert getattr(from_file, section) == getattr(bench, section), section


def test_label_format():
    assert setting_label("dps", 1000, 2.2) == "DPS-1000-2.20"
    assert setting_label("vanilla", 1500, None) == "Vanilla-1500"
    assert format_cell(None) == "" and format_cell(float("nan")) == ""
    assert format_cell(0.1) == "0.1" and format_cell(True) == "true" and format_cell(np.int64(3)) == "3"


# --- ingestion -----------------------------------------------------------

def test_synthetic_ingest():
    cfg = gaussian_benchmark(count=2000)
    data = ingest_dataset(cfg)
    assert data.x0.shape == (2000, 8) and data.y.shape == (2000, 2)
    noise = data.y - data.operator.matvec(data.x0)
    assert noise.std() == pytest.approx(0.05, rel=0.05)
    again = ingest_dataset(cfg)
    assert data.x0.tobytes() == again.x0.tobytes() and data.y.tobytes() == again.y.tobytes()
    other = ingest_dataset(dataclasses.replace(cfg, data=dataclasses.replace(cfg.data, seed=99)))
    assert other.x0.tobytes() != data.x0.tobytes()


def test_png_ingest_downsamples_to_64(tmp_path):
    rng = np.random.default_rng(0)
    img_dir = tmp_path / "imgs"
    img_dir.mkdir()
    for i in range(2):
        Image.fromarray(rng.integers(0, 256, (256, 256, 3), dtype=np.uint8)).save(img_dir / f"{i}.png")
    p = write_yaml(tmp_path / "c.yaml", {
        "prior": {"type": "gaussian", "mean": 0.5, "cov": 0.05},
        "operator": {"kind": "downsample_avg", "factor": 4, "noise_sigma": 0.0},
        "data": {"source": "images", "path": "imgs"},
    })
    data = ingest_dataset(load_config(p))
    assert data.operator.output_shape == (64, 64, 3)
    assert data.y.shape == (2, 64 * 64 * 3)
    assert data.is_image and data.names == ["0.png", "1.png"]
    np.testing.assert_allclose(data.y[0], data.operator.matvec(load_png(img_dir / "0.png").ravel()))


def test_png_errors_name_the_file(tmp_path):
    bad = tmp_path / "broken.png"
    bad.write_bytes(b"not a png")
    with pytest.raises(DataError, match="broken.png"):
        load_png(bad)
    empty = tmp_path / "empty"
    empty.mkdir()
    p = write_yaml(tmp_path / "c.yaml", {"data": {"source": "images", "path": "empty"}})
    with pytest.raises(DataError, match="no PNG"):
        ingest_dataset(load_config(p))


# --- sweeps --------------------------------------------------------------

def test_vanilla_only_sweep_has_empty_zeta(tmp_path):
    cfg = gaussian_benchmark(count=5, output_dir=str(tmp_path),
                             sweep=SweepConfig(variants=["vanilla"], zeta=[1.0], steps=[20]))
    rows = run_sweep(cfg, plots=False)
    assert len(rows) == 1
    (row,) = read_results(tmp_path / "results.csv")
    assert row["variant"] == "vanilla" and row["zeta"] == "" and row["step_count"] == "20"
    assert row["label"] == "Vanilla-20"


def test_sweep_csv_is_reproducible_across_workers(tmp_path):
    runs = []
    for i, (workers, chunk) in enumerate([(1, 16), (1, 16), (3, 16)]):
        cfg = small_sweep(tmp_path / str(i), workers=workers, chunk_size=chunk, repeats=2)
        run_sweep(cfg, plots=False)
        runs.append((Path(cfg.output_dir) / "results.csv").read_bytes())
    assert runs[0] == runs[1] == runs[2]
    lines = runs[0].decode().splitlines()
    assert lines[0].split(",") == list(SWEEP_COLUMNS)
    assert len(lines) == 1 + 2 + 2 * 2 * 2


def test_resolved_config_round_trips(tmp_path):
    cfg = small_sweep(tmp_path, prior=PriorConfig(type="mixture", components=[
        MixtureComponent(0.5, 0.0, 1.0), MixtureComponent(0.5, 1.0, 0.5)]))
    run_sweep(cfg, plots=False)
    reloaded = load_config(Path(cfg.output_dir) / "resolved_config.yaml")
    assert reloaded == cfg


def test_zero_zeta_sweep_rows_equal_vanilla(tmp_path):
    cfg = gaussian_benchmark(count=20, output_dir=str(tmp_path),
                             sweep=SweepConfig(variants=["vanilla", "dps"], zeta=[0.0], steps=[30]))
    run_sweep(cfg, plots=False)
    rows = read_results(Path(cfg.output_dir) / "results.csv")
    keys = ["psnr_mean", "rmse_mean", "fid", "recon_error_mean", "residual_mean"]
    assert [rows[0][k] for k in keys] == [rows[1][k] for k in keys]


def test_interrupted_sweep_keeps_valid_prefix(tmp_path, monkeypatch):
    cfg = small_sweep(tmp_path)
    real = sweep_module.run_setting
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 3:
            raise KeyboardInterrupt
        return real(*args, **kwargs)

    monkeypatch.setattr(sweep_module, "run_setting", flaky)
    with pytest.raises(KeyboardInterrupt):
        run_sweep(cfg, plots=False)
    text = (Path(cfg.output_dir) / "results.csv").read_text()
    rows = list(csv.reader(text.splitlines()))
    assert text.endswith("\n") and len(rows) == 3
    assert all(len(r) == len(SWEEP_COLUMNS) for r in rows)

    monkeypatch.setattr(sweep_module, "run_setting", real)
    full = tmp_path / "full"
    run_sweep(dataclasses.replace(cfg, output_dir=str(full)), plots=False)
    assert (full / "results.csv").read_text().startswith(text)


@pytest.mark.slow
def test_killed_process_leaves_valid_prefix(tmp_path):
    cfg = {
        "output_dir": "out",
        "prior": {"type": "gaussian", "cov": {"kernel": "squared_exponential", "length_scale": 2.0}},
        "operator": {"kind": "downsample_avg", "factor": 2, "noise_sigma": 0.05},
        "data": {"shape": [2, 4, 1], "count": 200},
        "sweep": {"variants": ["dps"], "zeta": [0.1 * k for k in range(1, 41)], "steps": [300]},
    }
    p = write_yaml(tmp_path / "c.yaml", cfg)
    results = tmp_path / "out" / "results.csv"
    proc = subprocess.Popen([sys.executable, "-m", "dpsweep", "sweep", "--config", str(p), "--no-plots"],
                            stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
    try:
        deadline = time.time() + 60
        while time.time() < deadline:
            if results.exists() and results.read_text().count("\n") >= 3:
                break
            time.sleep(0.02)
        os.kill(proc.pid, signal.SIGKILL)
    finally:
        proc.wait()
    assert proc.returncode == -signal.SIGKILL
    text = results.read_text()
    rows = list(csv.reader(text.splitlines()))
    assert 3 <= len(rows) < 41
    assert text.endswith("\n")
    assert all(len(r) == len(SWEEP_COLUMNS) for r in rows)


# --- plots ---------------------------------------------------------------

@pytest.fixture(scope="module")
def image_rows(tmp_path_factory):
    out = tmp_path_factory.mktemp("plots")
    cfg = gaussian_benchmark(
        count=3, output_dir=str(out), sweep=SweepConfig(variants=["dps"], zeta=ABLATION_ZETAS, steps=[10]),
        data=dataclasses.replace(gaussian_benchmark().data, shape=[12, 12, 1], count=3),
    )
    return run_sweep(cfg, plots=False)


def capture_charts(monkeypatch):
    seen = {}
    monkeypatch.setattr(plots_module, "_chart",
                        lambda path, title, xl, yl, series: seen.__setitem__(path.name, (xl, yl, series)))
    return seen


def test_nine_zetas_give_five_charts(image_rows, tmp_path, monkeypatch):
    seen = capture_charts(monkeypatch)
    render_plots(image_rows, tmp_path)
    assert sorted(seen) == sorted(f"{m}_vs_zeta.svg" for m in ("psnr", "ssim", "k", "rmse", "fid"))
    for xlabel, ylabel, series in seen.values():
        assert "ζ" in xlabel
        assert sum(len(v) for v in series.values()) == 9
    assert "dB" in seen["psnr_vs_zeta.svg"][1]


def test_single_row_still_plots(image_rows, tmp_path, monkeypatch):
    seen = capture_charts(monkeypatch)
    render_plots(image_rows[:1], tmp_path)
    assert len(seen) >= 4
    assert all(sum(len(v) for v in s.values()) == 1 for _, _, s in seen.values())


def test_svg_files_are_written_deterministically(image_rows, tmp_path):
    a = render_plots(image_rows, tmp_path / "a")
    b = render_plots(image_rows, tmp_path / "b")
    assert len(a) == 5
    assert "PSNR (dB)" in a[0].read_text()
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]


def test_empty_rows_is_a_noop(tmp_path, caplog):
    assert render_plots([], tmp_path / "none") == []
    assert not (tmp_path / "none").exists()
    assert "no sweep rows" in caplog.text


# --- posterior verification ----------------------------------------------

def test_vanilla_fails_verification():
    report = verify_posterior(conjugate_1d(chains=500, verify=VerifyConfig("vanilla", 0.0, 200, 500, [2.0])))
    assert not report.passed
    assert "RESULT: FAIL" in report.to_text()


def test_uninformative_operator_vanilla_passes():
    cfg = conjugate_1d(operator=OperatorConfig(kind="scale", value=0.0, noise_sigma=1.0),
                       verify=VerifyConfig("vanilla", 0.0, 1000, 2000, [2.0]))
    report = verify_posterior(cfg)
    assert report.passed, report.to_text()
    assert report.checks[0].expected == 0.0 and report.checks[1].expected == 1.0


def test_verify_rejects_non_gaussian_prior():
    cfg = conjugate_1d(prior=PriorConfig(type="mixture", components=[MixtureComponent(1.0, 0.0, 1.0)]))
    with pytest.raises(UnsupportedPriorError):
        verify_posterior(cfg)


def test_verify_needs_measurement_noise():
    with pytest.raises(ConfigurationError):
        verify_posterior(conjugate_1d(operator=OperatorConfig(kind="scale", value=1.0, noise_sigma=0.0)))


@pytest.mark.xfail(strict=True, reason="residual-normalized DPS does not sample the posterior")
def test_dps_passes_conjugate_verification():
    assert verify_posterior(conjugate_1d()).passed


@pytest.mark.xfail(strict=True, reason="the normalized step overshoots by about zeta, so error grows past zeta ~ 0.3")
def test_larger_step_size_does_not_hurt(tmp_path):
    cfg = gaussian_benchmark(count=500, output_dir=str(tmp_path),
                             sweep=SweepConfig(variants=["dps"], zeta=[1.0, 2.0], steps=[1000]))
    at_1, at_2 = run_sweep(cfg, plots=False)
    assert at_2.recon_error[0] <= at_1.recon_error[0]
