"""Configuration, data ingestion, sweeps, plots and posterior verification."""

from .config import ExperimentConfig, candidate_settings, dump_config, load_config, sweep_settings
from .data import Dataset, ingest_dataset
from .plots import render_plots
from .sweep import SweepRow, run_setting, run_sweep
from .verify import VerificationReport, verify_posterior

__all__ = [
    "Dataset", "ExperimentConfig", "SweepRow", "VerificationReport",
    "candidate_settings", "dump_config", "ingest_dataset", "load_config",
    "render_plots", "run_setting", "run_sweep", "sweep_settings", "verify_posterior",
]
