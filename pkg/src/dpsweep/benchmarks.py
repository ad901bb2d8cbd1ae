"""Reference problem definitions used by the acceptance suite and scripts/."""

from __future__ import annotations

from dataclasses import replace

from .harness.config import (
    ConditioningConfig, DataConfig, ExperimentConfig, MetricsConfig, OperatorConfig, PriorConfig,
    SweepConfig, VerifyConfig, validate,
)

# d = 8: a 2x4 single-channel "image" with a smooth prior, observed through
# 2x2 block averaging (two measurements) plus noise.
GAUSSIAN_BENCHMARK_SHAPE = [2, 4, 1]


def gaussian_benchmark(count: int = 500, seed: int = 0, **overrides) -> ExperimentConfig:
    cfg = ExperimentConfig(
        seed=seed,
        prior=PriorConfig(
            type="gaussian",
            mean=0.0,
            cov={"kernel": "squared_exponential", "length_scale": 2.0, "variance": 1.0, "jitter": 0.01},
        ),
        operator=OperatorConfig(kind="downsample_avg", factor=2, noise_sigma=0.05),
        data=DataConfig(source="synthetic", shape=list(GAUSSIAN_BENCHMARK_SHAPE), count=count, seed=seed + 1),
        conditioning=ConditioningConfig(step_size_mode="residual_normalized"),
        sweep=SweepConfig(variants=["vanilla", "dps"], zeta=[1.0], steps=[1000]),
        metrics=MetricsConfig(clamp_output=False),
    )
    return validate(replace(cfg, **overrides))


def conjugate_1d(y: float = 2.0, chains: int = 2000, **overrides) -> ExperimentConfig:
    """Prior N(0, 1), A = 1, sigma_y = 1: the posterior given y is N(y/2, 1/2)."""
    cfg = ExperimentConfig(
        prior=PriorConfig(type="gaussian", mean=0.0, cov=1.0),
        operator=OperatorConfig(kind="scale", value=1.0, noise_sigma=1.0),
        data=DataConfig(source="synthetic", shape=[1, 1, 1], count=1),
        conditioning=ConditioningConfig(step_size_mode="residual_normalized"),
        verify=VerifyConfig(variant="dps", zeta=1.0, step_count=1000, chains=chains, y=[float(y)]),
        metrics=MetricsConfig(clamp_output=False),
    )
    return validate(replace(cfg, **overrides))
