"""Diffusion posterior sampling (Vanilla / DPS / MCG) for linear inverse problems.

Analytic Gaussian and Gaussian-mixture priors stand in for a trained score
network so every sampler claim can be checked against closed-form posteriors.
"""

from .errors import (
    ConfigurationError, DimensionError, DivergenceError, DpsweepError, InsufficientDataError,
    NumericError, TimestepError, UnsupportedPriorError, UnsupportedProjectionError,
)
from .metrics import MetricsReport, evaluate_batch, fit_feature_moments, frechet_distance, kaggle_score, psnr, rmse, ssim
from .operator import DownsampleAvg, GaussianBlur, IdentityOperator, LinearOperator, ScaleOperator, make_operator
from .prior import DenoiserAdapter, GaussianMixturePrior, GaussianPrior, ScoreModel, analytic_posterior
from .sampler import (
    BatchResult, ChainResult, ConditioningMethod, SamplerConfig, chain_seed, ddpm_step, dps_correct,
    mcg_correct, residual, run_chain, run_chains,
)
from .schedule import NoiseSchedule, ScheduleSpec, build_linear_schedule, truncate_or_rebuild

__version__ = "0.1.0"
