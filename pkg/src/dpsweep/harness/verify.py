"""Compare sampler output moments with the conjugate-Gaussian posterior."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigurationError, DimensionError, UnsupportedPriorError
from ..prior import GaussianPrior, analytic_posterior
from ..sampler import SamplerConfig, chain_seed, run_chains
from ..schedule import truncate_or_rebuild
from .config import ExperimentConfig, build_operator, build_prior
from .data import ingest_dataset

MAX_VERIFY_DIM = 64


@dataclass
class MomentCheck:
    name: str
    expected: float
    observed: float
    std_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return abs(self.observed - self.expected) <= self.tolerance


@dataclass
class VerificationReport:
    variant: str
    zeta: float
    step_count: int
    chains: int
    divergences: int
    checks: list[MomentCheck] = field(default_factory=list)
    max_cov_error: float = float("nan")

    @property
    def passed(self) -> bool:
        return self.divergences == 0 and all(c.passed for c in self.checks)

    def to_text(self) -> str:
        lines = [
            f"verify-posterior: {self.variant} zeta={self.zeta:g} T={self.step_count} chains={self.chains}",
        ]
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            lines.append(
                f"  {status} {c.name}: observed {c.observed:.6g} expected {c.expected:.6g} "
                f"(|diff| {abs(c.observed - c.expected):.3g} vs tol {c.tolerance:.3g})"
            )
        if self.divergences:
            lines.append(f"  FAIL {self.divergences} chains diverged")
        lines.append(f"  max |sample cov - posterior cov| = {self.max_cov_error:.4g}")
        lines.append("RESULT: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)

    def to_json(self) -> str:
        d = asdict(self)
        d["passed"] = self.passed
        for c, raw in zip(self.checks, d["checks"]):
            raw["passed"] = c.passed
        return json.dumps(d, indent=2)


def verify_posterior(cfg: ExperimentConfig) -> VerificationReport:
    """Run ``verify.chains`` chains on one measurement and test mean and variance per coordinate.

    Tolerances are ``3 * sigma_slack`` standard errors: ``sqrt(var / N)`` for
    means and ``var * sqrt(2 / (N - 1))`` for variances, using posterior values.
    """
    shape = cfg.image_shape
    model = build_prior(cfg, shape)
    if not isinstance(model, GaussianPrior):
        raise UnsupportedPriorError("verify-posterior requires a Gaussian prior")
    if model.dim > MAX_VERIFY_DIM:
        raise ConfigurationError(f"verify-posterior supports d <= {MAX_VERIFY_DIM}, got {model.dim}")
    operator = build_operator(cfg, shape)
    sigma_y = cfg.operator.noise_sigma
    if not sigma_y > 0:
        raise ConfigurationError("verify-posterior needs operator.noise_sigma > 0")

    v = cfg.verify
    if v.y is not None:
        y = np.asarray(v.y, dtype=np.float64).reshape(-1)
        if y.shape[0] != operator.output_dim:
            raise DimensionError(f"verify.y has {y.shape[0]} entries, operator outputs {operator.output_dim}")
    else:
        y = ingest_dataset(cfg).y[0]

    mean, cov = analytic_posterior(model, operator, y, sigma_y)
    schedule = truncate_or_rebuild(cfg.schedule_spec, v.step_count)
    sampler_cfg = SamplerConfig(
        step_count=v.step_count,
        conditioning=cfg.conditioning_method(v.variant, v.zeta),
        seed=cfg.seed,
        deterministic_noise=cfg.conditioning.deterministic_noise,
    )
    seeds = [chain_seed(cfg.seed, 0, j) for j in range(v.chains)]
    batch = run_chains(sampler_cfg, schedule, model, operator, y[None, :], seeds,
                       chunk_size=cfg.chunk_size, workers=cfg.workers)
    samples = batch.reconstructions[batch.diverged_at == 0]
    n = samples.shape[0]

    report = VerificationReport(v.variant, float(v.zeta), v.step_count, v.chains, batch.divergence_count)
    if n < 2:
        return report
    s_mean = samples.mean(axis=0)
    s_cov = np.atleast_2d(np.cov(samples, rowvar=False, ddof=1))
    var = np.diag(cov)
    k = 3.0 * v.sigma_slack
    for i in range(model.dim):
        se_mean = float(np.sqrt(var[i] / n))
        se_var = float(var[i] * np.sqrt(2.0 / (n - 1)))
        report.checks.append(MomentCheck(f"mean[{i}]", float(mean[i]), float(s_mean[i]), se_mean, k * se_mean))
        report.checks.append(MomentCheck(f"var[{i}]", float(var[i]), float(s_cov[i, i]), se_var, k * se_var))
    report.max_cov_error = float(np.max(np.abs(s_cov - cov)))
    return report
