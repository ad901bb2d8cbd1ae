"""Linear DDPM noise schedules and the per-timestep reverse-step coefficients.

Timesteps are 1-based everywhere in the public API (``t = 1..T``). The arrays
stored on :class:`NoiseSchedule` are plain numpy arrays, so ``beta[t - 1]`` is
the value at timestep ``t``; prefer the ``*_at`` accessors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, TimestepError

DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02
DEFAULT_STEP_COUNT = 1000


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ScheduleSpec:
    """Endpoints and length of a linear beta schedule."""

    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    step_count: int = DEFAULT_STEP_COUNT

    def build(self) -> "NoiseSchedule":
        return build_linear_schedule(self.step_count, self.beta_start, self.beta_end)


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    beta_start: float
    beta_end: float
    beta: np.ndarray
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)
    posterior_sigma: np.ndarray = field(repr=False)

    @property
    def step_count(self) -> int:
        return int(self.beta.shape[0])

    @property
    def spec(self) -> ScheduleSpec:
        return ScheduleSpec(self.beta_start, self.beta_end, self.step_count)

    def check_timestep(self, t: int) -> int:
        if isinstance(t, (bool, np.bool_)) or int(t) != t:
            raise TimestepError(f"timestep must be an integer, got {t!r}")
        t = int(t)
        if not 1 <= t <= self.step_count:
            raise TimestepError(f"timestep {t} outside 1..{self.step_count}")
        return t

    def beta_at(self, t: int) -> float:
        return float(self.beta[self.check_timestep(t) - 1])

    def alpha_at(self, t: int) -> float:
        return float(self.alpha[self.check_timestep(t) - 1])

    def alpha_bar_at(self, t: int) -> float:
        return float(self.alpha_bar[self.check_timestep(t) - 1])

    def alpha_bar_prev(self, t: int) -> float:
        """Cumulative product at ``t - 1``; equals 1 at ``t = 1``."""
        t = self.check_timestep(t)
        return 1.0 if t == 1 else float(self.alpha_bar[t - 2])

    def posterior_sigma_at(self, t: int) -> float:
        return float(self.posterior_sigma[self.check_timestep(t) - 1])

    def reverse_coefficients(self, t: int) -> tuple[float, float, float]:
        """Return ``(c_xt, c_x0, sigma)`` of the ancestral update at ``t``.

        ``x_{t-1} = c_xt * x_t + c_x0 * x0_hat + sigma * z``.
        """
        t = self.check_timestep(t)
        a = float(self.alpha[t - 1])
        ab = float(self.alpha_bar[t - 1])
        ab_prev = self.alpha_bar_prev(t)
        b = float(self.beta[t - 1])
        c_xt = np.sqrt(a) * (1.0 - ab_prev) / (1.0 - ab)
        # beta sits outside the square root (standard DDPM posterior mean)
        c_x0 = np.sqrt(ab_prev) * b / (1.0 - ab)
        return float(c_xt), float(c_x0), float(self.posterior_sigma[t - 1])


def build_linear_schedule(
    step_count: int,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    if isinstance(step_count, bool) or int(step_count) != step_count or step_count < 1:
        raise ConfigurationError(f"step_count must be a positive integer, got {step_count!r}")
    step_count = int(step_count)
    beta_start, beta_end = float(beta_start), float(beta_end)
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigurationError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )

    beta = np.linspace(beta_start, beta_end, step_count, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate(([1.0], alpha_bar[:-1]))
    variance = beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
    variance[0] = 0.0
    return NoiseSchedule(
        beta_start=beta_start,
        beta_end=beta_end,
        beta=_frozen(beta),
        alpha=_frozen(alpha),
        alpha_bar=_frozen(alpha_bar),
        posterior_sigma=_frozen(np.sqrt(variance)),
    )


def truncate_or_rebuild(schedule_spec: ScheduleSpec | NoiseSchedule, new_step_count: int) -> NoiseSchedule:
    """Rebuild a schedule of a new length over the same beta endpoints.

    Coefficients are re-derived from scratch; nothing is sliced or subsampled.
    """
    return build_linear_schedule(new_step_count, schedule_spec.beta_start, schedule_spec.beta_end)
