"""DDPM ancestral sampling with Vanilla, DPS and MCG measurement conditioning.

State is kept as flat vectors of shape ``(n_chains, d)``; the operator maps them
to measurement vectors of shape ``(n_chains, m)``. Each chain owns its noise
stream, so a chain's output does not depend on which other chains it is batched
with or on how many worker threads run.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, DivergenceError, UnsupportedProjectionError
from .operator import LinearOperator
from .prior import ScoreModel
from .schedule import NoiseSchedule

VARIANTS = ("vanilla", "dps", "mcg")
STEP_SIZE_MODES = ("residual_normalized", "constant")


@dataclass(frozen=True)
class ConditioningMethod:
    variant: str = "vanilla"
    zeta: float = 0.0
    step_size_mode: str = "residual_normalized"
    projection: bool = True  # MCG only

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown conditioning variant {self.variant!r}")
        if self.step_size_mode not in STEP_SIZE_MODES:
            raise ConfigurationError(f"unknown step_size_mode {self.step_size_mode!r}")
        if not (self.zeta >= 0 and np.isfinite(self.zeta)):
            raise ConfigurationError(f"zeta must be finite and >= 0, got {self.zeta}")

    @property
    def uses_gradient(self) -> bool:
        return self.variant != "vanilla" and self.zeta > 0

    def step_size(self, residual_norm: np.ndarray) -> np.ndarray:
        """Per-chain ``zeta_t`` given ``||y - A x0_hat||`` of shape ``(n,)``."""
        rn = np.asarray(residual_norm, dtype=np.float64)
        if self.step_size_mode == "constant":
            return np.full_like(rn, self.zeta)
        safe = np.where(rn > 0, rn, 1.0)
        return np.where(rn > 0, self.zeta / safe, 0.0)


@dataclass(frozen=True)
class SamplerConfig:
    step_count: int
    conditioning: ConditioningMethod = ConditioningMethod()
    seed: int = 0
    deterministic_noise: bool = False
    record_trajectory: bool = False

    def __post_init__(self):
        if int(self.step_count) != self.step_count or self.step_count < 1:
            raise ConfigurationError(f"step_count must be >= 1, got {self.step_count}")


@dataclass
class ChainResult:
    reconstruction: np.ndarray
    residuals: np.ndarray  # residuals[k] is measured at t = T - k
    wall_time: float
    seed: int
    trajectory: np.ndarray | None = None


@dataclass
class BatchResult:
    reconstructions: np.ndarray  # (n, d); NaN rows for diverged chains
    residuals: np.ndarray  # (n, T)
    diverged_at: np.ndarray  # (n,) timestep of divergence, 0 if none
    wall_time: float
    trajectory: np.ndarray | None = None  # (n, T + 1, d)

    @property
    def divergence_count(self) -> int:
        return int(np.count_nonzero(self.diverged_at))


def residual(y, operator: LinearOperator, x0_hat) -> np.ndarray:
    """``||y - A x0_hat||_2`` over the last axis (the norm, not its square)."""
    r = np.asarray(y, dtype=np.float64) - operator.matvec(x0_hat)
    return np.linalg.norm(r, axis=-1)


def ddpm_step(x_t, t: int, schedule: NoiseSchedule, model: ScoreModel, z=None):
    """One ancestral update; returns ``(x_prev, x0_hat)``. ``z=None`` means no noise."""
    c_xt, c_x0, sigma = schedule.reverse_coefficients(t)
    x0_hat = model.tweedie_denoise(x_t, t, schedule)
    x_prev = c_xt * np.asarray(x_t, dtype=np.float64) + c_x0 * x0_hat
    if z is not None and sigma > 0:
        x_prev = x_prev + sigma * np.asarray(z, dtype=np.float64)
    return x_prev, x0_hat


def measurement_gradient(x_t, x0_hat, t, y, operator, model, schedule) -> np.ndarray:
    """Gradient of ``||y - A x0_hat(x_t)||^2`` with respect to ``x_t``."""
    r = np.asarray(y, dtype=np.float64) - operator.matvec(x0_hat)
    return -2.0 * model.vjp_through_denoiser(x_t, t, schedule, operator.rmatvec(r))


def _per_row(zeta_t, x):
    zeta_t = np.asarray(zeta_t, dtype=np.float64)
    return zeta_t[..., None] if zeta_t.ndim == x.ndim - 1 and zeta_t.ndim > 0 else zeta_t


def dps_correct(x_prev, x_t, x0_hat, t, y, operator, model, schedule, zeta_t) -> np.ndarray:
    """``x_prev - zeta_t * grad_{x_t} ||y - A x0_hat||^2``.

    ``zeta_t`` is a scalar or one value per chain. A zero step returns ``x_prev``
    untouched, so the gradient is never evaluated.
    """
    zeta_t = np.asarray(zeta_t, dtype=np.float64)
    if np.any(zeta_t < 0):
        raise ConfigurationError("step size must be >= 0")
    if not np.any(zeta_t):
        return x_prev
    grad = measurement_gradient(x_t, x0_hat, t, y, operator, model, schedule)
    return x_prev - _per_row(zeta_t, grad) * grad


def mcg_correct(
    x_prev, x_t, x0_hat, t, y, operator, model, schedule, zeta_t, projection: bool = True
) -> np.ndarray:
    """DPS gradient step followed by an optional projection onto ``A x = sqrt(ab_{t-1}) y``.

    The projection target is the minimum-norm preimage ``A^T (A A^T)^{-1} y``
    scaled to the signal level of ``x_{t-1}``; its image under ``A`` is
    ``sqrt(ab_{t-1}) y``, so projecting onto that affine set is equivalent. At
    ``t = 1`` the scale is 1 and the output is exactly measurement-consistent.
    """
    x = dps_correct(x_prev, x_t, x0_hat, t, y, operator, model, schedule, zeta_t)
    if not projection:
        return x
    if not operator.supports_projection:
        raise UnsupportedProjectionError(f"MCG projection unsupported for {operator.kind}")
    target = np.sqrt(schedule.alpha_bar_prev(t)) * np.asarray(y, dtype=np.float64)
    return operator.project_flat(x, np.broadcast_to(target, x.shape[:-1] + target.shape[-1:]))


def chain_seed(global_seed: int, *key: int) -> np.random.SeedSequence:
    """Independent per-chain seed derived from ``(global_seed, key...)``."""
    return np.random.SeedSequence(int(global_seed), spawn_key=tuple(int(k) for k in key))


def _check_shapes(model, operator, y, n):
    if operator.input_dim != model.dim:
        raise DimensionError(f"operator input dim {operator.input_dim} != model dim {model.dim}")
    if y is None:
        return None
    y = np.asarray(y, dtype=np.float64).reshape(-1, operator.output_dim) if np.ndim(y) <= 1 else np.asarray(y, dtype=np.float64)
    if y.shape[-1] != operator.output_dim:
        raise DimensionError(f"measurement dim {y.shape[-1]} != operator output dim {operator.output_dim}")
    if y.shape[0] == 1 and n > 1:
        y = np.broadcast_to(y, (n, y.shape[-1]))
    if y.shape[0] != n:
        raise DimensionError(f"{y.shape[0]} measurements for {n} chains")
    return y


def _run_block(config, schedule, model, operator, y, seeds):
    n, d, T = len(seeds), model.dim, schedule.step_count
    cond = config.conditioning
    gens = [np.random.default_rng(s) for s in seeds]
    x = np.stack([g.standard_normal(d) for g in gens]) if n else np.zeros((0, d))
    residuals = np.full((n, T), np.nan)
    diverged_at = np.zeros(n, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    trajectory = np.empty((n, T + 1, d)) if config.record_trajectory else None
    if trajectory is not None:
        trajectory[:, 0] = x

    # overflow is expected in diverging chains; it is detected and reported below
    with np.errstate(over="ignore", invalid="ignore"):
        for k, t in enumerate(range(T, 0, -1)):
            if config.deterministic_noise:
                z = None
            else:
                z = np.stack([g.standard_normal(d) for g in gens])
            x_prev, x0_hat = ddpm_step(x, t, schedule, model, z)
            if y is not None:
                rn = residual(y, operator, x0_hat)
                residuals[:, k] = rn
                if cond.uses_gradient:
                    zeta_t = cond.step_size(rn)
                    if cond.variant == "dps":
                        x_prev = dps_correct(x_prev, x, x0_hat, t, y, operator, model, schedule, zeta_t)
                    else:
                        x_prev = mcg_correct(
                            x_prev, x, x0_hat, t, y, operator, model, schedule, zeta_t, cond.projection
                        )
                elif cond.variant == "mcg" and cond.projection:
                    x_prev = mcg_correct(x_prev, x, x0_hat, t, y, operator, model, schedule, 0.0, True)
            bad = alive & ~np.all(np.isfinite(x_prev), axis=-1)
            if np.any(bad):
                diverged_at[bad] = t
                alive &= ~bad
            # dead chains are parked at zero so later steps stay finite
            x = np.where(alive[:, None], x_prev, 0.0)
            if trajectory is not None:
                trajectory[:, k + 1] = x

    x = np.where(alive[:, None], x, np.nan)
    return x, residuals, diverged_at, trajectory


def run_chains(
    config: SamplerConfig,
    schedule: NoiseSchedule,
    model: ScoreModel,
    operator: LinearOperator,
    y,
    seeds: Sequence,
    chunk_size: int = 256,
    workers: int = 1,
) -> BatchResult:
    """Run one chain per seed; ``y`` is ``(n, m)`` or a single measurement shared by all.

    Chains are partitioned into fixed ``chunk_size`` blocks regardless of
    ``workers``, so results are identical for every worker count.
    """
    if schedule.step_count != config.step_count:
        raise ConfigurationError(
            f"schedule has {schedule.step_count} steps but config asks for {config.step_count}"
        )
    cond = config.conditioning
    if cond.variant != "vanilla" and y is None:
        raise ConfigurationError(f"{cond.variant} conditioning needs a measurement")
    if cond.variant == "mcg" and cond.projection and not operator.supports_projection:
        raise UnsupportedProjectionError(f"MCG projection unsupported for {operator.kind}")
    seeds = list(seeds)
    n = len(seeds)
    y = _check_shapes(model, operator, y, n)
    chunk_size = max(1, int(chunk_size))
    blocks = [(i, min(i + chunk_size, n)) for i in range(0, n, chunk_size)]

    def work(block):
        lo, hi = block
        return _run_block(config, schedule, model, operator, None if y is None else y[lo:hi], seeds[lo:hi])

    start = time.perf_counter()
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            parts = list(pool.map(work, blocks))
    else:
        parts = [work(b) for b in blocks]
    elapsed = time.perf_counter() - start

    if not parts:
        d, T = model.dim, schedule.step_count
        return BatchResult(np.zeros((0, d)), np.zeros((0, T)), np.zeros(0, dtype=np.int64), elapsed)
    traj = np.concatenate([p[3] for p in parts]) if config.record_trajectory else None
    return BatchResult(
        reconstructions=np.concatenate([p[0] for p in parts]),
        residuals=np.concatenate([p[1] for p in parts]),
        diverged_at=np.concatenate([p[2] for p in parts]),
        wall_time=elapsed,
        trajectory=traj,
    )


def run_chain(
    config: SamplerConfig,
    schedule: NoiseSchedule,
    model: ScoreModel,
    operator: LinearOperator,
    y=None,
) -> ChainResult:
    """Single chain seeded from ``config.seed``; raises on divergence."""
    if y is not None:
        y = np.asarray(y, dtype=np.float64).reshape(1, -1)
    batch = run_chains(config, schedule, model, operator, y, [np.random.SeedSequence(int(config.seed))])
    if batch.diverged_at[0]:
        raise DivergenceError(int(batch.diverged_at[0]))
    return ChainResult(
        reconstruction=batch.reconstructions[0],
        residuals=batch.residuals[0],
        wall_time=batch.wall_time,
        seed=int(config.seed),
        trajectory=None if batch.trajectory is None else batch.trajectory[0],
    )
