"""Score models: analytic Gaussian / Gaussian-mixture priors and a black-box adapter.

All methods accept batched inputs of shape ``(..., d)``. For a prior ``p(x0)``
diffused by ``x_t = sqrt(ab) x0 + sqrt(1 - ab) eps`` the Gaussian components stay
Gaussian, so score, Tweedie denoiser and its Jacobian are all closed form.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigurationError, DimensionError, NumericError, UnsupportedPriorError
from .operator import LinearOperator
from .schedule import NoiseSchedule

_LOG_2PI = float(np.log(2.0 * np.pi))


class _Spectral:
    """Eigendecomposition of an SPD covariance; diagonal storage skips the basis."""

    def __init__(self, cov, dim: int | None = None):
        cov = np.asarray(cov, dtype=np.float64)
        if cov.ndim == 0:
            if dim is None:
                raise ConfigurationError("scalar covariance needs an explicit dimension")
            self.lam, self.vecs = np.full(dim, float(cov)), None
        elif cov.ndim == 1:
            self.lam, self.vecs = cov.copy(), None
        elif cov.ndim == 2 and cov.shape[0] == cov.shape[1]:
            scale = max(1.0, float(np.abs(cov).max()))
            if not np.allclose(cov, cov.T, rtol=0, atol=1e-10 * scale):
                raise NumericError("covariance is not symmetric")
            lam, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
            self.lam, self.vecs = lam, vecs
        else:
            raise DimensionError(f"covariance must be scalar, vector or square matrix, got {cov.shape}")
        if not np.all(np.isfinite(self.lam)) or self.lam.min() <= 0:
            raise NumericError(f"covariance is not positive definite (min eigenvalue {self.lam.min():.3g})")
        self.lam.setflags(write=False)

    @property
    def dim(self) -> int:
        return int(self.lam.shape[0])

    def apply(self, f: np.ndarray, v: np.ndarray) -> np.ndarray:
        """``U diag(f) U^T v`` for ``v`` of shape ``(..., d)``."""
        if self.vecs is None:
            return v * f
        return ((v @ self.vecs) * f) @ self.vecs.T

    def dense(self) -> np.ndarray:
        if self.vecs is None:
            return np.diag(self.lam)
        return (self.vecs * self.lam) @ self.vecs.T


class _DiffusedGaussian:
    """One Gaussian component N(mu, Sigma) pushed through the forward process."""

    def __init__(self, mean: np.ndarray, spectral: _Spectral):
        self.mean = mean
        self.spectral = spectral

    def terms(self, x: np.ndarray, ab: float):
        c = ab * self.spectral.lam + (1.0 - ab)
        prec = 1.0 / c
        diff = x - np.sqrt(ab) * self.mean
        grad = -self.spectral.apply(prec, diff)
        return grad, diff, prec, c

    def log_density(self, diff, grad, c) -> np.ndarray:
        quad = -np.sum(diff * grad, axis=-1)
        return -0.5 * (quad + np.sum(np.log(c)) + c.shape[0] * _LOG_2PI)


class ScoreModel:
    """Interface: score, Tweedie denoiser and VJP through the denoiser.

    ``vjp_mode`` is ``"exact"`` for closed-form Jacobians and
    ``"finite-difference"`` for black boxes.
    """

    dim: int
    vjp_mode = "exact"

    def _validate(self, x, t: int, schedule: NoiseSchedule) -> tuple[np.ndarray, int, float]:
        t = schedule.check_timestep(t)
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1:] != (self.dim,):
            raise DimensionError(f"expected trailing dimension {self.dim}, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite input at t={t}")
        return x, t, schedule.alpha_bar_at(t)

    def score(self, x_t, t: int, schedule: NoiseSchedule) -> np.ndarray:
        raise NotImplementedError

    def tweedie_denoise(self, x_t, t: int, schedule: NoiseSchedule) -> np.ndarray:
        x, t, ab = self._validate(x_t, t, schedule)
        s = self.score(x, t, schedule)
        return (x + (1.0 - ab) * s) / np.sqrt(ab)

    def vjp_through_denoiser(self, x_t, t: int, schedule: NoiseSchedule, cotangent) -> np.ndarray:
        """``(d x0_hat / d x_t)^T @ cotangent``."""
        return self.vjp_finite_difference(x_t, t, schedule, cotangent)

    def vjp_finite_difference(
        self, x_t, t: int, schedule: NoiseSchedule, cotangent, mode: str = "directional"
    ) -> np.ndarray:
        """Central-difference VJP with step ``h = 1e-4 * (1 + max|x_t|)``.

        ``"directional"`` perturbs along the cotangent and needs two denoiser
        calls; it assumes a symmetric Jacobian, which holds for any exact Tweedie
        denoiser (the Jacobian is a scaled identity plus a Hessian).
        ``"coordinate"`` builds the full Jacobian column by column (2d calls) and
        makes no symmetry assumption.
        """
        x, t, _ = self._validate(x_t, t, schedule)
        c = np.broadcast_to(np.asarray(cotangent, dtype=np.float64), x.shape)
        h = 1e-4 * (1.0 + np.max(np.abs(x), axis=-1, keepdims=True))
        if mode == "directional":
            norm = np.linalg.norm(c, axis=-1, keepdims=True)
            safe = np.where(norm > 0, norm, 1.0)
            u = c / safe
            plus = self.tweedie_denoise(x + h * u, t, schedule)
            minus = self.tweedie_denoise(x - h * u, t, schedule)
            return (plus - minus) / (2.0 * h) * norm
        if mode == "coordinate":
            eye = np.eye(self.dim)
            hh = h[..., None]
            xs = x[..., None, :]
            plus = self.tweedie_denoise(xs + hh * eye, t, schedule)
            minus = self.tweedie_denoise(xs - hh * eye, t, schedule)
            cols = (plus - minus) / (2.0 * hh)  # cols[..., i, :] = d x0_hat / d x_i
            return np.einsum("...ij,...j->...i", cols, c)
        raise ConfigurationError(f"unknown finite-difference mode {mode!r}")


def _vector(v, dim: int | None, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 0:
        if dim is None:
            raise ConfigurationError(f"scalar {what} needs an explicit dimension")
        v = np.full(dim, float(v))
    if v.ndim != 1:
        raise DimensionError(f"{what} must be a vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NumericError(f"{what} has non-finite entries")
    v.setflags(write=False)
    return v


def _infer_dim(mean, cov, dim):
    if dim is not None:
        return int(dim)
    for a in (np.asarray(mean), np.asarray(cov)):
        if a.ndim >= 1:
            return int(a.shape[0])
    return None


class GaussianPrior(ScoreModel):
    """``N(mean, cov)``; ``cov`` may be a scalar, a diagonal vector or a full matrix."""

    def __init__(self, mean, cov, dim: int | None = None):
        dim = _infer_dim(mean, cov, dim)
        self.mean = _vector(mean, dim, "mean")
        self._spectral = _Spectral(cov, self.mean.shape[0])
        if self._spectral.dim != self.mean.shape[0]:
            raise DimensionError(
                f"mean has dimension {self.mean.shape[0]} but covariance {self._spectral.dim}"
            )
        self.dim = int(self.mean.shape[0])
        self._component = _DiffusedGaussian(self.mean, self._spectral)

    def __repr__(self) -> str:
        return f"GaussianPrior(dim={self.dim})"

    @property
    def covariance(self) -> np.ndarray:
        return self._spectral.dense()

    def score(self, x_t, t, schedule):
        x, t, ab = self._validate(x_t, t, schedule)
        grad, _, _, _ = self._component.terms(x, ab)
        return grad

    def vjp_through_denoiser(self, x_t, t, schedule, cotangent):
        x, t, ab = self._validate(x_t, t, schedule)
        c = np.asarray(cotangent, dtype=np.float64)
        prec = 1.0 / (ab * self._spectral.lam + (1.0 - ab))
        hc = -self._spectral.apply(prec, c)
        return (c + (1.0 - ab) * hc) / np.sqrt(ab)

    def sample(self, rng: np.random.Generator, size: int | tuple = ()) -> np.ndarray:
        size = (size,) if isinstance(size, int) else tuple(size)
        z = rng.standard_normal(size + (self.dim,))
        return self.mean + self._spectral.apply(np.sqrt(self._spectral.lam), z)


class GaussianMixturePrior(ScoreModel):
    """Weighted sum of Gaussians; responsibilities use log-sum-exp."""

    def __init__(self, weights: Sequence[float], means: Sequence, covs: Sequence, dim: int | None = None):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 1 or weights.size == 0 or np.any(weights <= 0):
            raise ConfigurationError("mixture weights must be a non-empty vector of positive numbers")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ConfigurationError(f"mixture weights sum to {weights.sum()!r}, not 1")
        if not (len(means) == len(covs) == weights.size):
            raise ConfigurationError("weights, means and covs must have equal length")
        if dim is None:
            dim = _infer_dim(means[0], covs[0], None)
        self.weights = weights
        self._log_weights = np.log(weights)
        self.components = [GaussianPrior(m, c, dim) for m, c in zip(means, covs)]
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise DimensionError(f"mixture components disagree on dimension: {sorted(dims)}")
        self.dim = dims.pop()

    def __repr__(self) -> str:
        return f"GaussianMixturePrior(dim={self.dim}, k={len(self.components)})"

    def _responsibilities(self, x, ab):
        terms = [c._component.terms(x, ab) for c in self.components]
        logp = np.stack(
            [lw + c._component.log_density(diff, g, cc)
             for lw, c, (g, diff, _, cc) in zip(self._log_weights, self.components, terms)],
            axis=-1,
        )
        log_r = logp - logsumexp(logp, axis=-1, keepdims=True)
        return np.exp(log_r), terms

    def score(self, x_t, t, schedule):
        x, t, ab = self._validate(x_t, t, schedule)
        r, terms = self._responsibilities(x, ab)
        grads = np.stack([g for g, *_ in terms], axis=-2)
        return np.sum(r[..., None] * grads, axis=-2)

    def vjp_through_denoiser(self, x_t, t, schedule, cotangent):
        x, t, ab = self._validate(x_t, t, schedule)
        c = np.broadcast_to(np.asarray(cotangent, dtype=np.float64), x.shape)
        r, terms = self._responsibilities(x, ab)
        grads = np.stack([g for g, *_ in terms], axis=-2)
        s = np.sum(r[..., None] * grads, axis=-2)
        # Hessian of log p_t: sum_k r_k (-P_k + g_k g_k^T) - s s^T  (symmetric)
        pc = np.stack(
            [-comp._spectral.apply(prec, c) for comp, (_, _, prec, _) in zip(self.components, terms)],
            axis=-2,
        )
        gc = np.sum(grads * c[..., None, :], axis=-1, keepdims=True)
        outer = np.sum(r[..., None] * grads * gc, axis=-2) - s * np.sum(s * c, axis=-1, keepdims=True)
        hc = np.sum(r[..., None] * pc, axis=-2) + outer
        return (c + (1.0 - ab) * hc) / np.sqrt(ab)

    def sample(self, rng: np.random.Generator, size: int | tuple = ()) -> np.ndarray:
        size = (size,) if isinstance(size, int) else tuple(size)
        which = rng.choice(len(self.components), size=size, p=self.weights)
        draws = np.stack([c.sample(rng, size) for c in self.components], axis=-2)
        return np.take_along_axis(draws, np.asarray(which)[..., None, None], axis=-2)[..., 0, :]


class DenoiserAdapter(ScoreModel):
    """Wrap an external ``x0_hat = fn(x_t, t, schedule)`` predictor.

    The score is recovered by inverting Tweedie's formula; gradients through the
    denoiser fall back to finite differences.
    """

    vjp_mode = "finite-difference"

    def __init__(self, denoise_fn: Callable[[np.ndarray, int, NoiseSchedule], np.ndarray], dim: int):
        self.denoise_fn = denoise_fn
        self.dim = int(dim)

    def tweedie_denoise(self, x_t, t, schedule):
        x, t, _ = self._validate(x_t, t, schedule)
        out = np.asarray(self.denoise_fn(x, t, schedule), dtype=np.float64)
        if out.shape != x.shape:
            raise DimensionError(f"denoiser returned shape {out.shape}, expected {x.shape}")
        return out

    def score(self, x_t, t, schedule):
        x, t, ab = self._validate(x_t, t, schedule)
        return (np.sqrt(ab) * self.tweedie_denoise(x, t, schedule) - x) / (1.0 - ab)


def squared_exponential_covariance(
    shape: tuple[int, ...], length_scale: float, variance: float = 1.0, jitter: float = 1e-6
) -> np.ndarray:
    """Stationary covariance over pixel positions of an ``(H, W, C)`` image.

    Channels are independent; pixels correlate by squared distance on the grid.
    """
    if len(shape) != 3:
        raise ConfigurationError(f"expected (H, W, C) shape, got {shape}")
    h, w, c = shape
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    pos = np.stack([rows.ravel(), cols.ravel()], axis=-1).astype(np.float64)
    d2 = np.sum((pos[:, None, :] - pos[None, :, :]) ** 2, axis=-1)
    spatial = variance * np.exp(-0.5 * d2 / length_scale**2)
    cov = np.kron(spatial, np.eye(c))  # row-major (h, w, c) flattening
    return cov + jitter * np.eye(h * w * c)


def analytic_posterior(
    prior: GaussianPrior, operator: LinearOperator, y, noise_sigma: float
) -> tuple[np.ndarray, np.ndarray]:
    """Conjugate posterior of ``x0`` given ``y = A x0 + N(0, noise_sigma^2 I)``."""
    if not isinstance(prior, GaussianPrior):
        raise UnsupportedPriorError("analytic posterior requires a GaussianPrior")
    if not noise_sigma > 0:
        raise ConfigurationError(f"noise_sigma must be > 0, got {noise_sigma}")
    if operator.input_dim != prior.dim:
        raise DimensionError(f"operator input dim {operator.input_dim} != prior dim {prior.dim}")
    a = operator.matrix()
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    lam = prior._spectral.lam
    prior_prec = prior._spectral.apply(1.0 / lam, np.eye(prior.dim))
    precision = prior_prec + a.T @ a / noise_sigma**2
    try:
        cov = np.linalg.inv(precision)
    except np.linalg.LinAlgError as exc:
        raise NumericError("posterior precision is singular") from exc
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (prior_prec @ prior.mean + a.T @ y / noise_sigma**2)
    return mean, cov
