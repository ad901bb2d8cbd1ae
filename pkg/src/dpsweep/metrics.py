"""Image quality metrics: PSNR, SSIM, RMSE, Frechet distance and the composite K score.

Images are ``(H, W, C)`` (or ``(H, W)``) float arrays, nominally in ``[0, 1]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ConfigurationError, DimensionError, InsufficientDataError, NumericError
from .operator import as_image

PSNR_CLAMP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03

CSV_COLUMNS = (
    "variant", "step_count", "zeta",
    "psnr_mean", "psnr_std", "ssim_mean", "ssim_std", "rmse_mean", "rmse_std",
    "fid", "k_mean_per_image", "k_of_means",
)


def _pair(x, ref) -> tuple[np.ndarray, np.ndarray]:
    x, ref = as_image(x), as_image(ref)
    if x.shape != ref.shape:
        raise DimensionError(f"shape mismatch: {x.shape} vs {ref.shape}")
    return x, ref


def rmse(x, ref) -> float:
    x, ref = _pair(x, ref)
    return float(np.sqrt(np.mean((x - ref) ** 2)))


def psnr(x, ref, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the images are identical."""
    if not max_value > 0:
        raise ConfigurationError(f"max_value must be > 0, got {max_value}")
    x, ref = _pair(x, ref)
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value**2 / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    offsets = np.arange(size) - (size - 1) / 2
    w = np.exp(-0.5 * (offsets / sigma) ** 2)
    return w / w.sum()


def _local_mean(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    out = correlate1d(img, w, axis=0, mode="reflect")
    return correlate1d(out, w, axis=1, mode="reflect")


def ssim(x, ref, data_range: float = 1.0) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels."""
    x, ref = _pair(x, ref)
    h, w, _ = x.shape
    if min(h, w) < SSIM_WINDOW:
        raise ConfigurationError(f"image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    values = []
    for ch in range(x.shape[2]):
        a, b = x[..., ch], ref[..., ch]
        mu_a, mu_b = _local_mean(a, win), _local_mean(b, win)
        var_a = _local_mean(a * a, win) - mu_a * mu_a
        var_b = _local_mean(b * b, win) - mu_b * mu_b
        cov = _local_mean(a * b, win) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
        values.append(float(np.mean(num / den)))
    return float(np.mean(values))


def kaggle_score(psnr_db: float, ssim_value: float) -> float:
    """``PSNR / 40 + SSIM``; an infinite PSNR is clamped to 100 dB first."""
    if psnr_db == math.inf:
        psnr_db = PSNR_CLAMP_DB
    if not (math.isfinite(psnr_db) and math.isfinite(ssim_value)):
        raise NumericError(f"non-finite inputs to K: ({psnr_db}, {ssim_value})")
    return psnr_db / 40.0 + ssim_value


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    lam, vecs = np.linalg.eigh(0.5 * (m + m.T))
    return (vecs * np.sqrt(np.clip(lam, 0.0, None))) @ vecs.T


def frechet_distance(moments_a, moments_b) -> float:
    """Squared 2-Wasserstein distance between two Gaussians given as ``(mean, cov)``."""
    mu_a, cov_a = (np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in moments_a)
    mu_b, cov_b = (np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in moments_b)
    cov_a, cov_b = np.atleast_2d(cov_a), np.atleast_2d(cov_b)
    d = mu_a.shape[0]
    if mu_b.shape != (d,) or cov_a.shape != (d, d) or cov_b.shape != (d, d):
        raise DimensionError("moment dimensions disagree")
    if np.array_equal(mu_a, mu_b) and np.array_equal(cov_a, cov_b):
        return 0.0
    root_a = _psd_sqrt(cov_a)
    inner = root_a @ cov_b @ root_a
    lam = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    tr_cross = float(np.sum(np.sqrt(np.clip(lam, 0.0, None))))
    value = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_cross)
    return max(value, 0.0)


def pooled_pixel_features(image, grid: int = 8) -> np.ndarray:
    """Average-pool an image onto a ``grid x grid`` lattice and flatten."""
    img = as_image(image)
    rows = np.array_split(np.arange(img.shape[0]), min(grid, img.shape[0]))
    cols = np.array_split(np.arange(img.shape[1]), min(grid, img.shape[1]))
    pooled = np.array([[img[np.ix_(r, c)].mean(axis=(0, 1)) for c in cols] for r in rows])
    return pooled.ravel()


def fit_feature_moments(images: Sequence, extractor: Callable | None = None):
    """Sample mean and unbiased covariance of per-image features."""
    if len(images) < 2:
        raise InsufficientDataError(f"need at least 2 images for feature moments, got {len(images)}")
    extractor = extractor or pooled_pixel_features
    feats = np.stack([np.atleast_1d(np.asarray(extractor(im), dtype=np.float64)) for im in images])
    mean = feats.mean(axis=0)
    cov = np.atleast_2d(np.cov(feats, rowvar=False, ddof=1))
    return mean, cov


@dataclass
class ImageMetrics:
    psnr: float  # dB, inf when exact
    ssim: float
    rmse: float
    k: float


@dataclass
class MetricsReport:
    per_image: list[ImageMetrics]
    aggregate: dict[str, tuple[float, float]] = field(default_factory=dict)
    frechet: float = math.nan
    lpips: float | None = None  # reserved for externally computed values

    @property
    def k_of_means(self) -> float:
        p, s = self.aggregate["psnr"][0], self.aggregate["ssim"][0]
        if not (math.isfinite(p) and math.isfinite(s)):
            return math.nan
        return kaggle_score(p, s)

    def csv_row(self, variant: str, step_count: int | None, zeta: float | None) -> dict:
        agg = self.aggregate
        return {
            "variant": variant,
            "step_count": step_count,
            "zeta": zeta,
            "psnr_mean": agg["psnr"][0], "psnr_std": agg["psnr"][1],
            "ssim_mean": agg["ssim"][0], "ssim_std": agg["ssim"][1],
            "rmse_mean": agg["rmse"][0], "rmse_std": agg["rmse"][1],
            "fid": self.frechet,
            "k_mean_per_image": agg["k"][0],
            "k_of_means": self.k_of_means,
        }


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    a = np.asarray(values, dtype=np.float64)
    if a.size == 0:
        return math.nan, math.nan
    # population std; a single value has std 0
    return float(a.mean()), float(a.std())


def evaluate_batch(
    recons: Sequence, refs: Sequence, max_value: float = 1.0, extractor: Callable | None = None
) -> MetricsReport:
    """Per-image PSNR/SSIM/RMSE/K, their mean and std, and the set-level Frechet distance.

    Infinite PSNR is clamped to 100 dB before aggregation and before K. SSIM is
    NaN for images smaller than the SSIM window. K is computed per image then
    averaged; ``MetricsReport.k_of_means`` gives the other order.
    """
    if len(recons) != len(refs):
        raise DimensionError(f"{len(recons)} reconstructions vs {len(refs)} references")
    per_image = []
    for x, ref in zip(recons, refs):
        p = psnr(x, ref, max_value)
        if p == math.inf:
            p = PSNR_CLAMP_DB
        x_img = as_image(x)
        if min(x_img.shape[:2]) >= SSIM_WINDOW:
            s = ssim(x, ref, data_range=max_value)
            k = kaggle_score(p, s)
        else:
            s = k = math.nan
        per_image.append(ImageMetrics(psnr=p, ssim=s, rmse=rmse(x, ref), k=k))
    aggregate = {
        name: _mean_std([getattr(m, name) for m in per_image]) for name in ("psnr", "ssim", "rmse", "k")
    }
    frechet = math.nan
    if len(recons) >= 2:
        frechet = frechet_distance(fit_feature_moments(recons, extractor), fit_feature_moments(refs, extractor))
    return MetricsReport(per_image=per_image, aggregate=aggregate, frechet=frechet)
