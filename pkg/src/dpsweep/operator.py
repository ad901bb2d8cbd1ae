"""Linear degradation operators ``A`` acting on channel-last images.

Every operator works on arrays whose trailing axes equal ``input_shape`` (for
``apply``) or ``output_shape`` (for ``adjoint``); leading axes are batch axes.
``matvec``/``rmatvec`` are the same maps on flattened row-major vectors, which
is the layout the score models and the sampler use.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigurationError, DimensionError, UnsupportedProjectionError

Shape = tuple[int, ...]


def as_image(x: np.ndarray) -> np.ndarray:
    """Promote a 2-D grayscale array to ``(H, W, 1)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[..., None]
    return x


class LinearOperator:
    kind = "abstract"

    def __init__(self, input_shape: Shape, output_shape: Shape):
        self.input_shape = tuple(int(s) for s in input_shape)
        self.output_shape = tuple(int(s) for s in output_shape)

    @property
    def input_dim(self) -> int:
        return math.prod(self.input_shape)

    @property
    def output_dim(self) -> int:
        return math.prod(self.output_shape)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.input_shape} -> {self.output_shape})"

    def _check(self, x: np.ndarray, shape: Shape, what: str) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[x.ndim - len(shape):] != shape or x.ndim < len(shape):
            raise DimensionError(f"{what} expects trailing shape {shape}, got {x.shape}")
        return x

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = self._check(x, self.input_shape, "apply")
        return self._apply(x)

    def adjoint(self, u: np.ndarray) -> np.ndarray:
        u = self._check(u, self.output_shape, "adjoint")
        return self._adjoint(u)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1:] != (self.input_dim,):
            raise DimensionError(f"matvec expects trailing dim {self.input_dim}, got {x.shape}")
        lead = x.shape[:-1]
        return self._apply(x.reshape(lead + self.input_shape)).reshape(lead + (self.output_dim,))

    def rmatvec(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if u.shape[-1:] != (self.output_dim,):
            raise DimensionError(f"rmatvec expects trailing dim {self.output_dim}, got {u.shape}")
        lead = u.shape[:-1]
        return self._adjoint(u.reshape(lead + self.output_shape)).reshape(lead + (self.input_dim,))

    def matrix(self) -> np.ndarray:
        """Dense ``(output_dim, input_dim)`` matrix; only sensible at small sizes."""
        return self.matvec(np.eye(self.input_dim)).T

    # (A A^T)^{-1} applied in measurement space; None when not invertible
    def _gram_inverse(self, r: np.ndarray) -> np.ndarray | None:
        return None

    @property
    def supports_projection(self) -> bool:
        return self._gram_inverse(np.zeros(self.output_shape)) is not None

    def project_onto_measurement(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Closest point to ``x`` (Euclidean) satisfying ``A x = y``.

        Computes ``x + A^T (A A^T)^{-1} (y - A x)``.
        """
        x = self._check(x, self.input_shape, "project_onto_measurement")
        y = self._check(y, self.output_shape, "project_onto_measurement")
        r = y - self._apply(x)
        w = self._gram_inverse(r)
        if w is None:
            raise UnsupportedProjectionError(f"{self.kind} operator has no invertible A A^T")
        return x + self._adjoint(w)

    def project_flat(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        lead = x.shape[:-1]
        out = self.project_onto_measurement(
            x.reshape(lead + self.input_shape), y.reshape(y.shape[:-1] + self.output_shape)
        )
        return out.reshape(lead + (self.input_dim,))

    def degrade(self, x0: np.ndarray, noise_sigma: float, rng: np.random.Generator) -> np.ndarray:
        """Simulate ``y = A x0 + n`` with i.i.d. Gaussian ``n`` of std ``noise_sigma``."""
        if not noise_sigma >= 0:
            raise ConfigurationError(f"noise_sigma must be >= 0, got {noise_sigma}")
        y = self.apply(x0)
        if noise_sigma == 0:
            return y
        return y + noise_sigma * rng.standard_normal(y.shape)

    def _apply(self, x):
        raise NotImplementedError

    def _adjoint(self, u):
        raise NotImplementedError


class IdentityOperator(LinearOperator):
    kind = "identity"

    def __init__(self, input_shape: Shape):
        super().__init__(input_shape, input_shape)

    def _apply(self, x):
        return x.copy()

    def _adjoint(self, u):
        return u.copy()

    def _gram_inverse(self, r):
        return r

    def project_onto_measurement(self, x, y):
        self._check(x, self.input_shape, "project_onto_measurement")
        y = self._check(y, self.output_shape, "project_onto_measurement")
        return np.broadcast_to(y, np.broadcast_shapes(np.shape(x), y.shape)).copy()


class ScaleOperator(LinearOperator):
    """``A = value * I``; ``value = 0`` gives the uninformative operator."""

    kind = "scale"

    def __init__(self, input_shape: Shape, value: float):
        super().__init__(input_shape, input_shape)
        self.value = float(value)

    def _apply(self, x):
        return self.value * x

    def _adjoint(self, u):
        return self.value * u

    def _gram_inverse(self, r):
        if self.value == 0.0:
            return None
        return r / self.value**2


class DownsampleAvg(LinearOperator):
    """Mean over non-overlapping ``factor x factor`` blocks, per channel."""

    kind = "downsample_avg"

    def __init__(self, input_shape: Shape, factor: int):
        if len(input_shape) != 3:
            raise ConfigurationError(f"downsample_avg needs an (H, W, C) shape, got {input_shape}")
        factor = int(factor)
        h, w, c = input_shape
        if factor < 1 or h % factor or w % factor:
            raise ConfigurationError(f"factor {factor} must divide image size {h}x{w}")
        super().__init__(input_shape, (h // factor, w // factor, c))
        self.factor = factor

    def _apply(self, x):
        p = self.factor
        h, w, c = self.input_shape
        blocks = x.reshape(x.shape[:-3] + (h // p, p, w // p, p, c))
        return blocks.mean(axis=(-4, -2))

    def _adjoint(self, u):
        p = self.factor
        up = np.repeat(np.repeat(u, p, axis=-3), p, axis=-2)
        return up / (p * p)

    def _gram_inverse(self, r):
        # A A^T = I / p^2
        return r * (self.factor * self.factor)


def _reflect_index(i: int, n: int) -> int:
    # half-sample symmetric: (d c b a | a b c d | d c b a)
    period = 2 * n
    i = i % period
    return i if i < n else period - 1 - i


def blur_matrix(n: int, radius: int, sigma: float) -> np.ndarray:
    """1-D normalized Gaussian correlation with reflect padding, as a dense matrix."""
    offsets = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel /= kernel.sum()
    m = np.zeros((n, n))
    for i in range(n):
        for k, off in zip(kernel, offsets):
            m[i, _reflect_index(i + off, n)] += k
    return m


class GaussianBlur(LinearOperator):
    """Separable Gaussian blur with reflect padding. No projection support."""

    kind = "gaussian_blur"

    def __init__(self, input_shape: Shape, radius: int, sigma: float):
        if len(input_shape) != 3:
            raise ConfigurationError(f"gaussian_blur needs an (H, W, C) shape, got {input_shape}")
        if int(radius) < 0 or not sigma > 0:
            raise ConfigurationError(f"need radius >= 0 and sigma > 0, got ({radius}, {sigma})")
        super().__init__(input_shape, input_shape)
        self.radius = int(radius)
        self.sigma = float(sigma)
        h, w, _ = input_shape
        self._bh = blur_matrix(h, self.radius, self.sigma)
        self._bw = blur_matrix(w, self.radius, self.sigma)

    def _apply(self, x):
        return np.einsum("ij,...jkc,lk->...ilc", self._bh, x, self._bw)

    def _adjoint(self, u):
        return np.einsum("ji,...jkc,kl->...ilc", self._bh, u, self._bw)


def make_operator(kind: str, input_shape: Shape, **params) -> LinearOperator:
    """Build an operator from its configuration-file description."""
    if kind == "identity":
        return IdentityOperator(input_shape)
    if kind == "scale":
        return ScaleOperator(input_shape, params.get("value", 1.0))
    if kind == "downsample_avg":
        return DownsampleAvg(input_shape, params.get("factor", 4))
    if kind == "gaussian_blur":
        return GaussianBlur(input_shape, params.get("radius", 3), params.get("sigma", 1.0))
    raise ConfigurationError(f"unknown operator kind {kind!r}")
