"""Multivariate Student-t model: parameters, likelihood, gradients, sampling.

The negative log-likelihood used throughout is the weighted, normalised
objective

    L(nu, mu, Sigma) = -2 log G((d+nu)/2) + 2 log G(nu/2) - nu log nu
                       + (d+nu) sum_i w_i log(nu + delta_i) + log|Sigma|

with ``delta_i = (x_i - mu)^T Sigma^{-1} (x_i - mu)``. Its derivative in nu
is the function ``F`` whose zeros the degree-of-freedom updates look for.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .linalg import SpdMatrix
from .special import DomainError, log_gamma_ratio, phi

LOG_PI = math.log(math.pi)
LOG_2 = math.log(2.0)


@dataclass(frozen=True)
class StudentTParams:
    """Degrees of freedom ``nu``, location ``mu`` and scatter ``sigma``.

    ``nu = inf`` is accepted and denotes the Gaussian N(mu, sigma).
    """

    nu: float
    mu: np.ndarray
    sigma: SpdMatrix

    def __post_init__(self):
        nu = float(self.nu)
        if not nu > 0.0:
            raise ValueError(f"nu must be positive, got {self.nu!r}")
        mu = np.array(self.mu, dtype=float).reshape(-1)
        if not np.all(np.isfinite(mu)):
            raise ValueError("mu has non-finite components")
        sigma = self.sigma if isinstance(self.sigma, SpdMatrix) else SpdMatrix(self.sigma)
        if sigma.dim != mu.shape[0]:
            raise ValueError(f"mu has dimension {mu.shape[0]} but sigma is {sigma.dim}x{sigma.dim}")
        mu.flags.writeable = False
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    def replace(self, **changes) -> "StudentTParams":
        fields = {"nu": self.nu, "mu": self.mu, "sigma": self.sigma}
        fields.update(changes)
        return StudentTParams(**fields)


class WeightedSample:
    """Points ``x_1..x_n`` in R^d with weights in the open probability simplex.

    Parameters
    ----------
    points : array_like, shape (n, d) or (n,)
        One sample per row; a 1-d input is read as n scalar samples.
    weights : array_like, shape (n,), optional
        Strictly positive and summing to one (absolute tolerance 1e-12).
        Defaults to uniform weights.
    check_size : bool, default True
        Require ``n >= d + 1``, which fitting needs. Switch off to evaluate
        the likelihood on smaller samples.
    """

    __slots__ = ("points", "weights")

    def __init__(self, points, weights=None, check_size: bool = True):
        x = np.array(points, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise ValueError(f"points must be a 2-d array, got shape {x.shape}")
        n, d = x.shape
        if not np.all(np.isfinite(x)):
            raise ValueError("points contain non-finite values")
        if n < 1 or (check_size and n < d + 1):
            raise ValueError(f"need at least d+1 = {d + 1} samples, got {n}")
        if weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.array(weights, dtype=float).reshape(-1)
            if w.shape[0] != n:
                raise ValueError(f"got {w.shape[0]} weights for {n} points")
            if not np.all(w > 0.0):
                raise ValueError("weights must be strictly positive")
            if abs(math.fsum(w) - 1.0) > 1e-12:
                raise ValueError(f"weights must sum to one, sum is {math.fsum(w)!r}")
        if d > 1 and w.max() >= 1.0 / d:
            warnings.warn(
                f"max weight {w.max():.3g} is not below 1/d = {1.0 / d:.3g}; "
                "a maximum-likelihood scatter may not exist",
                stacklevel=2,
            )
        x.flags.writeable = False
        w.flags.writeable = False
        self.points = x
        self.weights = w

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def covariance(self, center=None) -> np.ndarray:
        """Weighted second moment about ``center`` (the weighted mean by default)."""
        c = self.mean() if center is None else np.asarray(center, dtype=float)
        y = self.points - c
        return (y * self.weights[:, None]).T @ y


@dataclass(frozen=True)
class Mahalanobis:
    delta: np.ndarray
    gamma: np.ndarray


class FClass(enum.Enum):
    NO_ZERO = "NoZero"
    HAS_ZERO = "HasZero"
    INDETERMINATE = "Indeterminate"


@dataclass(frozen=True)
class FDiagnostic:
    classification: FClass
    interval: tuple[float, float]


def _check_dim(params: StudentTParams, d: int):
    if params.dim != d:
        raise ValueError(f"dimension mismatch: params have d={params.dim}, data have d={d}")


def mahalanobis(params: StudentTParams, points) -> np.ndarray:
    """Squared Mahalanobis distances of each row of ``points`` to ``params.mu``."""
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[None, :] if x.shape[0] == params.dim else x[:, None]
    _check_dim(params, x.shape[1])
    return np.atleast_1d(params.sigma.quad_form(x - params.mu))


def log_pdf(params: StudentTParams, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1 and x.shape[0] == params.dim
    delta = mahalanobis(params, x)
    d = params.dim
    nu = params.nu
    if math.isinf(nu):
        out = -0.5 * (d * (LOG_2 + LOG_PI) + params.sigma.log_det() + delta)
    else:
        half = 0.5 * nu
        # log G((d+nu)/2) - log G(nu/2) - (d/2) log nu, via the stable ratio
        lead = -log_gamma_ratio(half, 0.5 * d) - 0.5 * d * LOG_2
        out = lead - 0.5 * d * LOG_PI - 0.5 * params.sigma.log_det()
        out = out - 0.5 * (d + nu) * np.log1p(delta / nu)
    return float(out[0]) if single else out


def pdf(params: StudentTParams, x) -> np.ndarray | float:
    """Density of T_nu(mu, Sigma) at ``x`` (one point or a batch of rows)."""
    out = log_pdf(params, x)
    return math.exp(out) if isinstance(out, float) else np.exp(out)


def _objective_from_deltas(nu: float, delta: np.ndarray, w: np.ndarray, d: int, log_det: float) -> float:
    if math.isinf(nu):
        return d * LOG_2 + float(w @ delta) + log_det
    # -2 lgG((d+nu)/2) + 2 lgG(nu/2) - nu log nu + (d+nu) log nu
    # = 2 [lgG(nu/2) - lgG(nu/2 + d/2) + (d/2) log(nu/2)] + d log 2
    head = 2.0 * log_gamma_ratio(0.5 * nu, 0.5 * d) + d * LOG_2
    return head + (d + nu) * float(w @ np.log1p(delta / nu)) + log_det


def neg_log_likelihood(params: StudentTParams, data: WeightedSample) -> float:
    """Weighted negative log-likelihood L(nu, mu, Sigma).

    Evaluated in a grouped form (``log Gamma`` ratio plus ``log1p`` terms)
    that avoids cancelling O(nu log nu) quantities, so it stays accurate to
    near machine precision for any nu, including ``nu = inf``.
    """
    _check_dim(params, data.dim)
    delta = mahalanobis(params, data.points)
    return _objective_from_deltas(params.nu, delta, data.weights, data.dim, params.sigma.log_det())


def gamma_weights(nu: float, delta: np.ndarray, d: int) -> np.ndarray:
    return (nu + d) / (nu + delta)


def _bregman_terms(nu: float, delta: np.ndarray, d: int) -> np.ndarray:
    # gamma - log(gamma) - 1 with gamma = 1 + u, u = (d - delta)/(nu + delta)
    u = (d - delta) / (nu + delta)
    with np.errstate(divide="ignore"):
        out = u - np.log1p(u)
    # far below gamma = 1 log1p(u) loses u + 1 to rounding; use log gamma directly
    far = u < -0.5
    if np.any(far):
        df = delta[far] if np.ndim(delta) else delta
        out[far] = u[far] - (math.log(nu + d) - np.log(nu + df))
    small = np.abs(u) < 1e-4
    if np.any(small):
        us = u[small]
        out[small] = us * us * (0.5 - us * (1.0 / 3.0 - us * (0.25 - us / 5.0)))
    return out


def bregman_sum(nu: float, delta: np.ndarray, weights: np.ndarray, d: int) -> float:
    """``sum_i w_i (gamma_i - log gamma_i - 1)`` with ``gamma_i = (nu+d)/(nu+delta_i)``."""
    return float(weights @ _bregman_terms(nu, np.asarray(delta, dtype=float), d))


def a_part(nu: float, d: int) -> float:
    """``phi(nu/2) - phi((nu+d)/2)``, strictly negative and increasing in nu."""
    return phi(0.5 * nu) - phi(0.5 * (nu + d))


def f_nu(nu: float, deltas, weights, d: int) -> float:
    """Derivative of L in nu at fixed (mu, Sigma), given the distances."""
    nu = float(nu)
    if not nu > 0.0:
        raise DomainError(f"f_nu requires nu > 0, got {nu!r}")
    delta = np.asarray(deltas, dtype=float)
    w = np.asarray(weights, dtype=float)
    return a_part(nu, d) + bregman_sum(nu, delta, w, d)


def grad(params: StudentTParams, data: WeightedSample):
    """Analytic gradient of L.

    Returns
    -------
    d_mu : ndarray, shape (d,)
    d_sigma : ndarray, shape (d, d)
        Derivative with respect to the matrix entries treated as
        independent; symmetric.
    d_nu : float
    """
    _check_dim(params, data.dim)
    d = data.dim
    nu = params.nu
    w = data.weights
    y = data.points - params.mu
    sinv_y = params.sigma.solve(y)
    delta = np.einsum("ij,ij->i", y, sinv_y)
    coef = w / (nu + delta)
    d_mu = -2.0 * (d + nu) * (coef @ sinv_y)
    d_sigma = -(d + nu) * (sinv_y * coef[:, None]).T @ sinv_y + params.sigma.inverse()
    d_sigma = 0.5 * (d_sigma + d_sigma.T)
    d_nu = a_part(nu, d) + bregman_sum(nu, delta, w, d)
    return d_mu, d_sigma, d_nu


def classify_f_zero(deltas, d: int) -> FDiagnostic:
    """Classify whether F can have a zero from where the distances fall.

    All distances in the closed interval [d - sqrt(2d), d + sqrt(2d)] means F
    is negative everywhere (no zero); all outside means F turns positive for
    large nu and so has a zero. Mixed configurations are not decided.
    """
    delta = np.asarray(deltas, dtype=float)
    half = math.sqrt(2.0 * d)
    lo, hi = d - half, d + half
    inside = (delta >= lo) & (delta <= hi)
    if np.all(inside):
        cls = FClass.NO_ZERO
    elif not np.any(inside):
        cls = FClass.HAS_ZERO
    else:
        cls = FClass.INDETERMINATE
    return FDiagnostic(cls, (lo, hi))


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def standard_gamma(shape: float, size: int, rng) -> np.ndarray:
    """Gamma(shape, 1) draws by the Marsaglia-Tsang squeeze method.

    Shapes below one are boosted: ``G(a) = G(a + 1) * U^(1/a)``.
    """
    rng = _as_generator(rng)
    if not shape > 0:
        raise ValueError(f"shape must be positive, got {shape!r}")
    if shape < 1.0:
        g = standard_gamma(shape + 1.0, size, rng)
        u = rng.random(size)
        return g * np.exp(np.log(u) / shape)
    dd = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * dd)
    out = np.empty(size)
    pending = np.arange(size)
    while pending.size:
        m = pending.size
        z = rng.standard_normal(m)
        u = rng.random(m)
        v = 1.0 + c * z
        positive = v > 0.0
        v = np.where(positive, v * v * v, 1.0)
        z2 = z * z
        squeeze = u < 1.0 - 0.0331 * z2 * z2
        with np.errstate(divide="ignore"):
            full = np.log(u) < 0.5 * z2 + dd * (1.0 - v + np.log(v))
        ok = positive & (squeeze | full)
        out[pending[ok]] = dd * v[ok]
        pending = pending[~ok]
    return out


def sample(params: StudentTParams, n: int, rng=None) -> np.ndarray:
    """Draw ``n`` points via ``mu + chol(Sigma) Z / sqrt(Y)``.

    ``Z ~ N(0, I)`` is drawn first (shape (n, d)), then
    ``Y ~ Gamma(nu/2, rate nu/2)``; for ``nu = inf``, ``Y = 1``. The same
    seed therefore gives the same (Z, Y) for every (mu, Sigma).

    Parameters
    ----------
    rng : int, numpy Generator or None
        Seed or generator; a fixed seed gives identical output.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = _as_generator(rng)
    z = rng.standard_normal((n, params.dim))
    if math.isinf(params.nu):
        scale = np.ones(n)
    else:
        y = standard_gamma(0.5 * params.nu, n, rng) / (0.5 * params.nu)
        scale = 1.0 / np.sqrt(y)
    return params.mu + (z @ params.sigma.chol.T) * scale[:, None]
