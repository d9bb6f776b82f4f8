"""Fixed-point algorithms for maximum-likelihood (nu, mu, Sigma) estimation.

Five variants share one E-step and differ in the scatter update and in how
the degree of freedom is refreshed:

====== ============================= ==========================================
kind   scatter update                nu update
====== ============================= ==========================================
EM     sum w g (x-mu)(x-mu)^T        zero of phi(nu/2) + c_r, weights from step r
AEM    same, divided by sum w g      zero of phi(nu/2) + c_r, weights from r+1
MMF    as AEM                        zero of A(nu/2) + b_r (one myriad step)
GMMF   as AEM                        zero of F, by iterating the MMF step
ECME   as EM                         zero of F, by iterating the MMF step
====== ============================= ==========================================
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .linalg import SpdMatrix
from .model import (
    Mahalanobis,
    StudentTParams,
    WeightedSample,
    _objective_from_deltas,
    a_part,
    bregman_sum,
    mahalanobis,
    neg_log_likelihood,
)
from .special import DEFAULT_SOLVER, ScalarSolverConfig, phi, phi_prime, solve_increasing_zero


class AlgorithmKind(enum.Enum):
    EM = "em"
    AEM = "aem"
    MMF = "mmf"
    GMMF = "gmmf"
    ECME = "ecme"

    @classmethod
    def parse(cls, value) -> "AlgorithmKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown algorithm {value!r}; expected one of {names}") from None


class FitStatus(enum.Enum):
    CONVERGED = "Converged"
    MAX_ITERS = "MaxIters"
    GAUSSIAN_LIMIT = "GaussianLimit"


class GaussianLimit(RuntimeError):
    """The degree of freedom ran past ``nu_max``: the data look Gaussian."""

    def __init__(self, nu: float):
        super().__init__(f"degree of freedom exceeded the Gaussian-limit threshold (nu = {nu:.6g})")
        self.nu = nu


@dataclass(frozen=True)
class FitConfig:
    tol: float = 1e-5
    max_outer_iters: int = 10000
    nu0: float = 3.0
    inner_tol: float = 1e-9
    inner_max_iters: int = 100
    nu_max: float = 1e6
    fixed_nu: float | None = None
    solver: ScalarSolverConfig = DEFAULT_SOLVER

    def __post_init__(self):
        for name in ("tol", "inner_tol", "nu0", "nu_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_outer_iters < 1 or self.inner_max_iters < 1:
            raise ValueError("iteration limits must be at least 1")
        if self.fixed_nu is not None and not self.fixed_nu > 0:
            raise ValueError("fixed_nu must be positive")


@dataclass
class FitResult:
    params: StudentTParams
    iterations: int
    objective_trace: list[float]
    status: FitStatus
    gaussian_sigma: SpdMatrix | None = None
    wall_time: float = 0.0
    kind: AlgorithmKind | None = None
    extras: dict = field(default_factory=dict)
    map_evaluations: int | None = None

    def __post_init__(self):
        if self.map_evaluations is None:
            self.map_evaluations = self.iterations

    @property
    def converged(self) -> bool:
        return self.status is FitStatus.CONVERGED

    @property
    def final_objective(self) -> float:
        return self.objective_trace[-1]


# -- E and M steps -----------------------------------------------------------


def e_step(params: StudentTParams, data: WeightedSample) -> Mahalanobis:
    delta = mahalanobis(params, data.points)
    gamma = (params.nu + data.dim) / (params.nu + delta)
    return Mahalanobis(delta=delta, gamma=gamma)


def m_step_location_scatter(kind, data: WeightedSample, gammas):
    """Weighted location update and the kind-specific scatter update.

    Returns ``(mu_next, sigma_next)``; the scatter is an ``SpdMatrix`` so a
    degenerate configuration raises ``NotPositiveDefinite`` here.
    """
    kind = AlgorithmKind.parse(kind)
    wg = data.weights * np.asarray(gammas, dtype=float)
    total = wg.sum()
    mu = (wg @ data.points) / total
    y = data.points - mu
    scatter = (y * wg[:, None]).T @ y
    if kind in (AlgorithmKind.AEM, AlgorithmKind.MMF, AlgorithmKind.GMMF):
        scatter = scatter / total
    return mu, SpdMatrix(scatter)


# -- degree-of-freedom updates ----------------------------------------------


def _bregman_from_gamma(gammas, weights) -> float:
    g = np.asarray(gammas, dtype=float)
    u = g - 1.0
    with np.errstate(divide="ignore"):
        terms = u - np.log1p(u)
    far = u < -0.5
    if np.any(far):
        terms[far] = u[far] - np.log(g[far])
    small = np.abs(u) < 1e-4
    if np.any(small):
        us = u[small]
        terms[small] = us * us * (0.5 - us * (1.0 / 3.0 - us * (0.25 - us / 5.0)))
    return float(np.asarray(weights, dtype=float) @ terms)


def _solve_phi_level(c: float, nu_start: float, solver: ScalarSolverConfig) -> float:
    """Return nu with phi(nu/2) + c = 0 for c > 0.

    From -1/x < phi(x) < -1/(2x), the zero x = nu/2 lies in (1/(2c), 1/c).
    """
    if not c > 0.0:
        raise ValueError(f"phi(nu/2) + c has no zero for c = {c!r}")
    x = solve_increasing_zero(
        lambda x: phi(x) + c,
        phi_prime,
        0.5 * nu_start,
        solver,
        lower=0.5 / c,
        upper=1.0 / c,
    )
    return 2.0 * x


def nu_step_em(nu_r: float, gammas, weights, d: int, solver: ScalarSolverConfig = DEFAULT_SOLVER) -> float:
    """EM update: zero of ``phi(nu/2) - phi((nu_r+d)/2) + sum w (g - log g - 1)``."""
    c = -phi(0.5 * (nu_r + d)) + _bregman_from_gamma(gammas, weights)
    return _solve_phi_level(c, nu_r, solver)


def nu_step_aem(nu_r: float, deltas_next, weights, d: int, solver: ScalarSolverConfig = DEFAULT_SOLVER) -> float:
    """As ``nu_step_em`` but with weights recomputed from the updated (mu, Sigma)."""
    c = -phi(0.5 * (nu_r + d)) + bregman_sum(nu_r, np.asarray(deltas_next, dtype=float), weights, d)
    return _solve_phi_level(c, nu_r, solver)


def nu_step_mmf(nu_r: float, deltas_next, weights, d: int, solver: ScalarSolverConfig = DEFAULT_SOLVER) -> float:
    """Myriad-filter update: zero of ``A(nu/2) + b_r``.

    ``A(x) = phi(x) - phi(x + d/2)`` is negative and increasing; ``b_r >= 0``
    is the weighted sum evaluated at ``nu_r``. When ``b_r == 0`` there is no
    zero and ``nu_r`` is returned unchanged.
    """
    b = bregman_sum(nu_r, np.asarray(deltas_next, dtype=float), weights, d)
    if not b > 0.0:
        return float(nu_r)
    t = 0.5 * d
    x = solve_increasing_zero(
        lambda x: phi(x) - phi(x + t) + b,
        lambda x: phi_prime(x) - phi_prime(x + t),
        0.5 * nu_r,
        solver,
    )
    return 2.0 * x


def gmmf_inner_iterates(nu_r: float, deltas_next, weights, d: int, cfg: FitConfig = FitConfig()) -> list[float]:
    """Run the inner loop that drives F to zero; return every iterate.

    The sequence starts at ``nu_r`` and is monotone: increasing when
    ``F(nu_r) < 0``, decreasing when ``F(nu_r) > 0``.

    Raises
    ------
    GaussianLimit
        If an iterate exceeds ``cfg.nu_max`` (F has no zero to converge to).
    """
    delta = np.asarray(deltas_next, dtype=float)
    w = np.asarray(weights, dtype=float)
    iterates = [float(nu_r)]
    nu = float(nu_r)
    for _ in range(cfg.inner_max_iters):
        nxt = nu_step_mmf(nu, delta, w, d, cfg.solver)
        iterates.append(nxt)
        if nxt > cfg.nu_max:
            raise GaussianLimit(nxt)
        if abs(nxt - nu) <= cfg.inner_tol * nu:
            break
        nu = nxt
    return iterates


def nu_step_gmmf(nu_r: float, deltas_next, weights, d: int, cfg: FitConfig = FitConfig()) -> float:
    return gmmf_inner_iterates(nu_r, deltas_next, weights, d, cfg)[-1]


def nu_step_ecme(deltas_next, weights, d: int, nu_start: float, cfg: FitConfig = FitConfig()) -> float:
    """CM2 step of ECME: same zero-of-F target and inner loop as GMMF."""
    return nu_step_gmmf(nu_start, deltas_next, weights, d, cfg)


def f_residual(nu: float, deltas, weights, d: int) -> float:
    return a_part(nu, d) + bregman_sum(nu, np.asarray(deltas, dtype=float), weights, d)


# -- the full iteration ------------------------------------------------------


def initial_params(data: WeightedSample, nu0: float) -> StudentTParams:
    mu0 = data.mean()
    return StudentTParams(nu0, mu0, SpdMatrix(data.covariance(mu0)))


def _map_step(kind: AlgorithmKind, params: StudentTParams, data: WeightedSample, cfg: FitConfig, delta=None):
    """``fixed_point_map`` that also returns the distances at the new (mu, Sigma).

    ``delta``, if given, are the distances at ``params`` and skip the E-step
    whitening.
    """
    d = data.dim
    w = data.weights
    if delta is None:
        delta = mahalanobis(params, data.points)
    gamma = (params.nu + d) / (params.nu + delta)
    mu, sigma = m_step_location_scatter(kind, data, gamma)
    delta_next = np.atleast_1d(sigma.quad_form(data.points - mu))
    nu_r = params.nu
    if cfg.fixed_nu is not None:
        nu = float(cfg.fixed_nu)
    elif kind is AlgorithmKind.EM:
        nu = nu_step_em(nu_r, gamma, w, d, cfg.solver)
    elif kind is AlgorithmKind.AEM:
        nu = nu_step_aem(nu_r, delta_next, w, d, cfg.solver)
    elif kind is AlgorithmKind.MMF:
        nu = nu_step_mmf(nu_r, delta_next, w, d, cfg.solver)
    elif kind is AlgorithmKind.GMMF:
        nu = nu_step_gmmf(nu_r, delta_next, w, d, cfg)
    else:
        nu = nu_step_ecme(delta_next, w, d, nu_r, cfg)
    return StudentTParams(nu, mu, sigma), delta_next


def fixed_point_map(kind, params: StudentTParams, data: WeightedSample, cfg: FitConfig = FitConfig()) -> StudentTParams:
    """One full (E, M, nu) update of the chosen algorithm."""
    return _map_step(AlgorithmKind.parse(kind), params, data, cfg)[0]


def relative_change(old: StudentTParams, new: StudentTParams, include_nu: bool = True) -> float:
    """Stopping statistic: relative change of (mu, Sigma) plus that of log nu.

    The log-nu term divides by ``max(|log nu_old|, 1e-3)`` so it stays finite
    at ``nu_old = 1``.
    """
    dm = new.mu - old.mu
    ds = new.sigma.entries - old.sigma.entries
    num = math.sqrt(float(dm @ dm) + float(np.sum(ds * ds)))
    den = math.sqrt(float(old.mu @ old.mu) + float(np.sum(old.sigma.entries**2)))
    out = num / den if den > 0 else num
    if include_nu:
        lo = math.log(old.nu)
        out += abs(math.log(new.nu) - lo) / max(abs(lo), 1e-3)
    return out


def _gaussian_scatter(data: WeightedSample) -> SpdMatrix:
    return SpdMatrix(data.covariance())


def fit(kind, data: WeightedSample, cfg: FitConfig = FitConfig(), init: StudentTParams | None = None) -> FitResult:
    """Estimate (nu, mu, Sigma) with one of the fixed-point algorithms.

    Starts from the weighted mean and covariance with ``nu = cfg.nu0`` (or
    ``cfg.fixed_nu``) unless ``init`` is given, and iterates until
    ``relative_change`` drops below ``cfg.tol``.

    When the degree of freedom passes ``cfg.nu_max`` the fit stops with
    status ``GaussianLimit`` and ``gaussian_sigma`` holds the Gaussian
    maximum-likelihood scatter ``sum_i w_i (x_i - m)(x_i - m)^T`` about the
    weighted mean ``m``.
    """
    kind = AlgorithmKind.parse(kind)
    start = time.perf_counter()
    if init is None:
        nu0 = cfg.fixed_nu if cfg.fixed_nu is not None else cfg.nu0
        params = initial_params(data, nu0)
    else:
        params = init
    d, w = data.dim, data.weights
    delta = mahalanobis(params, data.points)
    trace = [_objective_from_deltas(params.nu, delta, w, d, params.sigma.log_det())]
    status = FitStatus.MAX_ITERS
    iterations = 0
    include_nu = cfg.fixed_nu is None
    for r in range(1, cfg.max_outer_iters + 1):
        try:
            nxt, delta = _map_step(kind, params, data, cfg, delta)
        except GaussianLimit:
            status = FitStatus.GAUSSIAN_LIMIT
            iterations = r
            break
        iterations = r
        trace.append(_objective_from_deltas(nxt.nu, delta, w, d, nxt.sigma.log_det()))
        if nxt.nu > cfg.nu_max:
            params = nxt
            status = FitStatus.GAUSSIAN_LIMIT
            break
        change = relative_change(params, nxt, include_nu)
        params = nxt
        if change < cfg.tol:
            status = FitStatus.CONVERGED
            break
    gaussian_sigma = _gaussian_scatter(data) if status is FitStatus.GAUSSIAN_LIMIT else None
    return FitResult(
        params=params,
        iterations=iterations,
        objective_trace=trace,
        status=status,
        gaussian_sigma=gaussian_sigma,
        wall_time=time.perf_counter() - start,
        kind=kind,
    )
