"""SQUAREM and damped Anderson (DAAREM) acceleration of the fixed-point maps.

Both schemes extrapolate in an unconstrained chart

    theta = (log nu, mu, strictly-lower entries of L, log diag(L)),  Sigma = L L^T,

so every extrapolated point decodes to nu > 0 and an SPD scatter. The
fixed-point map is conjugated through the chart, and each scheme guards its
extrapolations with the negative log-likelihood so descent is preserved.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .estimators import (
    AlgorithmKind,
    FitConfig,
    FitResult,
    FitStatus,
    GaussianLimit,
    _gaussian_scatter,
    fit,
    fixed_point_map,
    initial_params,
    relative_change,
)
from .linalg import SpdMatrix
from .model import StudentTParams, WeightedSample, neg_log_likelihood

# decode clips these coordinates so exp() never overflows
_LOG_NU_CLIP = 50.0
_LOG_DIAG_CLIP = 150.0
LAMBDA_FLOOR = 1e-12

Map = Callable[[np.ndarray], np.ndarray]
Objective = Callable[[np.ndarray], float]


class Scheme(enum.Enum):
    NONE = "none"
    SQUAREM = "squarem"
    DAAREM = "daarem"

    @classmethod
    def parse(cls, value) -> "Scheme":
        if value is None:
            return cls.NONE
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(s.value for s in cls)
            raise ValueError(f"unknown acceleration scheme {value!r}; expected one of {names}") from None


class ParamVector:
    """Chart between ``StudentTParams`` of dimension ``d`` and flat vectors.

    Layout: ``[log nu, mu_1..mu_d, L_ij for i > j (row-major), log L_ii]``,
    length ``p = 1 + d + d(d+1)/2``.
    """

    def __init__(self, d: int):
        if d < 1:
            raise ValueError("dimension must be positive")
        self.d = d
        self.p = 1 + d + d * (d + 1) // 2
        self._lower = np.tril_indices(d, -1)

    def encode(self, params: StudentTParams) -> np.ndarray:
        d = self.d
        if params.dim != d:
            raise ValueError(f"expected dimension {d}, got {params.dim}")
        low = params.sigma.chol
        return np.concatenate(([math.log(params.nu)], params.mu, low[self._lower], np.log(np.diag(low))))

    def decode(self, theta) -> StudentTParams:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.p,):
            raise ValueError(f"expected a vector of length {self.p}, got shape {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("parameter vector has non-finite entries")
        d = self.d
        nu = math.exp(min(max(theta[0], -_LOG_NU_CLIP), _LOG_NU_CLIP))
        mu = theta[1 : 1 + d].copy()
        n_off = d * (d - 1) // 2
        low = np.zeros((d, d))
        low[self._lower] = theta[1 + d : 1 + d + n_off]
        low[np.diag_indices(d)] = np.exp(np.clip(theta[1 + d + n_off :], -_LOG_DIAG_CLIP, _LOG_DIAG_CLIP))
        return StudentTParams(nu, mu, SpdMatrix.from_cholesky(low))


@dataclass(frozen=True)
class SquaremConfig:
    max_backtracks: int = 50

    def __post_init__(self):
        if self.max_backtracks < 1:
            raise ValueError("max_backtracks must be at least 1")


@dataclass(frozen=True)
class DaaremConfig:
    """Parameters of damped Anderson acceleration with restarts.

    ``D`` defaults to ``2 * kappa`` and ``m`` to ``min(ceil(p/2), 10)``
    once the problem size ``p`` is known.
    """

    epsilon: float = 0.01
    epsilon_c: float = 0.0
    alpha: float = 1.2
    kappa: int = 25
    D: int | None = None
    m: int | None = None

    def __post_init__(self):
        if not self.alpha > 1:
            raise ValueError("alpha must exceed 1")
        if self.m is not None and self.m < 1:
            raise ValueError("m must be at least 1")
        if self.epsilon < 0 or self.epsilon_c < 0:
            raise ValueError("epsilon and epsilon_c must be non-negative")

    def resolved(self, p: int) -> "DaaremConfig":
        D = 2 * self.kappa if self.D is None else self.D
        m = min(math.ceil(p / 2), 10) if self.m is None else self.m
        return DaaremConfig(self.epsilon, self.epsilon_c, self.alpha, self.kappa, D, m)


@dataclass
class DaaremState:
    """History and counters carried between DAAREM steps.

    ``thetas`` and ``fs`` hold the most recent iterates and residuals
    ``f = G(theta) - theta``; the difference matrices are built from them.
    """

    thetas: list = field(default_factory=list)
    fs: list = field(default_factory=list)
    c: int = 1
    s: int = 0
    r: int = 1
    L_star: float = math.inf

    def differences(self, m_r: int) -> tuple[np.ndarray, np.ndarray]:
        th = np.array(self.thetas[-(m_r + 1) :]).T
        fv = np.array(self.fs[-(m_r + 1) :]).T
        return np.diff(th, axis=1), np.diff(fv, axis=1)


# -- SQUAREM -------------------------------------------------------------------


def _safe_objective(objective: Objective, theta) -> float:
    try:
        val = float(objective(theta))
    except (ValueError, FloatingPointError, np.linalg.LinAlgError):
        return math.inf
    return val if math.isfinite(val) else math.inf


def squarem_step(
    G: Map,
    theta,
    objective: Objective,
    cfg: SquaremConfig = SquaremConfig(),
    admissible: Callable[[np.ndarray], bool] | None = None,
) -> np.ndarray:
    """One SQUAREM step with objective backtracking.

    ``admissible`` may veto an extrapolated point before it is evaluated;
    a vetoed point counts as a failed backtracking test. If no step length
    passes within ``cfg.max_backtracks`` halvings the plain double step
    ``G(G(theta))`` is used instead.
    """
    theta = np.asarray(theta, dtype=float)
    theta1 = G(theta)
    theta2 = G(theta1)
    s = theta1 - theta
    v = theta2 - theta1 - s
    nv = float(np.linalg.norm(v))
    if nv == 0.0:
        return theta2
    alpha = min(-float(np.linalg.norm(s)) / nv, -1.0)
    base = _safe_objective(objective, theta)
    candidate = theta2
    for _ in range(cfg.max_backtracks):
        if alpha == -1.0:
            break
        trial = theta - 2.0 * alpha * s + alpha * alpha * v
        ok = admissible is None or admissible(trial)
        if ok and _safe_objective(objective, trial) <= base:
            candidate = trial
            break
        alpha = 0.5 * (alpha - 1.0)
    if candidate is theta2:
        return G(theta2)
    try:
        return G(candidate)
    except GaussianLimit:
        # a spurious limit triggered by the extrapolation; the double step is safe
        return G(theta2)


# -- DAAREM --------------------------------------------------------------------


def _damped_coefficients(sv, g, lam):
    keep = sv > 0.0
    out = np.zeros_like(sv)
    out[keep] = sv[keep] * g[keep] / (sv[keep] ** 2 + lam)
    return out


def solve_damping_lambda(F_mat, f_vec, delta_r: float, rel_tol: float = 1e-8) -> float:
    """Damping ``lambda`` with ``||gamma(lambda)||^2 = delta_r ||gamma(0)||^2``.

    ``gamma(lambda) = (F^T F + lambda I)^{-1} F^T f``. The squared-norm ratio
    decreases strictly in ``lambda``; it is solved by bisection on
    ``log10(lambda)`` over ``[-12, 12]`` around ``log10(s_max^2)``, the scale
    set by the largest singular value of ``F``.
    """
    if not 0.0 < delta_r <= 1.0:
        raise ValueError(f"delta_r must lie in (0, 1], got {delta_r!r}")
    if delta_r == 1.0:
        return 0.0
    F_mat = np.atleast_2d(np.asarray(F_mat, dtype=float))
    if F_mat.shape[0] == 1 and np.ndim(f_vec) == 1 and len(f_vec) > 1:
        F_mat = F_mat.T
    u, sv, _ = np.linalg.svd(F_mat, full_matrices=False)
    smax = float(sv[0]) if sv.size else 0.0
    if smax == 0.0:
        return LAMBDA_FLOOR
    sv = np.where(sv > smax * 1e-14, sv, 0.0)
    g = u.T @ np.asarray(f_vec, dtype=float)
    full = float(np.sum(_damped_coefficients(sv, g, 0.0) ** 2))
    if full == 0.0:
        return LAMBDA_FLOOR
    target = delta_r * full

    def excess(log_lam):
        c = _damped_coefficients(sv, g, 10.0**log_lam)
        return float(c @ c) - target

    scale = math.log10(smax * smax)
    lo, hi = scale - 12.0, scale + 12.0
    # ratio decreases: positive at lo, negative at hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if (hi - lo) * math.log(10.0) <= rel_tol * 1e-2:
            break
    return max(10.0 ** (0.5 * (lo + hi)), LAMBDA_FLOOR)


def anderson_coefficients(F_mat, f_vec, lam: float) -> np.ndarray:
    """``(F^T F + lam I)^{-1} F^T f`` through the SVD (pseudo-inverse at lam = 0)."""
    u, sv, vt = np.linalg.svd(np.asarray(F_mat, dtype=float), full_matrices=False)
    smax = float(sv[0]) if sv.size else 0.0
    sv = np.where(sv > smax * 1e-14, sv, 0.0)
    g = u.T @ np.asarray(f_vec, dtype=float)
    return vt.T @ _damped_coefficients(sv, g, lam)


def damping_delta(cfg: DaaremConfig, s: int) -> float:
    """Damping target ``1 / (1 + alpha^(kappa - s))``."""
    return 1.0 / (1.0 + cfg.alpha ** (cfg.kappa - s))


def daarem_step(
    G: Map,
    state: DaaremState,
    theta,
    objective: Objective,
    cfg: DaaremConfig,
    admissible: Callable[[np.ndarray], bool] | None = None,
    L_theta: float | None = None,
) -> tuple[np.ndarray, DaaremState]:
    """One damped Anderson step; ``cfg`` must be resolved (``m``, ``D`` set).

    ``state`` must hold at least one earlier iterate/residual pair. The
    candidate is accepted when ``L(t) <= L(theta) + epsilon``; otherwise
    the plain step ``G(theta)`` is taken.
    """
    if cfg.m is None or cfg.D is None:
        raise ValueError("DaaremConfig must be resolved for the problem size first")
    theta = np.asarray(theta, dtype=float)
    g_theta = G(theta)
    f = g_theta - theta
    m_r = min(cfg.m, state.c)
    delta_r = damping_delta(cfg, state.s)
    state.thetas.append(theta)
    state.fs.append(f)
    X, Fm = state.differences(m_r)
    lam = solve_damping_lambda(Fm, f, delta_r)
    gamma = anderson_coefficients(Fm, f, lam)
    t = theta + f - (X + Fm) @ gamma
    base = _safe_objective(objective, theta) if L_theta is None else L_theta
    accept = admissible is None or admissible(t)
    if accept:
        accept = _safe_objective(objective, t) <= base + cfg.epsilon
    nxt = t if accept else g_theta
    s_next = state.s + 1
    if state.r % cfg.m == 0:
        L_next = _safe_objective(objective, nxt)
        if L_next > state.L_star + cfg.epsilon_c:
            s_next = max(s_next - cfg.m, -cfg.D)
        state.c = 1
        state.L_star = L_next
    else:
        state.c += 1
    state.s = min(s_next, cfg.D)
    state.r += 1
    keep = cfg.m + 1
    del state.thetas[:-keep]
    del state.fs[:-keep]
    return nxt, state


# -- driver ------------------------------------------------------------------------


def accelerated_fit(
    kind,
    scheme,
    data: WeightedSample,
    cfg: FitConfig = FitConfig(),
    squarem_cfg: SquaremConfig = SquaremConfig(),
    daarem_cfg: DaaremConfig = DaaremConfig(),
    init: StudentTParams | None = None,
) -> FitResult:
    """Fit with an optional acceleration scheme wrapped around the chosen map.

    One accelerated step counts as one iteration; ``map_evaluations`` counts
    the calls of the underlying fixed-point map (three per SQUAREM step, one
    per DAAREM step). The stopping rule and the
    Gaussian-limit handling are those of ``estimators.fit``; with scheme
    ``none`` this simply calls ``estimators.fit``.
    """
    kind = AlgorithmKind.parse(kind)
    scheme = Scheme.parse(scheme)
    if scheme is Scheme.NONE:
        res = fit(kind, data, cfg, init)
        res.extras["scheme"] = scheme.value
        return res
    start = time.perf_counter()
    chart = ParamVector(data.dim)
    if init is None:
        nu0 = cfg.fixed_nu if cfg.fixed_nu is not None else cfg.nu0
        init = initial_params(data, nu0)
    fixed = cfg.fixed_nu is not None
    log_nu_max = math.log(cfg.nu_max)

    n_evals = 0

    def G(theta):
        nonlocal n_evals
        n_evals += 1
        out = chart.encode(fixed_point_map(kind, chart.decode(theta), data, cfg))
        if fixed:
            out[0] = math.log(cfg.fixed_nu)
        return out

    def objective(theta):
        return neg_log_likelihood(chart.decode(theta), data)

    def admissible(theta):
        return theta[0] <= log_nu_max and (not fixed or theta[0] == math.log(cfg.fixed_nu))

    params = init
    theta = chart.encode(params)
    trace = [neg_log_likelihood(params, data)]
    status = FitStatus.MAX_ITERS
    iterations = 0
    state = None
    dcfg = daarem_cfg.resolved(chart.p)
    for r in range(1, cfg.max_outer_iters + 1):
        iterations = r
        try:
            if scheme is Scheme.SQUAREM:
                theta_next = squarem_step(G, theta, objective, squarem_cfg, admissible)
            elif state is None:
                g0 = G(theta)
                state = DaaremState(thetas=[theta], fs=[g0 - theta])
                theta_next = g0
                state.L_star = objective(theta_next)
            else:
                theta_next, state = daarem_step(G, state, theta, objective, dcfg, admissible, trace[-1])
        except GaussianLimit:
            status = FitStatus.GAUSSIAN_LIMIT
            break
        nxt = chart.decode(theta_next)
        trace.append(neg_log_likelihood(nxt, data))
        if nxt.nu > cfg.nu_max:
            params = nxt
            status = FitStatus.GAUSSIAN_LIMIT
            break
        change = relative_change(params, nxt, not fixed)
        params, theta = nxt, theta_next
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
        extras={"scheme": scheme.value},
        map_evaluations=n_evals,
    )
