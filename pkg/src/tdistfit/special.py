"""Gamma-family special functions and a bracketed scalar root solver.

The functions take and return Python floats. ``phi`` is evaluated through its
own asymptotic series instead of ``digamma(x) - log(x)`` so that it keeps
full relative accuracy for large arguments, where the two terms nearly
cancel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

# Bernoulli numbers B_2, B_4, ..., B_14.
_BERNOULLI = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
)
_ASYMPTOTIC_MIN = 6.0
# phi and phi' are small relative to the series remainder near 6, so they
# shift further before switching to the asymptotic expansion.
_PHI_ASYMPTOTIC_MIN = 12.0

# Stirling correction coefficients B_{2k} / (2k (2k - 1)) for k = 1..7.
_STIRLING = tuple(b / ((2 * k) * (2 * k - 1)) for k, b in enumerate(_BERNOULLI, start=1))


class DomainError(ValueError):
    pass


class NoSignChange(RuntimeError):
    """Bracket expansion did not locate a sign change."""


class MaxIters(RuntimeError):
    pass


def _check_positive(x: float, name: str) -> float:
    x = float(x)
    if not x > 0.0:
        raise DomainError(f"{name} requires x > 0, got {x!r}")
    return x


def log_gamma(x: float) -> float:
    """log Gamma(x) for x > 0."""
    x = _check_positive(x, "log_gamma")
    return math.lgamma(x)


def _phi_series(x: float) -> float:
    # psi(x) - log(x) = -1/(2x) - sum_k B_2k / (2k x^2k), valid for x >= 6
    inv2 = 1.0 / (x * x)
    acc = 0.0
    for k in range(len(_BERNOULLI), 0, -1):
        acc = acc * inv2 + _BERNOULLI[k - 1] / (2 * k)
    return -0.5 / x - acc * inv2


def _trigamma_series(x: float) -> float:
    # psi'(x) = 1/x + 1/(2x^2) + sum_k B_2k / x^(2k+1), valid for x >= 6
    inv2 = 1.0 / (x * x)
    acc = 0.0
    for k in range(len(_BERNOULLI), 0, -1):
        acc = acc * inv2 + _BERNOULLI[k - 1]
    return 1.0 / x + 0.5 * inv2 + acc * inv2 / x


def phi(x: float) -> float:
    """Return ``digamma(x) - log(x)``.

    The result lies strictly between ``-1/x`` and ``-1/(2x)``.
    """
    x = _check_positive(x, "phi")
    if x >= _PHI_ASYMPTOTIC_MIN:
        return _phi_series(x)
    k = math.ceil(_PHI_ASYMPTOTIC_MIN - x)
    shifted = x + k
    harmonic = math.fsum(1.0 / (x + j) for j in range(k))
    return _phi_series(shifted) + math.log1p(k / x) - harmonic


def digamma(x: float) -> float:
    """Digamma function psi(x) for x > 0."""
    x = _check_positive(x, "digamma")
    if x >= _ASYMPTOTIC_MIN:
        return math.log(x) + _phi_series(x)
    k = math.ceil(_ASYMPTOTIC_MIN - x)
    shifted = x + k
    harmonic = math.fsum(1.0 / (x + j) for j in range(k))
    return math.log(shifted) + _phi_series(shifted) - harmonic


def trigamma(x: float) -> float:
    """Trigamma function psi'(x) for x > 0."""
    x = _check_positive(x, "trigamma")
    if x >= _ASYMPTOTIC_MIN:
        return _trigamma_series(x)
    k = math.ceil(_ASYMPTOTIC_MIN - x)
    tail = math.fsum(1.0 / ((x + j) * (x + j)) for j in range(k))
    return _trigamma_series(x + k) + tail


def phi_prime(x: float) -> float:
    """Derivative of ``phi``: ``trigamma(x) - 1/x``, positive for x > 0."""
    x = _check_positive(x, "phi_prime")
    if x < _PHI_ASYMPTOTIC_MIN:
        # each recurrence step contributes 1/((x+j)^2 (x+j+1)) > 0
        k = math.ceil(_PHI_ASYMPTOTIC_MIN - x)
        tail = math.fsum(1.0 / ((x + j) * (x + j) * (x + j + 1.0)) for j in range(k))
        return phi_prime(x + k) + tail
    inv2 = 1.0 / (x * x)
    acc = 0.0
    for k in range(len(_BERNOULLI), 0, -1):
        acc = acc * inv2 + _BERNOULLI[k - 1]
    return 0.5 * inv2 + acc * inv2 / x


def _stirling_tail(x: float) -> float:
    inv2 = 1.0 / (x * x)
    acc = 0.0
    for c in reversed(_STIRLING):
        acc = acc * inv2 + c
    return acc / x


def log_gamma_ratio(x: float, t: float) -> float:
    """Return ``log Gamma(x) - log Gamma(x + t) + t log(x)``.

    The three terms grow like ``x log x`` while their sum is O(t^2 / x), so
    for large ``x`` the difference is assembled from Stirling's series with
    ``log1p`` instead of subtracting two large log-gamma values.
    """
    x = _check_positive(x, "log_gamma_ratio")
    if t == 0.0:
        return 0.0
    if x < 20.0:
        return math.lgamma(x) - math.lgamma(x + t) + t * math.log(x)
    main = t - (x + t - 0.5) * math.log1p(t / x)
    return main + _stirling_tail(x) - _stirling_tail(x + t)


@dataclass(frozen=True)
class ScalarSolverConfig:
    rel_tol: float = 1e-12
    max_iters: int = 200
    bracket_growth: float = 2.0
    max_expansions: int = 1100

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.bracket_growth > 1:
            raise ValueError("bracket_growth must exceed 1")


DEFAULT_SOLVER = ScalarSolverConfig()


def _expand_bracket(f, lo, hi, flo, fhi, cfg):
    g = cfg.bracket_growth
    for _ in range(cfg.max_expansions):
        if flo < 0.0 < fhi:
            return lo, hi, flo, fhi
        if flo >= 0.0:
            hi, fhi = lo, flo
            lo = lo / g
            flo = f(lo)
        else:
            lo, flo = hi, fhi
            hi = hi * g
            if not math.isfinite(hi):
                break
            fhi = f(hi)
    if flo < 0.0 < fhi:
        return lo, hi, flo, fhi
    raise NoSignChange(f"no sign change found between {lo!r} and {hi!r}")


def solve_increasing_zero(
    f: Callable[[float], float],
    f_prime: Callable[[float], float],
    x0: float,
    cfg: ScalarSolverConfig = DEFAULT_SOLVER,
    lower: float | None = None,
    upper: float | None = None,
) -> float:
    """Find the zero of a strictly increasing function on (0, inf).

    Newton's method run inside a sign-change bracket. A Newton step that
    would leave the bracket is replaced by a bisection step (geometric when
    the bracket spans more than a factor of two, so very wide brackets
    shrink quickly). Without ``lower``/``upper`` the bracket is grown
    geometrically from ``x0``; given bounds are validated and grown if they
    fail to straddle the zero.

    Raises
    ------
    NoSignChange
        If no bracket can be established.
    MaxIters
        If the iteration does not settle within ``cfg.max_iters`` steps.
    """
    x0 = _check_positive(x0, "solve_increasing_zero")
    lo = x0 if lower is None else float(lower)
    hi = x0 if upper is None else float(upper)
    if not (0.0 < lo <= hi):
        raise ValueError(f"invalid bracket ({lo!r}, {hi!r})")
    flo = f(lo)
    if flo == 0.0:
        return lo
    fhi = flo if hi == lo else f(hi)
    if fhi == 0.0:
        return hi
    lo, hi, flo, fhi = _expand_bracket(f, lo, hi, flo, fhi, cfg)

    x = x0 if lo < x0 < hi else math.sqrt(lo * hi)
    for _ in range(cfg.max_iters):
        fx = f(x)
        if fx == 0.0:
            return x
        if fx < 0.0:
            lo = x
        else:
            hi = x
        fp = f_prime(x)
        step_ok = fp > 0.0 and math.isfinite(fp)
        x_new = x - fx / fp if step_ok else math.nan
        if not (lo < x_new < hi):
            x_new = math.sqrt(lo * hi) if hi > 2.0 * lo else 0.5 * (lo + hi)
        if abs(x_new - x) <= cfg.rel_tol * x or hi - lo <= cfg.rel_tol * x:
            return x_new
        x = x_new
    raise MaxIters(f"no convergence after {cfg.max_iters} iterations (bracket [{lo!r}, {hi!r}])")
