"""Privacy-bounded fake prediction errors for unrated items.

A client that must send a gradient for an item it never rated fabricates
the prediction error by sampling the empirical error distribution of its
rated items, N(mu, sigma), truncated to (-alpha, alpha). The truncation
bound controls a budget

    eps_g = ln(1 / coverage(alpha, mu, sigma))

where coverage is the normal probability mass on [-alpha, alpha]; wider
bounds leak less about which items are fake (smaller density ratio) at the
cost of noisier updates. ``solve_alpha`` finds the bound for a requested
budget by bisection inside (0, alpha_max], alpha_max = max(|mu +- 2 sigma|).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_SQRT2 = math.sqrt(2.0)

# substitute for a zero sample standard deviation (e.g. a single rating)
SIGMA_FLOOR = 1e-6


class DegenerateBoundError(RuntimeError):
    """Rejection sampling cannot produce a value inside (-alpha, alpha)."""


@dataclass(frozen=True)
class ErrorStats:
    """Sample mean / population standard deviation of one user's errors."""

    mu: float
    sigma: float
    n: int


@dataclass(frozen=True)
class AlphaBound:
    """Truncation bound with the budget it actually achieves."""

    alpha: float
    eps_g_achieved: float
    alpha_max: float
    clamped: bool = False


def error_stats(errors) -> ErrorStats:
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise ValueError("need at least one observed error")
    return ErrorStats(mu=float(errors.mean()), sigma=float(errors.std()), n=int(errors.size))


def alpha_max_of(mu: float, sigma: float) -> float:
    """Largest searched bound: covers at least 95% of N(mu, sigma)."""
    return max(abs(mu + 2.0 * sigma), abs(mu - 2.0 * sigma))


def coverage(alpha: float, mu: float, sigma: float) -> float:
    """Probability mass of N(mu, sigma) on [-alpha, alpha]."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0.0:
        return 1.0 if abs(mu) < alpha else 0.0
    if mu == 0.0:
        # symmetric case in one erf call; keeps full relative precision
        # for very small alpha where the two-term difference would cancel
        return math.erf(alpha / (sigma * _SQRT2))
    hi = math.erf((alpha - mu) / (sigma * _SQRT2))
    lo = math.erf((-alpha - mu) / (sigma * _SQRT2))
    return min(max(0.5 * (hi - lo), 0.0), 1.0)


def epsilon_g_of(alpha: float, mu: float, sigma: float) -> float:
    """Budget achieved by truncating at alpha: ln(1 / coverage)."""
    c = coverage(alpha, mu, sigma)
    if c <= 0.0:
        raise ValueError(f"coverage is zero at alpha={alpha} (mu={mu}, sigma={sigma})")
    return -math.log(c)


def solve_alpha(eps_g: float, mu: float, sigma: float, delta: float = 1e-6) -> AlphaBound:
    """Find alpha whose achieved budget lands in [eps_g - delta, eps_g].

    The achieved budget decreases strictly in alpha, from +inf at 0+ down
    to its minimum at alpha_max. Budgets below that minimum cannot be met
    inside the search interval; the bound is then clamped to alpha_max and
    the achieved value reported (``clamped=True``).
    """
    if eps_g <= 0:
        raise ValueError(f"eps_g must be positive, got {eps_g}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")

    amax = alpha_max_of(mu, sigma)
    eps_at_max = epsilon_g_of(amax, mu, sigma)
    if eps_g <= eps_at_max:
        return AlphaBound(alpha=amax, eps_g_achieved=eps_at_max, alpha_max=amax, clamped=True)

    lo, hi = 0.0, amax
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        c = coverage(mid, mu, sigma)
        if c <= 0.0:
            lo = mid
            continue
        achieved = -math.log(c)
        if achieved > eps_g:
            lo = mid
        elif achieved < eps_g - delta:
            hi = mid
        else:
            return AlphaBound(alpha=mid, eps_g_achieved=achieved, alpha_max=amax)
    raise ArithmeticError(
        f"bisection failed to land in [eps_g-delta, eps_g] for eps_g={eps_g}, delta={delta}"
    )


def sample_fake_error(
    mu: float,
    sigma: float,
    alpha: float,
    rng: np.random.Generator,
    max_rejections: int = 1_000_000,
) -> float:
    """One N(mu, sigma) draw, re-drawn until it falls inside (-alpha, alpha)."""
    for _ in range(max_rejections):
        x = rng.normal(mu, sigma)
        if -alpha < x < alpha:
            return float(x)
    raise DegenerateBoundError(
        f"{max_rejections} consecutive rejections: alpha={alpha} is incompatible "
        f"with mu={mu}, sigma={sigma}"
    )


def sample_fake_errors(
    mu: float,
    sigma: float,
    alpha: float,
    n: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Batched rejection sampling; same distribution as n independent
    ``sample_fake_error`` calls but drawn chunk-wise."""
    if n == 0:
        return np.empty(0, dtype=np.float64)
    accept = coverage(alpha, mu, sigma) if sigma > 0 else 1.0
    if accept <= 0.0:
        raise DegenerateBoundError(
            f"zero acceptance probability: alpha={alpha}, mu={mu}, sigma={sigma}"
        )
    out = np.empty(n, dtype=np.float64)
    filled = 0
    budget = max(1_000_000, min(int(10 * n / accept), 1_000_000_000))
    while filled < n:
        chunk = min(budget, 8_000_000, max(64, int(1.5 * (n - filled) / accept)))
        draws = rng.normal(mu, sigma, size=chunk)
        kept = draws[(draws > -alpha) & (draws < alpha)]
        take = min(len(kept), n - filled)
        out[filled : filled + take] = kept[:take]
        filled += take
        budget -= chunk
        if budget <= 0 and filled < n:
            raise DegenerateBoundError(
                f"rejection budget exhausted: alpha={alpha}, mu={mu}, sigma={sigma}"
            )
    return out
