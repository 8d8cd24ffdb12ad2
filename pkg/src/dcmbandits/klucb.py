"""Bernoulli KL divergence and KL-UCB upper confidence bounds.

The public functions validate their inputs. The ``_``-prefixed kernels are
numba-compiled and used on the policies' hot path.
"""
from __future__ import annotations

import math

import numba
import numpy as np

__all__ = ["kl_bernoulli", "exploration_budget", "klucb_upper", "klucb_upper_all"]

TOLERANCE = 1e-9
MAX_ITER = 100


@numba.njit(cache=True)
def _kl(p, q):
    if p == q:
        return 0.0
    out = 0.0
    if p > 0.0:
        if q <= 0.0:
            return math.inf
        out += p * math.log(p / q)
    if p < 1.0:
        if q >= 1.0:
            return math.inf
        out += (1.0 - p) * math.log((1.0 - p) / (1.0 - q))
    return max(out, 0.0)


@numba.njit(cache=True)
def _budget(t):
    if t < 3:
        return max(math.log(t), 0.0)
    return math.log(t) + 3.0 * math.log(math.log(t))


@numba.njit(cache=True)
def _upper(p, pulls, budget, lo):
    """Largest q in [p, 1] with pulls * kl(p, q) <= budget, by bisection.

    ``lo`` is an optional known-feasible starting point (pass -1 for none).
    When it is given, the tangent of the convex map q -> kl(p, q) at ``lo``
    yields an upper bracket, which is usually very tight.
    """
    if p >= 1.0:
        return 1.0
    if p < lo < 1.0 and pulls * _kl(p, lo) <= budget:
        slope = (lo - p) / (lo * (1.0 - lo))
        hi = lo + (budget / pulls - _kl(p, lo)) / slope + 1e-12
    else:
        lo = p
        # Pinsker: kl(p, q) >= 2 (q - p)^2
        hi = p + math.sqrt(budget / (2.0 * pulls)) + 1e-12
    if hi >= 1.0 or pulls * _kl(p, hi) <= budget:
        hi = 1.0
    for _ in range(MAX_ITER):
        if hi - lo <= TOLERANCE:
            break
        mid = 0.5 * (lo + hi)
        if pulls * _kl(p, mid) <= budget:
            lo = mid
        else:
            hi = mid
    return lo


@numba.njit(cache=True)
def _upper_all(means, counts, t, out, fresh):
    """UCBs of all arms into ``out``; arms with count 0 get 1.

    Where ``fresh[i]`` is False the arm's statistics are unchanged since
    ``out[i]`` was computed at an earlier step, so ``out[i]`` is still
    feasible (the budget never shrinks) and seeds the bisection.
    """
    budget = _budget(t)
    for i in range(means.shape[0]):
        if counts[i] == 0:
            out[i] = 1.0
        else:
            seed = -1.0 if fresh[i] else out[i]
            out[i] = _upper(means[i], counts[i], budget, seed)
        fresh[i] = False


def _check_probability(x: float, name: str) -> float:
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {x}")
    return x


def kl_bernoulli(p: float, q: float) -> float:
    """KL divergence between Bernoulli(p) and Bernoulli(q), with 0 log 0 = 0."""
    return float(_kl(_check_probability(p, "p"), _check_probability(q, "q")))


def exploration_budget(t: float) -> float:
    """``log t + 3 log log t`` for t >= 3, clamped to ``max(log t, 0)`` below."""
    if t < 1:
        raise ValueError(f"step index must be >= 1, got {t}")
    return float(_budget(float(t)))


def klucb_upper(w_hat: float, pulls: float, t: float) -> float:
    """KL-UCB index of an arm with empirical mean ``w_hat`` after ``pulls`` observations."""
    w_hat = _check_probability(w_hat, "w_hat")
    if pulls < 1:
        raise ValueError(f"pulls must be >= 1, got {pulls}")
    return float(_upper(w_hat, float(pulls), exploration_budget(t), -1.0))


def klucb_upper_all(means, counts, t: float) -> np.ndarray:
    """Vectorized :func:`klucb_upper`; arms never observed get index 1."""
    means = np.ascontiguousarray(means, dtype=np.float64)
    counts = np.ascontiguousarray(counts, dtype=np.float64)
    if means.shape != counts.shape or means.ndim != 1:
        raise ValueError("means and counts must be 1-d arrays of equal length")
    if np.any(means < 0) or np.any(means > 1) or np.any(counts < 0):
        raise ValueError("means must lie in [0, 1] and counts be nonnegative")
    if t < 1:
        raise ValueError(f"step index must be >= 1, got {t}")
    out = np.empty_like(means)
    _upper_all(means, counts, float(t), out, np.ones(len(means), dtype=np.bool_))
    return out
