"""Randomized checks of the or-function inequalities behind the regret bounds.

Each ``check_lemma*`` returns a margin that is nonnegative exactly when the
inequality holds. Inputs may be single vectors or stacks of vectors along
the last axis. ``or_fn`` can be swapped out to confirm that the suites
catch a broken implementation.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dcm import expected_reward, optimal_list, DcmInstance
from .klucb import exploration_budget, kl_bernoulli, klucb_upper
from .policies import select_list

TOLERANCE = 1e-12
TINY = 1e-9


def or_batch(x: np.ndarray) -> np.ndarray:
    return 1.0 - np.prod(1.0 - x, axis=-1)


def _arr(x, name):
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        raise ValueError(f"{name} must be a vector")
    if np.any(a < 0) or np.any(a > 1):
        raise ValueError(f"{name} entries must lie in [0, 1]")
    return a


def _ordered_pair(x, y):
    x, y = _arr(x, "x"), _arr(y, "y")
    if x.shape != y.shape:
        raise ValueError("x and y must have the same shape")
    if np.any(x < y):
        raise ValueError("need x >= y coordinatewise")
    return x, y


def _out(m):
    return float(m) if np.ndim(m) == 0 else m


def check_lemma1(x, y, or_fn: Callable = or_batch):
    """V(x) - V(y) <= sum(x) - sum(y) for x >= y."""
    x, y = _ordered_pair(x, y)
    m = x.sum(-1) - y.sum(-1) - (or_fn(x) - or_fn(y))
    return _out(m)


def check_lemma2(x, y, p_max, or_fn: Callable = or_batch):
    """alpha (sum(x) - sum(y)) <= V(x) - V(y) for p_max >= x >= y, alpha = (1 - p_max)^(K-1)."""
    x, y = _ordered_pair(x, y)
    p_max = np.asarray(p_max, dtype=np.float64)
    if np.any(p_max < 0) or np.any(p_max > 1):
        raise ValueError("p_max must lie in [0, 1]")
    cap = p_max[..., None] if p_max.ndim else p_max
    if np.any(x > cap):
        raise ValueError("entries exceed p_max")
    alpha = (1.0 - p_max) ** (x.shape[-1] - 1)
    m = or_fn(x) - or_fn(y) - alpha * (x.sum(-1) - y.sum(-1))
    return _out(m)


def check_lemma3(x, c, or_fn: Callable = or_batch):
    """Sorting x into decreasing order gains at most the linear gain, for decreasing c."""
    x, c = _arr(x, "x"), _arr(c, "c")
    if x.shape != c.shape:
        raise ValueError("x and c must have the same shape")
    if np.any(np.diff(c, axis=-1) > 0):
        raise ValueError("c must be in decreasing order")
    xs = -np.sort(-x, axis=-1)
    linear = (c * xs).sum(-1) - (c * x).sum(-1)
    m = linear - (or_fn(c * xs) - or_fn(c * x))
    return _out(m)


def check_lemma4(x, y, gamma, or_fn: Callable = or_batch):
    """V(gamma x) - V(gamma y) >= gamma (V(x) - V(y)) for x >= y."""
    x, y = _ordered_pair(x, y)
    g = np.asarray(gamma, dtype=np.float64)
    if np.any(g < 0) or np.any(g > 1):
        raise ValueError("gamma must lie in [0, 1]")
    gv = g[..., None] if g.ndim else g
    m = or_fn(gv * x) - or_fn(gv * y) - g * (or_fn(x) - or_fn(y))
    return _out(m)


def _entries(rng: np.random.Generator, shape, cap) -> np.ndarray:
    """Half uniform on [0, cap], half drawn from {0, tiny, cap, uniform}."""
    cap = np.asarray(cap, dtype=np.float64)
    capb = np.broadcast_to(cap[..., None] if cap.ndim else cap, shape)
    u = rng.random(shape) * capb
    kind = rng.integers(0, 4, size=shape)
    edge = np.choose(kind, [np.zeros(shape), np.minimum(TINY, capb), capb, u])
    heavy = (rng.random(shape[:-1]) < 0.5)[..., None]
    return np.where(heavy, edge, rng.random(shape) * capb)


def _scalars(rng, n):
    s = rng.random(n)
    kind = rng.integers(0, 5, size=n)
    return np.choose(kind, [s, s, np.zeros(n), np.ones(n), np.full(n, TINY)])


def sample_pairs(rng, n, K, cap=1.0):
    a = _entries(rng, (n, K), cap)
    b = _entries(rng, (n, K), cap)
    return np.maximum(a, b), np.minimum(a, b)


@dataclass
class LemmaResult:
    lemma: int
    K: int
    samples: int
    worst_margin: float
    worst_input: dict = field(repr=False)

    @property
    def passed(self) -> bool:
        return self.worst_margin >= -TOLERANCE


def run_lemma(lemma: int, K: int, samples: int, rng: np.random.Generator,
              or_fn: Callable = or_batch) -> LemmaResult:
    if lemma == 1:
        x, y = sample_pairs(rng, samples, K)
        m = check_lemma1(x, y, or_fn)
        inputs = {"x": x, "y": y}
    elif lemma == 2:
        p_max = np.maximum(_scalars(rng, samples), TINY)
        x, y = sample_pairs(rng, samples, K, cap=p_max)
        m = check_lemma2(x, y, p_max, or_fn)
        inputs = {"x": x, "y": y, "p_max": p_max}
    elif lemma == 3:
        x = _entries(rng, (samples, K), 1.0)
        c = -np.sort(-_entries(rng, (samples, K), 1.0), axis=-1)
        m = check_lemma3(x, c, or_fn)
        inputs = {"x": x, "c": c}
    elif lemma == 4:
        x, y = sample_pairs(rng, samples, K)
        gamma = _scalars(rng, samples)
        m = check_lemma4(x, y, gamma, or_fn)
        inputs = {"x": x, "y": y, "gamma": gamma}
    else:
        raise ValueError(f"no lemma {lemma}")
    i = int(np.argmin(m))
    worst = {k: (v[i].tolist() if np.ndim(v) > 1 else float(v[i])) for k, v in inputs.items()}
    return LemmaResult(lemma, K, samples, float(m[i]), worst)


def run_lemma_suites(samples: int = 10_000, Ks=range(1, 9), seed: int = 0,
                     or_fn: Callable = or_batch) -> list[LemmaResult]:
    rng = np.random.default_rng(seed)
    return [run_lemma(lemma, K, samples, rng, or_fn) for lemma in (1, 2, 3, 4) for K in Ks]


# -- oracle equivalence ----------------------------------------------------


def brute_force_argmax(w, v) -> np.ndarray:
    """Best K-permutation by exhaustive enumeration of expected reward."""
    w = np.asarray(w, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    best, best_value = None, -1.0
    for perm in itertools.permutations(range(len(w)), len(v)):
        value = expected_reward(perm, w, v)
        if value > best_value:
            best, best_value = perm, value
    return np.array(best)


@dataclass
class OracleResult:
    name: str
    trials: int
    mismatches: list

    @property
    def passed(self) -> bool:
        return not self.mismatches


def check_argmax_oracles(trials: int = 1000, seed: int = 0) -> list[OracleResult]:
    """Compare select_list and optimal_list to enumeration on small random problems."""
    rng = np.random.default_rng(seed)
    sel, opt = [], []
    for _ in range(trials):
        L = int(rng.integers(1, 7))
        K = int(rng.integers(1, min(L, 3) + 1))
        ucb = rng.random(L)
        order = rng.permutation(K)
        # any strictly decreasing values laid out along ``order``
        v_tilde = np.empty(K)
        v_tilde[order] = np.sort(rng.random(K))[::-1]
        if not np.array_equal(select_list(ucb, order), brute_force_argmax(ucb, v_tilde)):
            sel.append({"ucb": ucb.tolist(), "order": order.tolist()})
        w = rng.random(L)
        v = rng.random(K)
        inst = DcmInstance(w, v)
        if not np.array_equal(optimal_list(inst), brute_force_argmax(w, v)):
            opt.append({"w": w.tolist(), "v": v.tolist()})
    return [OracleResult("select_list", trials, sel), OracleResult("optimal_list", trials, opt)]


def check_klucb_bisection(trials: int = 10_000, seed: int = 0) -> OracleResult:
    """The returned index is feasible, and infeasible 1e-6 further right."""
    rng = np.random.default_rng(seed)
    bad = []
    for _ in range(trials):
        w = float(rng.choice([0.0, 1.0, rng.random()], p=[0.1, 0.1, 0.8]))
        pulls = int(rng.integers(1, 10_000))
        t = int(rng.integers(1, 1_000_000))
        q = klucb_upper(w, pulls, t)
        b = exploration_budget(t)
        ok = q >= w and pulls * kl_bernoulli(w, q) <= b
        if q < 1.0:
            ok = ok and pulls * kl_bernoulli(w, min(q + 1e-6, 1.0)) > b
        if not ok:
            bad.append({"w_hat": w, "pulls": pulls, "t": t, "q": q})
    return OracleResult("klucb_upper", trials, bad)
