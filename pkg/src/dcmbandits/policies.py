"""Learning policies for DCM bandits.

Every policy follows the same protocol: ``step(clicks)`` folds in the clicks
on the list it returned last time (``None`` on the first call) and returns
the next list. The harness owns the interaction loop.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .dcm import place_by_rank
from .klucb import _upper_all

__all__ = [
    "POLICY_NAMES",
    "PolicyState",
    "Policy",
    "DcmKLUCB",
    "RankedKLUCB",
    "RankedExp3",
    "select_list",
    "first_click_filter",
    "last_click_filter",
    "exp3_rate",
    "make_policy",
]

POLICY_NAMES = ("dcm-klucb", "first-click", "last-click", "ranked-klucb", "ranked-exp3")


def select_list(ucbs, termination_order) -> np.ndarray:
    """Item with the k-th largest UCB goes to the k-th most terminating position."""
    ucbs = np.asarray(ucbs, dtype=np.float64)
    order = np.asarray(termination_order, dtype=np.int64)
    K = len(order)
    if K > len(ucbs):
        raise ValueError("more positions than items")
    if sorted(order.tolist()) != list(range(K)):
        raise ValueError("termination_order must be a permutation of range(K)")
    return place_by_rank(ucbs, order, K)


def first_click_filter(clicks) -> np.ndarray:
    c = np.asarray(clicks)
    out = np.zeros_like(c)
    hits = np.flatnonzero(c)
    if len(hits):
        out[hits[0]] = 1
    return out


def last_click_filter(clicks) -> np.ndarray:
    c = np.asarray(clicks)
    out = np.zeros_like(c)
    hits = np.flatnonzero(c)
    if len(hits):
        out[hits[-1]] = 1
    return out


_FILTERS = {None: None, "first": first_click_filter, "last": last_click_filter}


@numba.njit(cache=True)
def _prefix(clicks):
    for k in range(clicks.shape[0] - 1, -1, -1):
        if clicks[k]:
            return k + 1
    return clicks.shape[0]


@numba.njit(cache=True)
def _fold_prefix(action, clicks, counts, wins, means, fresh):
    n = _prefix(clicks)
    for k in range(n):
        e = action[k]
        counts[e] += 1.0
        wins[e] += clicks[k]
        means[e] = wins[e] / counts[e]
        fresh[e] = True
    return n


@numba.njit(cache=True)
def _dcm_select(means, counts, t, ucb, fresh, order, action):
    _upper_all(means, counts, t, ucb, fresh)
    ranked = np.argsort(-ucb, kind="mergesort")
    for k in range(order.shape[0]):
        action[order[k]] = ranked[k]


@dataclass
class PolicyState:
    """Per-item statistics of dcmKL-UCB.

    ``means * counts`` is integral because attraction observations are binary;
    ``wins`` holds that integer explicitly.
    """

    counts: np.ndarray
    wins: np.ndarray
    means: np.ndarray
    termination_order: np.ndarray
    t: int = 0

    @classmethod
    def empty(cls, n_items: int, termination_order) -> "PolicyState":
        return cls(
            counts=np.zeros(n_items),
            wins=np.zeros(n_items),
            means=np.zeros(n_items),
            termination_order=np.asarray(termination_order, dtype=np.int64),
        )


class Policy:
    """Base class; subclasses implement :meth:`select` and :meth:`update`."""

    name = "policy"
    init_steps = 0

    def __init__(self, n_items: int, n_positions: int, termination_order=None):
        if not 1 <= n_positions <= n_items:
            raise ValueError(f"need 1 <= K <= L, got K={n_positions}, L={n_items}")
        self.L = n_items
        self.K = n_positions
        if termination_order is None:
            termination_order = np.arange(n_positions)
        order = np.asarray(termination_order, dtype=np.int64)
        if sorted(order.tolist()) != list(range(n_positions)):
            raise ValueError("termination_order must be a permutation of range(K)")
        self.order = order
        self._last = None

    def select(self) -> np.ndarray:
        raise NotImplementedError

    def update(self, action: np.ndarray, clicks: np.ndarray) -> None:
        raise NotImplementedError

    def step(self, clicks=None) -> np.ndarray:
        if clicks is not None:
            clicks = np.asarray(clicks)
            if clicks.shape != (self.K,):
                raise ValueError(f"feedback must have length {self.K}, got {clicks.shape}")
            if self._last is None:
                raise ValueError("feedback received before any list was chosen")
            self.update(self._last, clicks)
        self._last = self.select()
        return self._last


class DcmKLUCB(Policy):
    """dcmKL-UCB, optionally fed filtered clicks (the First-/Last-Click heuristics).

    The first ``L`` steps put item ``i`` on top and take its click as the
    first attraction sample; the rest of that list is the next items in
    cyclic order and is ignored.
    """

    def __init__(self, n_items, n_positions, termination_order=None, click_filter=None):
        super().__init__(n_items, n_positions, termination_order)
        if click_filter not in _FILTERS:
            raise ValueError(f"unknown click filter {click_filter!r}")
        self.click_filter = click_filter
        self._filter = _FILTERS[click_filter]
        self.name = {None: "dcm-klucb", "first": "first-click", "last": "last-click"}[click_filter]
        self.init_steps = n_items
        self.state = PolicyState.empty(n_items, self.order)
        self._ucb = np.ones(n_items)
        self._fresh = np.ones(n_items, dtype=np.bool_)

    @property
    def initialized(self) -> bool:
        return self.state.t >= self.L

    def ucbs(self) -> np.ndarray:
        return self._ucb.copy()

    def select(self) -> np.ndarray:
        st = self.state
        st.t += 1
        action = np.empty(self.K, dtype=np.int64)
        if st.t <= self.L:
            action[:] = (st.t - 1 + np.arange(self.K)) % self.L
        else:
            _dcm_select(st.means, st.counts, float(st.t), self._ucb, self._fresh, self.order, action)
        return action

    def update(self, action, clicks) -> None:
        st = self.state
        if self._filter is not None:
            clicks = self._filter(clicks)
        clicks = np.asarray(clicks, dtype=np.float64)
        if st.t <= self.L:
            e = action[0]
            st.counts[e] += 1.0
            st.wins[e] += clicks[0]
            st.means[e] = st.wins[e] / st.counts[e]
            self._fresh[e] = True
        else:
            _fold_prefix(action, clicks, st.counts, st.wins, st.means, self._fresh)


@numba.njit(cache=True)
def _ranked_klucb_select(means, counts, t, ucb, fresh, order, action, proposed, dup):
    L = means.shape[1]
    placed = np.zeros(L, dtype=np.bool_)
    for j in range(order.shape[0]):
        k = order[j]
        _upper_all(means[k], counts[k], t, ucb[k], fresh[k])
        best = 0
        for e in range(1, L):
            if ucb[k, e] > ucb[k, best]:
                best = e
        proposed[k] = best
        dup[k] = placed[best]
        if dup[k]:
            best = -1
            for e in range(L):
                if not placed[e] and (best < 0 or ucb[k, e] > ucb[k, best]):
                    best = e
        action[k] = best
        placed[best] = True


@numba.njit(cache=True)
def _ranked_klucb_fold(action, proposed, dup, clicks, counts, wins, means, fresh):
    n = _prefix(clicks)
    for k in range(action.shape[0]):
        if dup[k]:
            e = proposed[k]
            r = 0.0
        elif k < n:
            e = action[k]
            r = clicks[k]
        else:
            continue
        counts[k, e] += 1.0
        wins[k, e] += r
        means[k, e] = wins[k, e] / counts[k, e]
        fresh[k, e] = True


class RankedKLUCB(Policy):
    """One KL-UCB bandit per position, filled greedily from the top.

    A position whose favourite item is already shown above displays its
    best remaining item instead and credits its favourite with reward 0.
    Unobserved arms have index 1, so exploration starts lazily.
    """

    name = "ranked-klucb"

    def __init__(self, n_items, n_positions, termination_order=None):
        super().__init__(n_items, n_positions, termination_order)
        shape = (n_positions, n_items)
        self.counts = np.zeros(shape)
        self.wins = np.zeros(shape)
        self.means = np.zeros(shape)
        self._ucb = np.ones(shape)
        self._fresh = np.ones(shape, dtype=np.bool_)
        self.proposed = np.zeros(n_positions, dtype=np.int64)
        self.duplicate = np.zeros(n_positions, dtype=np.bool_)
        self.t = 0

    def select(self) -> np.ndarray:
        self.t += 1
        action = np.empty(self.K, dtype=np.int64)
        _ranked_klucb_select(
            self.means, self.counts, float(self.t), self._ucb, self._fresh,
            self.order, action, self.proposed, self.duplicate,
        )
        return action

    def update(self, action, clicks) -> None:
        _ranked_klucb_fold(
            action, self.proposed, self.duplicate, np.asarray(clicks, dtype=np.float64),
            self.counts, self.wins, self.means, self._fresh,
        )


def exp3_rate(n_items: int, horizon: int) -> float:
    """Exploration rate for Exp3 with a known horizon."""
    if n_items < 2:
        return 1.0
    return min(1.0, math.sqrt(n_items * math.log(n_items) / ((math.e - 1.0) * horizon)))


@numba.njit(cache=True)
def _exp3_probs(logw, eta, out):
    L = logw.shape[0]
    top = logw.max()
    total = 0.0
    for e in range(L):
        out[e] = math.exp(logw[e] - top)
        total += out[e]
    for e in range(L):
        out[e] = (1.0 - eta) * out[e] / total + eta / L


@numba.njit(cache=True)
def _ranked_exp3_select(logw, eta, uniforms, order, action, proposed, dup, prob):
    K, L = logw.shape
    placed = np.zeros(L, dtype=np.bool_)
    p = np.empty(L)
    for j in range(order.shape[0]):
        k = order[j]
        _exp3_probs(logw[k], eta, p)
        u = uniforms[j]
        pick = L - 1
        acc = 0.0
        for e in range(L):
            acc += p[e]
            if u < acc:
                pick = e
                break
        proposed[k] = pick
        prob[k] = p[pick]
        dup[k] = placed[pick]
        if dup[k]:
            pick = -1
            for e in range(L):
                if not placed[e] and (pick < 0 or p[e] > p[pick]):
                    pick = e
        action[k] = pick
        placed[pick] = True


@numba.njit(cache=True)
def _ranked_exp3_fold(action, dup, prob, clicks, logw, eta):
    L = logw.shape[1]
    n = _prefix(clicks)
    for k in range(n):
        # duplicates earn reward 0, which leaves Exp3 weights unchanged
        if not dup[k] and clicks[k] > 0:
            logw[k, action[k]] += eta / L * clicks[k] / prob[k]


class RankedExp3(Policy):
    """One Exp3 bandit per position, duplicates resolved as in :class:`RankedKLUCB`.

    Weights are kept as logarithms so that long runs cannot overflow.
    """

    name = "ranked-exp3"

    def __init__(self, n_items, n_positions, horizon, rng, termination_order=None, eta=None):
        super().__init__(n_items, n_positions, termination_order)
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.eta = exp3_rate(n_items, horizon) if eta is None else float(eta)
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        self.rng = rng
        self.log_weights = np.zeros((n_positions, n_items))
        self.proposed = np.zeros(n_positions, dtype=np.int64)
        self.duplicate = np.zeros(n_positions, dtype=np.bool_)
        self._prob = np.zeros(n_positions)

    def distribution(self, position: int) -> np.ndarray:
        out = np.empty(self.L)
        _exp3_probs(self.log_weights[position], self.eta, out)
        return out

    def select(self) -> np.ndarray:
        action = np.empty(self.K, dtype=np.int64)
        _ranked_exp3_select(
            self.log_weights, self.eta, self.rng.random(self.K), self.order,
            action, self.proposed, self.duplicate, self._prob,
        )
        return action

    def update(self, action, clicks) -> None:
        _ranked_exp3_fold(
            action, self.duplicate, self._prob, np.asarray(clicks, dtype=np.float64),
            self.log_weights, self.eta,
        )


def make_policy(name: str, n_items: int, n_positions: int, horizon: int = 1,
                rng: np.random.Generator | None = None, termination_order=None) -> Policy:
    """Build a policy from its CLI identifier."""
    if name == "dcm-klucb":
        return DcmKLUCB(n_items, n_positions, termination_order)
    if name == "first-click":
        return DcmKLUCB(n_items, n_positions, termination_order, click_filter="first")
    if name == "last-click":
        return DcmKLUCB(n_items, n_positions, termination_order, click_filter="last")
    if name == "ranked-klucb":
        return RankedKLUCB(n_items, n_positions, termination_order)
    if name == "ranked-exp3":
        if rng is None:
            raise ValueError("ranked-exp3 needs a random generator")
        return RankedExp3(n_items, n_positions, horizon, rng, termination_order)
    raise ValueError(f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}")
