"""Dependent click model: instances, reward functions and the user simulator.

Items are 0-based indices into the attraction vector. Positions inside an
action list are 0-based array slots as well, except for :func:`last_click`,
which reports the 1-based rank of the last clicked slot (the length of the
prefix whose clicks reveal attraction draws).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numba
import numpy as np

__all__ = [
    "DcmInstance",
    "StepOutcome",
    "DcmEnvironment",
    "check_action",
    "or_value",
    "expected_reward",
    "cascade_reward",
    "sample_step",
    "last_click",
    "observed_prefix",
    "optimal_list",
]


def _as_probabilities(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-d vector")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError(f"{name} entries must lie in [0, 1]")
    return arr


@dataclass(frozen=True, eq=False)
class DcmInstance:
    """Ground-truth DCM with ``L`` items and ``K`` positions.

    ``order_known`` records that positions are indexed by decreasing
    termination probability, which is the only knowledge of the termination
    vector the learning policies rely on. Left as ``None`` it is inferred.
    """

    attraction: np.ndarray
    termination: np.ndarray
    order_known: bool | None = None

    def __post_init__(self):
        w = _as_probabilities(self.attraction, "attraction")
        v = _as_probabilities(self.termination, "termination")
        if len(v) < 1:
            raise ValueError("need at least one position")
        if len(v) > len(w):
            raise ValueError(f"K={len(v)} exceeds L={len(w)}")
        descending = bool(np.all(np.diff(v) <= 0))
        if self.order_known and not descending:
            raise ValueError("order_known is set but termination is not non-increasing")
        if self.order_known is None:
            object.__setattr__(self, "order_known", descending)
        w.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "attraction", w)
        object.__setattr__(self, "termination", v)

    @property
    def L(self) -> int:
        return len(self.attraction)

    @property
    def K(self) -> int:
        return len(self.termination)

    def __eq__(self, other):
        if not isinstance(other, DcmInstance):
            return NotImplemented
        return (
            self.order_known == other.order_known
            and np.array_equal(self.attraction, other.attraction)
            and np.array_equal(self.termination, other.termination)
        )

    def __repr__(self):
        return f"DcmInstance(L={self.L}, K={self.K}, order_known={self.order_known})"

    def truncated(self, n_positions: int) -> "DcmInstance":
        """Same items, only the first ``n_positions`` positions."""
        return DcmInstance(self.attraction.copy(), self.termination[:n_positions].copy())

    def to_text(self) -> str:
        """Human-readable ``key = value`` document; floats round-trip exactly."""
        lines = [
            f"L = {self.L}",
            f"K = {self.K}",
            "attraction = " + " ".join(repr(float(x)) for x in self.attraction),
            "termination = " + " ".join(repr(float(x)) for x in self.termination),
            f"order_known = {'true' if self.order_known else 'false'}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DcmInstance":
        fields = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"line {lineno}: expected 'key = value'")
            fields[key.strip()] = value.strip()
        missing = {"L", "K", "attraction", "termination"} - fields.keys()
        if missing:
            raise ValueError(f"missing fields: {sorted(missing)}")
        w = [float(x) for x in fields["attraction"].split()]
        v = [float(x) for x in fields["termination"].split()]
        if len(w) != int(fields["L"]) or len(v) != int(fields["K"]):
            raise ValueError("L/K do not match the vector lengths")
        flag = fields.get("order_known")
        if flag is not None:
            if flag.lower() not in ("true", "false"):
                raise ValueError(f"order_known must be true or false, got {flag!r}")
            flag = flag.lower() == "true"
        return cls(w, v, order_known=flag)


@dataclass(frozen=True)
class StepOutcome:
    """One user interaction. Only ``clicks`` may be shown to a learner."""

    clicks: np.ndarray
    reward: int
    attraction_draw: np.ndarray = field(repr=False)
    termination_draw: np.ndarray = field(repr=False)


def check_action(action, n_items: int, n_positions: int) -> np.ndarray:
    """Validate a ranked list and return it as an int array."""
    a = np.asarray(action)
    if a.ndim != 1 or len(a) != n_positions:
        raise ValueError(f"action must have length {n_positions}")
    if not np.issubdtype(a.dtype, np.integer):
        raise ValueError("action entries must be integers")
    if np.any(a < 0) or np.any(a >= n_items):
        raise ValueError(f"action entries must lie in [0, {n_items})")
    if len(np.unique(a)) != len(a):
        raise ValueError("action contains duplicate items")
    return a.astype(np.int64)


def or_value(x) -> float:
    """Probability that at least one of independent events with probabilities x fires."""
    x = _as_probabilities(x, "x")
    return float(1.0 - np.prod(1.0 - x))


def expected_reward(action, w, v) -> float:
    """Probability that the list ``action`` satisfies the user."""
    w = _as_probabilities(w, "w")
    v = _as_probabilities(v, "v")
    a = check_action(action, len(w), len(v))
    return float(1.0 - np.prod(1.0 - v * w[a]))


def cascade_reward(action, w, i: int) -> float:
    """Or-function over the attraction of the first ``i`` listed items."""
    w = _as_probabilities(w, "w")
    a = np.asarray(action, dtype=np.int64)
    if not 1 <= i <= len(a):
        raise ValueError(f"prefix length must lie in [1, {len(a)}]")
    a = check_action(a, len(w), len(a))
    return float(1.0 - np.prod(1.0 - w[a[:i]]))


@numba.njit(cache=True)
def _scan(action, attracted, terminates, clicks):
    """Walk the list top-down; fill ``clicks`` and return the realized reward."""
    clicks[:] = 0
    for k in range(action.shape[0]):
        if attracted[action[k]]:
            clicks[k] = 1
            if terminates[k]:
                return 1
    return 0


@numba.njit(cache=True)
def _realized_reward(action, attracted, terminates):
    for k in range(action.shape[0]):
        if attracted[action[k]] and terminates[k]:
            return 1
    return 0


@numba.njit(cache=True)
def _expected_value(action, w, v):
    miss = 1.0
    for k in range(action.shape[0]):
        miss *= 1.0 - v[k] * w[action[k]]
    return 1.0 - miss


def sample_step(instance: DcmInstance, action, rng: np.random.Generator) -> StepOutcome:
    """Draw one user from ``instance`` and let them scan ``action``."""
    a = check_action(action, instance.L, instance.K)
    attracted = rng.random(instance.L) < instance.attraction
    terminates = rng.random(instance.K) < instance.termination
    clicks = np.zeros(instance.K, dtype=np.int8)
    reward = _scan(a, attracted, terminates, clicks)
    return StepOutcome(clicks, int(reward), attracted, terminates)


class DcmEnvironment:
    """Stream of users from one instance, drawn in blocks for speed.

    Attraction and termination draws do not depend on the displayed list, so
    pre-drawing them in blocks gives the same process as :func:`sample_step`.
    """

    def __init__(self, instance: DcmInstance, rng: np.random.Generator, block: int = 4096):
        self.instance = instance
        self.rng = rng
        self.block = block
        self._i = block
        self._w = None
        self._v = None

    def draw(self):
        """Next pair of hidden (attraction, termination) draws."""
        if self._i == self.block:
            inst = self.instance
            self._w = self.rng.random((self.block, inst.L)) < inst.attraction
            self._v = self.rng.random((self.block, inst.K)) < inst.termination
            self._i = 0
        i = self._i
        self._i += 1
        return self._w[i], self._v[i]

    def step(self, action: np.ndarray) -> StepOutcome:
        attracted, terminates = self.draw()
        clicks = np.zeros(self.instance.K, dtype=np.int8)
        reward = _scan(action, attracted, terminates, clicks)
        return StepOutcome(clicks, int(reward), attracted, terminates)


def last_click(clicks: Sequence[int]) -> int | None:
    """1-based rank of the last click, or ``None`` when nothing was clicked."""
    c = np.asarray(clicks)
    hits = np.flatnonzero(c)
    if len(hits) == 0:
        return None
    return int(hits[-1]) + 1


def observed_prefix(clicks: Sequence[int]) -> int:
    """Number of leading positions whose clicks equal the attraction draws."""
    last = last_click(clicks)
    return len(clicks) if last is None else last


def _rank(values: np.ndarray) -> np.ndarray:
    # descending; stable, so ties go to the lowest index
    return np.argsort(-np.asarray(values, dtype=np.float64), kind="stable")


def place_by_rank(scores, termination_order: Iterable[int], n_positions: int) -> np.ndarray:
    """Put the item with the k-th largest score at the k-th most terminating position."""
    order = np.asarray(termination_order, dtype=np.int64)
    top = _rank(scores)[:n_positions]
    action = np.empty(n_positions, dtype=np.int64)
    action[order] = top
    return action


def optimal_list(instance: DcmInstance) -> np.ndarray:
    """The list maximizing expected reward (ties to the lowest item / position index)."""
    return place_by_rank(instance.attraction, _rank(instance.termination), instance.K)
