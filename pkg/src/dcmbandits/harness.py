"""Problem generators, the simulation loop, regret accounting and regret bounds."""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dcm import DcmEnvironment, DcmInstance, _expected_value, _realized_reward, optimal_list
from .klucb import kl_bernoulli
from .policies import Policy, make_policy

log = logging.getLogger(__name__)

__all__ = [
    "LowerBoundSpec",
    "RegretTrace",
    "RegretSummary",
    "FixedListPolicy",
    "make_lb_instance",
    "run_stream",
    "run_episode",
    "run_many",
    "aggregate",
    "log_grid",
    "theorem1_leading_bound",
    "theorem2_leading_bound",
    "theorem3_lower_bound",
]

# keys for independent per-run random substreams
_ENV_STREAM = 0
_POLICY_STREAM = 1


def run_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (environment, policy) generators for one run."""
    env = np.random.default_rng(np.random.SeedSequence([seed, _ENV_STREAM]))
    pol = np.random.default_rng(np.random.SeedSequence([seed, _POLICY_STREAM]))
    return env, pol


@dataclass(frozen=True)
class LowerBoundSpec:
    """Parameters of the lower-bound problem family.

    ``optimal`` lists the items (0-based) with attraction ``p``; every other
    item has ``p - delta``; all ``K = len(optimal)`` positions terminate
    with probability ``gamma``.
    """

    L: int
    optimal: tuple[int, ...]
    p: float
    delta: float
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "optimal", tuple(int(e) for e in self.optimal))
        K = len(self.optimal)
        if not 1 <= K <= self.L:
            raise ValueError(f"need 1 <= |optimal| <= L, got {K} and L={self.L}")
        if len(set(self.optimal)) != K or min(self.optimal) < 0 or max(self.optimal) >= self.L:
            raise ValueError("optimal items must be distinct indices in [0, L)")
        if not 0.0 < self.p <= 1.0:
            raise ValueError("p must lie in (0, 1]")
        if self.delta < 0 or self.p - self.delta < 0:
            raise ValueError("need 0 <= delta <= p")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")

    @classmethod
    def top(cls, L: int, K: int, p: float, delta: float, gamma: float) -> "LowerBoundSpec":
        """The usual member of the family, with the first ``K`` items optimal."""
        return cls(L, tuple(range(K)), p, delta, gamma)

    @property
    def K(self) -> int:
        return len(self.optimal)


def make_lb_instance(spec: LowerBoundSpec) -> DcmInstance:
    if spec.delta == 0:
        warnings.warn("delta = 0: all items are equally attractive", stacklevel=2)
    w = np.full(spec.L, spec.p - spec.delta)
    w[list(spec.optimal)] = spec.p
    return DcmInstance(w, np.full(spec.K, spec.gamma))


class FixedListPolicy(Policy):
    """Always shows the same list; with the optimal list it is the omniscient baseline."""

    name = "fixed"

    def __init__(self, action, n_items):
        action = np.asarray(action, dtype=np.int64)
        super().__init__(n_items, len(action))
        self.action = action

    def select(self):
        return self.action

    def update(self, action, clicks):
        pass


@dataclass
class RegretTrace:
    """Cumulative regret after each of the ``n`` steps of one run.

    With ``kind="realized"`` every increment is the difference of the binary
    rewards of the optimal and the played list on the same user, so it lies
    in {-1, 0, 1} and the curve need not be monotone. ``kind="expected"``
    uses the expected rewards instead and is nondecreasing.
    """

    policy: str
    seed: int
    cum_regret: np.ndarray
    init_steps: int = 0
    kind: str = "realized"
    cascade_prefix: int | None = None
    cum_cascade_regret: np.ndarray | None = None

    @property
    def horizon(self) -> int:
        return len(self.cum_regret)

    @property
    def final(self) -> float:
        return float(self.cum_regret[-1]) if len(self.cum_regret) else 0.0


def _build_policy(policy, instance: DcmInstance, n: int, rng) -> Policy:
    if isinstance(policy, Policy):
        return policy
    if isinstance(policy, str):
        return make_policy(policy, instance.L, instance.K, horizon=max(n, 1), rng=rng)
    # factory: callable(instance, horizon, rng) -> Policy
    return policy(instance, n, rng)


def run_stream(instance: DcmInstance, policy: Policy, n: int, env: DcmEnvironment,
               regret: str = "realized", cascade_prefix: int | None = None):
    """Drive ``policy`` for ``n`` steps; return per-step regret increments.

    The policy only ever sees the click vector of each step.
    """
    if regret not in ("realized", "expected"):
        raise ValueError(f"regret must be 'realized' or 'expected', got {regret!r}")
    best = optimal_list(instance)
    w, v = instance.attraction, instance.termination
    best_value = _expected_value(best, w, v)
    inc = np.zeros(n)
    cinc = np.zeros(n) if cascade_prefix else None
    if cascade_prefix:
        best_head = best[:cascade_prefix]
    clicks = None
    for t in range(n):
        action = policy.step(clicks)
        out = env.step(action)
        clicks = out.clicks
        if regret == "realized":
            inc[t] = _realized_reward(best, out.attraction_draw, out.termination_draw) - out.reward
        else:
            # best is optimal; negative values are rounding noise
            inc[t] = max(best_value - _expected_value(action, w, v), 0.0)
        if cascade_prefix:
            wd = out.attraction_draw
            cinc[t] = float(wd[best_head].any()) - float(wd[action[:cascade_prefix]].any())
    return inc, cinc


def run_episode(instance: DcmInstance, policy, n: int, seed: int, *,
                include_init: bool = True, regret: str = "realized",
                cascade_prefix: int | None = None) -> RegretTrace:
    """One seeded run of ``n`` steps.

    ``policy`` is a policy identifier, a :class:`Policy` instance, or a
    factory ``(instance, horizon, rng) -> Policy``. The seed determines the
    users and the policy's own randomness through separate substreams.
    With ``include_init=False`` the regret of the policy's initialization
    steps is not counted.
    """
    if n < 0:
        raise ValueError("horizon must be nonnegative")
    env_rng, pol_rng = run_streams(seed)
    pol = _build_policy(policy, instance, n, pol_rng)
    inc, cinc = run_stream(instance, pol, n, DcmEnvironment(instance, env_rng),
                           regret=regret, cascade_prefix=cascade_prefix)
    init = min(pol.init_steps, n)
    if not include_init:
        inc[:init] = 0.0
        if cinc is not None:
            cinc[:init] = 0.0
    return RegretTrace(
        policy=pol.name if not isinstance(policy, str) else policy,
        seed=seed,
        cum_regret=np.cumsum(inc),
        init_steps=init,
        kind=regret,
        cascade_prefix=cascade_prefix,
        cum_cascade_regret=None if cinc is None else np.cumsum(cinc),
    )


def _episode_job(args):
    instance, policy, n, seed, kwargs = args
    return run_episode(instance, policy, n, seed, **kwargs)


def run_many(instance: DcmInstance, policies: Sequence[str], n: int, seeds: Iterable[int],
             jobs: int = 1, **kwargs) -> dict[str, list[RegretTrace]]:
    """Run every policy once per seed; results are ordered by seed.

    Runs share nothing, so with ``jobs > 1`` they fan out over worker
    processes; the output does not depend on ``jobs``.
    """
    seeds = list(seeds)
    tasks = [(instance, p, n, s, kwargs) for p in policies for s in seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            traces = list(pool.map(_episode_job, tasks))
    else:
        traces = [_episode_job(task) for task in tasks]
    out: dict[str, list[RegretTrace]] = {p: [] for p in policies}
    for (_, p, _, _, _), tr in zip(tasks, traces):
        out[p].append(tr)
    return out


@dataclass
class RegretSummary:
    mean: np.ndarray
    sem: np.ndarray
    runs: int

    @property
    def final_mean(self) -> float:
        return float(self.mean[-1]) if len(self.mean) else 0.0

    @property
    def final_sem(self) -> float:
        return float(self.sem[-1]) if len(self.sem) else 0.0


def aggregate(traces: Sequence[RegretTrace]) -> RegretSummary:
    """Pointwise mean and standard error of equally long traces."""
    if not traces:
        raise ValueError("cannot aggregate an empty set of traces")
    n = {tr.horizon for tr in traces}
    if len(n) != 1:
        raise ValueError(f"traces have different horizons: {sorted(n)}")
    data = np.vstack([tr.cum_regret for tr in traces])
    mean = data.mean(axis=0)
    if len(traces) == 1:
        sem = np.zeros_like(mean)
    else:
        sem = data.std(axis=0, ddof=1) / math.sqrt(len(traces))
    return RegretSummary(mean, sem, len(traces))


def log_grid(n: int) -> np.ndarray:
    """Steps kept in trace files: every step up to 1000, then every 100th, plus ``n``."""
    head = np.arange(1, min(n, 1000) + 1)
    tail = np.arange(1100, n + 1, 100)
    grid = np.concatenate([head, tail])
    if n > 0 and grid[-1] != n:
        grid = np.append(grid, n)
    return grid.astype(np.int64)


# -- regret bounds ---------------------------------------------------------
# Leading logarithmic terms only; the additive constants depend on
# quantities that are not computed here.


def _log_factor(n: float) -> float:
    if n < 3:
        raise ValueError("bounds need n >= 3 so that log log n is defined and positive")
    return math.log(n) + 3.0 * math.log(math.log(n))


def _gap_term(w_e: float, w_i: float, eps: float) -> float:
    gap = w_i - w_e
    if gap <= 0:
        log.warning("zero gap between items with attraction %g and %g: bound is infinite", w_e, w_i)
        return math.inf
    return (1.0 + eps) * gap * (1.0 + math.log(1.0 / gap)) / kl_bernoulli(w_e, w_i)


def cascade_leading_term(w_sorted: np.ndarray, i: int, n: float, eps: float) -> float:
    """Leading term of the n-step cascade regret bound on the first ``i`` positions."""
    w_i = w_sorted[i - 1]
    total = sum(_gap_term(w_e, w_i, eps) for w_e in w_sorted[i:])
    return total * _log_factor(n)


def _alpha(w_sorted: np.ndarray, K: int) -> float:
    return (1.0 - w_sorted[0]) ** (K - 1)


def theorem1_leading_bound(instance: DcmInstance, n: float, eps: float) -> float:
    """Upper bound on the regret of dcmKL-UCB when all termination probabilities equal gamma."""
    v = instance.termination
    if np.any(v != v[0]):
        raise ValueError("termination probabilities must all be equal")
    if eps <= 0:
        raise ValueError("eps must be positive")
    gamma, K = float(v[0]), instance.K
    if gamma == 0.0 or instance.L == K:
        return 0.0
    w = np.sort(instance.attraction)[::-1]
    alpha = _alpha(w, K)
    return gamma / alpha * cascade_leading_term(w, K, n, eps)


def theorem2_leading_bound(instance: DcmInstance, n: float, eps: float) -> float:
    """Upper bound for non-increasing termination probabilities."""
    v = instance.termination
    if np.any(np.diff(v) > 0):
        raise ValueError("termination probabilities must be non-increasing")
    if eps <= 0:
        raise ValueError("eps must be positive")
    K = instance.K
    w = np.sort(instance.attraction)[::-1]
    alpha = _alpha(w, K)
    steps = v - np.append(v[1:], 0.0)
    total = 0.0
    for i in range(1, K + 1):
        if steps[i - 1] == 0.0 or i == instance.L:
            continue
        total += steps[i - 1] / alpha * cascade_leading_term(w, i, n, eps)
    return total


def theorem3_lower_bound(spec: LowerBoundSpec, n: float) -> float:
    """Asymptotic lower bound on the regret of any consistent policy, evaluated at ``n``."""
    if spec.delta == 0:
        raise ValueError("lower bound needs a positive gap")
    alpha = (1.0 - spec.p) ** (spec.K - 1)
    kl = kl_bernoulli(spec.p - spec.delta, spec.p)
    return spec.gamma * alpha * (spec.L - spec.K) * spec.delta / kl * math.log(n)
