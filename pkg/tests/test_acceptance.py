"""Desk-scale acceptance checks.

Every test records a one-line verdict that conftest prints at the end of the
run. Experiments shared by several criteria are session fixtures. The
bandit comparisons use the expected-regret estimator, which has the same
mean as the realized regret at a fraction of the variance.
"""
import time

import numpy as np
import pytest

from dcmbandits.clicklog import estimate_dcm, generate_sessions, replay, synthetic_query
from dcmbandits.dcm import DcmEnvironment, DcmInstance, expected_reward
from dcmbandits.harness import (
    LowerBoundSpec,
    aggregate,
    make_lb_instance,
    run_many,
    theorem1_leading_bound,
    theorem3_lower_bound,
)
from dcmbandits.theory import check_argmax_oracles, run_lemma_suites

from oracles import exact_examined_rates

pytestmark = pytest.mark.acceptance

N = 100_000
RUNS = 20
SEEDS = range(RUNS)


def _sweep_final(L, K, delta, gamma, p=0.2):
    inst = make_lb_instance(LowerBoundSpec.top(L, K, p, delta, gamma))
    traces = run_many(inst, ["dcm-klucb"], N, SEEDS, regret="expected")["dcm-klucb"]
    s = aggregate(traces)
    return s.final_mean, s.final_sem


def _above(hi, lo):
    """hi's lower 2-SE edge clears lo's upper 2-SE edge."""
    return hi[0] - 2 * hi[1] > lo[0] + 2 * lo[1]


def _fmt(r):
    return f"{r[0]:.1f}+-{r[1]:.1f}"


@pytest.fixture(scope="session")
def lb_runs():
    inst = make_lb_instance(LowerBoundSpec.top(16, 4, 0.2, 0.15, 0.5))
    t0 = time.perf_counter()
    traces = run_many(inst, ["dcm-klucb", "first-click", "last-click", "ranked-klucb"], N, SEEDS,
                      regret="expected")
    elapsed = time.perf_counter() - t0
    return inst, {p: aggregate(tr) for p, tr in traces.items()}, elapsed


class _SweepCache(dict):
    def __missing__(self, key):
        self[key] = _sweep_final(*key)
        return self[key]


@pytest.fixture(scope="session")
def sweep():
    return _SweepCache()


def test_c1_lemma_suites(record):
    t0 = time.perf_counter()
    results = run_lemma_suites(10_000, Ks=range(1, 9), seed=0)
    elapsed = time.perf_counter() - t0
    worst = min(r.worst_margin for r in results)
    ok = all(r.passed for r in results) and len(results) == 32 and elapsed < 10
    record(1, ok, f"32 suites x 1e4 samples, worst margin {worst:.2e}, {elapsed:.1f}s (< 10s)")
    assert ok


def test_c2_oracle_equivalence(record):
    t0 = time.perf_counter()
    results = check_argmax_oracles(1000, seed=0)
    elapsed = time.perf_counter() - t0
    bad = sum(len(r.mismatches) for r in results)
    ok = bad == 0 and elapsed < 30
    record(2, ok, f"select_list/optimal_list vs enumeration on 1000 instances: {bad} mismatches, {elapsed:.1f}s")
    assert ok


def test_c3_reward_identity(record):
    rng = np.random.default_rng(3)
    samples = 100_000
    worst_z = 0.0
    for _ in range(20):
        L = int(rng.integers(2, 11))
        K = int(rng.integers(1, L + 1))
        inst = DcmInstance(rng.random(L), rng.random(K))
        action = rng.permutation(L)[:K]
        env = DcmEnvironment(inst, np.random.default_rng(int(rng.integers(2**32))))
        total = sum(env.step(action).reward for _ in range(samples))
        f = expected_reward(action, inst.attraction, inst.termination)
        se = np.sqrt(max(f * (1 - f), 1e-12) / samples)
        worst_z = max(worst_z, abs(total / samples - f) / se)
    ok = worst_z <= 3
    record(3, ok, f"20 instances x 1e5 samples, worst |mean - f| = {worst_z:.2f} SE (<= 3)")
    assert ok


def test_c4_feedback_variants_ordering(record, lb_runs):
    _, s, elapsed = lb_runs
    d, f, l = (s[p].final_mean for p in ("dcm-klucb", "first-click", "last-click"))
    ok = d < f and d < l
    record(4, ok, f"dcm {d:.1f} < first-click {f:.1f}, last-click {l:.1f} "
                  f"(all four policies took {elapsed:.0f}s)")
    assert ok


def test_c5_ranked_baseline_gap(record, lb_runs):
    _, s, _ = lb_runs
    d, r = s["dcm-klucb"].final_mean, s["ranked-klucb"].final_mean
    ok = r >= 2 * d
    record(5, ok, f"ranked-klucb {r:.1f} vs dcm {d:.1f}: ratio {r / d:.2f} (>= 2)")
    assert ok


def test_c6_problem_size_trends(record, sweep):
    g = 0.8
    by_L = [sweep[(L, 4, 0.15, g)] for L in (16, 32, 64)]
    by_K = [sweep[(16, K, 0.15, g)] for K in (2, 4, 8)]
    by_d = [sweep[(16, 4, 0.15, g)], sweep[(16, 4, 0.075, g)]]
    ok_L = _above(by_L[1], by_L[0]) and _above(by_L[2], by_L[1])
    ok_K = _above(by_K[0], by_K[1]) and _above(by_K[1], by_K[2])
    ok_d = _above(by_d[1], by_d[0])
    ok = ok_L and ok_K and ok_d
    record(6, ok, "L 16/32/64: " + ", ".join(map(_fmt, by_L))
           + "; K 2/4/8: " + ", ".join(map(_fmt, by_K))
           + "; delta .15/.075: " + ", ".join(map(_fmt, by_d)))
    assert ok


def test_c7_termination_trend(record, sweep):
    res = [sweep[(16, 4, 0.15, g)] for g in (0.2, 0.4, 0.6, 0.8, 1.0)]
    ok = all(_above(b, a) for a, b in zip(res, res[1:]))
    record(7, ok, "gamma .2..1.0: " + ", ".join(map(_fmt, res)))
    assert ok


def test_c8_bound_sandwich(record, lb_runs):
    inst, s, _ = lb_runs
    spec = LowerBoundSpec.top(16, 4, 0.2, 0.15, 0.5)
    lower = theorem3_lower_bound(spec, N)
    upper = 3 * theorem1_leading_bound(inst, N, 0.1)
    emp = s["dcm-klucb"].final_mean
    ok = lower <= emp <= upper
    record(8, ok, f"{lower:.1f} <= {emp:.1f} <= {upper:.1f}")
    assert ok


def test_c9_log_growth(record, lb_runs):
    _, s, _ = lb_runs
    mean = s["dcm-klucb"].mean
    late, early = mean[N - 1] / N, mean[10_000 - 1] / 10_000
    ok = late < early / 2
    record(9, ok, f"regret per step {late:.2e} at 1e5 vs {early:.2e} at 1e4 (ratio {late / early:.2f} < 0.5)")
    assert ok


def test_c10_clicklog_pipeline(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    estimates, worst = [], 0.0
    for q in range(20):
        inst, display = synthetic_query(rng)
        assert np.argmax(inst.termination) == 0
        est = estimate_dcm(list(generate_sessions(inst, display, 100_000, seed=q, query=q)))
        oracle, _ = exact_examined_rates(inst, display)
        got = np.array([est.attraction_of(int(e)) for e in display])
        worst = max(worst, float(np.abs(got - oracle).max()))
        estimates.append(est)
    policies = ["dcm-klucb", "ranked-klucb", "ranked-exp3"]
    result = replay(estimates, policies, 10_000, range(5), positions=5, regret="expected")
    final = {p: result.summary[p].final_mean for p in policies}
    elapsed = time.perf_counter() - t0
    ok = (worst <= 0.01 and final["dcm-klucb"] < min(final["ranked-klucb"], final["ranked-exp3"])
          and elapsed < 600)
    record(10, ok, f"estimator error {worst:.4f} (<= 0.01); replay regret "
                   + ", ".join(f"{p} {v:.1f}" for p, v in final.items()) + f"; {elapsed:.0f}s")
    assert ok
