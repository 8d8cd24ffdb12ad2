import math
import warnings

import numpy as np
import pytest

from dcmbandits.dcm import DcmInstance, optimal_list
from dcmbandits.harness import (
    FixedListPolicy,
    LowerBoundSpec,
    RegretTrace,
    aggregate,
    cascade_leading_term,
    log_grid,
    make_lb_instance,
    run_episode,
    run_many,
    run_stream,
    theorem1_leading_bound,
    theorem2_leading_bound,
    theorem3_lower_bound,
)
from dcmbandits.policies import POLICY_NAMES


def kl(p, q):
    a = 0.0 if p == 0 else p * math.log(p / q)
    b = 0.0 if p == 1 else (1 - p) * math.log((1 - p) / (1 - q))
    return a + b


def ref_theorem2(w, v, n, eps):
    """Bound written out term by term from the definition, no shared helpers."""
    w = sorted(w, reverse=True)
    K = len(v)
    alpha = (1 - w[0]) ** (K - 1)
    logs = math.log(n) + 3 * math.log(math.log(n))
    total = 0.0
    for i in range(1, K + 1):
        vnext = v[i] if i < K else 0.0
        inner = 0.0
        for e in range(i, len(w)):
            gap = w[i - 1] - w[e]
            inner += (1 + eps) * gap * (1 + math.log(1 / gap)) / kl(w[e], w[i - 1])
        total += (v[i - 1] - vnext) / alpha * inner * logs
    return total


class TestLowerBoundSpec:
    def test_paper_instance(self):
        inst = make_lb_instance(LowerBoundSpec.top(16, 4, 0.2, 0.15, 0.5))
        assert np.sum(inst.attraction == 0.2) == 4
        assert np.allclose(np.sort(inst.attraction)[:12], 0.05)
        assert inst.termination.tolist() == [0.5] * 4

    def test_zero_gap_warns(self):
        with pytest.warns(UserWarning):
            inst = make_lb_instance(LowerBoundSpec.top(6, 2, 0.3, 0.0, 0.5))
        assert np.all(inst.attraction == 0.3)

    def test_all_optimal(self):
        inst = make_lb_instance(LowerBoundSpec.top(5, 5, 0.3, 0.1, 0.5))
        assert np.all(inst.attraction == 0.3)

    def test_custom_optimal_set(self):
        inst = make_lb_instance(LowerBoundSpec(6, (5, 2), 0.3, 0.1, 0.5))
        assert set(np.flatnonzero(inst.attraction == 0.3)) == {2, 5}

    @pytest.mark.parametrize("args", [
        (4, (0, 0), 0.2, 0.1, 0.5), (4, (4,), 0.2, 0.1, 0.5), (4, (0,), 0.0, 0.0, 0.5),
        (4, (0,), 0.2, 0.3, 0.5), (4, (0,), 0.2, 0.1, 1.5), (2, (0, 1, 2), 0.2, 0.1, 0.5),
    ])
    def test_rejects(self, args):
        with pytest.raises(ValueError):
            LowerBoundSpec(*args)


class TestEpisode:
    def test_omniscient_zero(self):
        inst = make_lb_instance(LowerBoundSpec.top(8, 3, 0.3, 0.1, 0.6))
        for kind in ("realized", "expected"):
            tr = run_episode(inst, FixedListPolicy(optimal_list(inst), 8), 2000, seed=1, regret=kind)
            assert tr.final == 0 and np.all(tr.cum_regret == 0)

    @pytest.mark.parametrize("name", POLICY_NAMES)
    def test_zero_attraction(self, name):
        inst = DcmInstance(np.zeros(6), [0.5, 0.4])
        tr = run_episode(inst, name, 300, seed=0)
        assert np.all(tr.cum_regret == 0)

    def test_realized_increments(self):
        inst = make_lb_instance(LowerBoundSpec.top(8, 3, 0.3, 0.1, 0.6))
        tr = run_episode(inst, "dcm-klucb", 3000, seed=2)
        inc = np.diff(np.concatenate([[0], tr.cum_regret]))
        assert set(np.unique(inc)) <= {-1.0, 0.0, 1.0}
        assert tr.kind == "realized" and tr.init_steps == 8

    def test_expected_nondecreasing(self):
        inst = make_lb_instance(LowerBoundSpec.top(8, 3, 0.3, 0.1, 0.6))
        tr = run_episode(inst, "ranked-exp3", 3000, seed=2, regret="expected")
        assert np.all(np.diff(tr.cum_regret) >= 0) and tr.cum_regret[0] >= 0

    def test_expected_is_unbiased(self):
        # same policy and seeds; expected regret averages what realized regret measures
        inst = make_lb_instance(LowerBoundSpec.top(8, 3, 0.3, 0.1, 0.6))
        bad = FixedListPolicy(np.array([5, 6, 7]), 8)
        real = [run_episode(inst, bad, 2000, seed=s).final for s in range(30)]
        exp = run_episode(inst, bad, 2000, seed=0, regret="expected").final
        se = np.std(real, ddof=1) / np.sqrt(30)
        assert abs(np.mean(real) - exp) <= 3 * se

    def test_deterministic(self):
        inst = make_lb_instance(LowerBoundSpec.top(8, 3, 0.3, 0.1, 0.6))
        for name in POLICY_NAMES:
            a = run_episode(inst, name, 500, seed=4).cum_regret
            b = run_episode(inst, name, 500, seed=4).cum_regret
            assert np.array_equal(a, b)

    def test_exclude_init(self):
        inst = make_lb_instance(LowerBoundSpec.top(8, 3, 0.3, 0.1, 0.6))
        full = run_episode(inst, "dcm-klucb", 500, seed=4, regret="expected")
        part = run_episode(inst, "dcm-klucb", 500, seed=4, regret="expected", include_init=False)
        assert np.all(part.cum_regret[:8] == 0)
        assert part.final == pytest.approx(full.final - full.cum_regret[7])

    def test_cascade_trace(self):
        inst = make_lb_instance(LowerBoundSpec.top(8, 3, 0.3, 0.1, 0.6))
        tr = run_episode(inst, "dcm-klucb", 400, seed=1, cascade_prefix=2)
        assert tr.cum_cascade_regret.shape == (400,)
        inc = np.diff(np.concatenate([[0], tr.cum_cascade_regret]))
        assert set(np.unique(inc)) <= {-1.0, 0.0, 1.0}

    def test_factory_and_bad_kind(self):
        inst = make_lb_instance(LowerBoundSpec.top(8, 3, 0.3, 0.1, 0.6))
        tr = run_episode(inst, lambda i, n, rng: FixedListPolicy([0, 1, 2], i.L), 10, seed=0)
        assert tr.policy == "fixed"
        with pytest.raises(ValueError):
            run_episode(inst, "dcm-klucb", 10, seed=0, regret="pseudo")
        assert run_episode(inst, "dcm-klucb", 0, seed=0).horizon == 0

    def test_sublinear(self):
        inst = make_lb_instance(LowerBoundSpec.top(8, 2, 0.4, 0.2, 0.6))
        s = aggregate(run_many(inst, ["dcm-klucb"], 20_000, range(4), regret="expected")["dcm-klucb"])
        assert s.mean[-1] / 20_000 < 0.5 * s.mean[1999] / 2000

    def test_run_many_jobs_independent(self):
        inst = make_lb_instance(LowerBoundSpec.top(6, 2, 0.3, 0.1, 0.6))
        a = run_many(inst, ["dcm-klucb", "ranked-exp3"], 300, [1, 2], jobs=1)
        b = run_many(inst, ["dcm-klucb", "ranked-exp3"], 300, [1, 2], jobs=2)
        for p in a:
            assert [t.seed for t in a[p]] == [1, 2]
            for x, y in zip(a[p], b[p]):
                assert np.array_equal(x.cum_regret, y.cum_regret)


class TestAggregate:
    def _trace(self, values, seed=0):
        return RegretTrace("p", seed, np.asarray(values, dtype=float))

    def test_single(self):
        s = aggregate([self._trace([0, 1, 1])])
        assert s.mean.tolist() == [0, 1, 1] and np.all(s.sem == 0) and s.runs == 1

    def test_identical(self):
        s = aggregate([self._trace([0, 1, 2])] * 3)
        assert np.all(s.sem == 0)

    def test_values(self):
        s = aggregate([self._trace([1, 2]), self._trace([3, 6])])
        assert s.mean.tolist() == [2, 4]
        assert s.sem[1] == pytest.approx(np.std([2, 6], ddof=1) / np.sqrt(2))

    def test_errors(self):
        with pytest.raises(ValueError):
            aggregate([])
        with pytest.raises(ValueError):
            aggregate([self._trace([1, 2]), self._trace([1])])

    def test_sem_scaling(self):
        inst = make_lb_instance(LowerBoundSpec.top(6, 2, 0.3, 0.1, 0.6))
        bad = FixedListPolicy(np.array([4, 5]), 6)
        traces = [run_episode(inst, bad, 200, seed=s) for s in range(400)]
        small, big = aggregate(traces[:100]).final_sem, aggregate(traces).final_sem
        assert small / big == pytest.approx(2.0, rel=0.2)


class TestLogGrid:
    def test_shape(self):
        g = log_grid(100_000)
        assert g[0] == 1 and g[999] == 1000 and g[1000] == 1100 and g[-1] == 100_000
        assert np.all(np.diff(g) > 0)

    def test_small(self):
        assert log_grid(5).tolist() == [1, 2, 3, 4, 5]
        assert log_grid(1050)[-1] == 1050
        assert len(log_grid(0)) == 0


class TestBounds:
    def test_theorem1_duplicate_oracle(self):
        inst = make_lb_instance(LowerBoundSpec.top(16, 4, 0.2, 0.15, 0.8))
        got = theorem1_leading_bound(inst, 1e5, 0.1)
        gap = 0.15
        per = 1.1 * gap * (1 + math.log(1 / gap)) / kl(0.05, 0.2)
        ref = 0.8 / 0.8 ** 3 * 12 * per * (math.log(1e5) + 3 * math.log(math.log(1e5)))
        assert got == pytest.approx(ref, rel=1e-12)

    def test_theorem1_edges(self):
        assert theorem1_leading_bound(make_lb_instance(LowerBoundSpec.top(4, 4, 0.2, 0.1, 0.5)), 1e5, 0.1) == 0
        assert theorem1_leading_bound(make_lb_instance(LowerBoundSpec.top(8, 4, 0.2, 0.1, 0.0)), 1e5, 0.1) == 0
        with pytest.raises(ValueError):
            theorem1_leading_bound(DcmInstance([0.1, 0.2, 0.3], [0.5, 0.4]), 1e5, 0.1)
        with pytest.raises(ValueError):
            theorem1_leading_bound(make_lb_instance(LowerBoundSpec.top(8, 4, 0.2, 0.1, 0.5)), 1e5, 0.0)
        with pytest.raises(ValueError):
            theorem1_leading_bound(make_lb_instance(LowerBoundSpec.top(8, 4, 0.2, 0.1, 0.5)), 2, 0.1)

    def test_zero_gap_is_infinite(self):
        inst = DcmInstance([0.3, 0.2, 0.2], [0.5, 0.5])
        assert theorem1_leading_bound(inst, 1e5, 0.1) == math.inf

    def test_theorem2_reduces(self):
        inst = make_lb_instance(LowerBoundSpec.top(12, 3, 0.3, 0.1, 0.7))
        assert theorem2_leading_bound(inst, 1e4, 0.2) == pytest.approx(theorem1_leading_bound(inst, 1e4, 0.2), rel=1e-12)

    def test_theorem2_single_gap(self):
        w = [0.5, 0.4, 0.3, 0.2, 0.1]
        inst = DcmInstance(w, [0.6, 0.6, 0.0])
        alpha = 0.5 ** 2
        expect = 0.6 / alpha * cascade_leading_term(np.array(w), 2, 1e4, 0.1)
        assert theorem2_leading_bound(inst, 1e4, 0.1) == pytest.approx(expect, rel=1e-12)

    def test_theorem2_duplicate_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            L = int(rng.integers(3, 10))
            K = int(rng.integers(1, L))
            w = rng.random(L) * 0.9 + 0.05
            v = np.sort(rng.random(K))[::-1]
            got = theorem2_leading_bound(DcmInstance(w, v), 1e5, 0.1)
            assert got == pytest.approx(ref_theorem2(list(w), list(v), 1e5, 0.1), rel=1e-12)

    def test_theorem2_rejects(self):
        with pytest.raises(ValueError):
            theorem2_leading_bound(DcmInstance([0.1, 0.2, 0.3], [0.4, 0.5]), 1e5, 0.1)

    def test_theorem3(self):
        spec = LowerBoundSpec.top(16, 4, 0.2, 0.15, 0.5)
        ref = 0.5 * 0.8 ** 3 * 12 * 0.15 / kl(0.05, 0.2) * math.log(1e5)
        assert theorem3_lower_bound(spec, 1e5) == pytest.approx(ref, rel=1e-12)
        assert theorem3_lower_bound(spec, 1e5) == pytest.approx(56.472, abs=1e-3)

    def test_theorem3_edges(self):
        assert theorem3_lower_bound(LowerBoundSpec.top(4, 4, 0.2, 0.1, 0.5), 1e5) == 0
        assert theorem3_lower_bound(LowerBoundSpec.top(8, 4, 0.2, 0.1, 0.0), 1e5) == 0
        with pytest.raises(ValueError):
            theorem3_lower_bound(LowerBoundSpec.top(8, 4, 0.2, 0.0, 0.5), 1e5)
