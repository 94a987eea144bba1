import math

import numpy as np
import pytest

from qcert.combinatorics import StateGroup, construct_lower_bound_code, enumerate_states
from qcert.detector import (
    ClampWarning,
    CondProbTable,
    DetectorParams,
    base_click_prob,
    cond_prob_table,
    epsilon_from_dcr,
    group_outcomes,
    identity_grouping,
    ideal_set_grouping,
    noclick_grouping,
    pattern_prob,
    patterns_to_strings,
    sample_patterns,
    steady_state_click_prob,
)
from qcert.errors import (
    DimensionLimitError,
    InvalidParametersError,
    LengthMismatchError,
    PartialGroupingError,
)

IDEAL = DetectorParams(eta_det=1.0, loss=1.0, epsilon=0.0, p_ap=0.0)


def recursion_steady_state(mu, params, iters=1000):
    """Iterate the one-bin-memory recursion to convergence."""
    base = 1.0 - math.exp(-params.eta_det * params.loss * mu) + params.epsilon
    p = 0.0
    for _ in range(iters):
        p = base + params.p_ap * p
    return p


class TestBaseClick:
    def test_pulse_ln2(self):
        assert base_click_prob(True, math.log(2), IDEAL) == pytest.approx(0.5, abs=1e-15)

    def test_vacuum_zero(self):
        assert base_click_prob(False, 5.0, IDEAL) == 0.0

    def test_vacuum_dark_counts(self):
        eps = epsilon_from_dcr(80.0, 31.25e6)
        assert eps == pytest.approx(2.56e-6, rel=1e-12)
        params = DetectorParams(epsilon=eps)
        assert base_click_prob(False, 1.0, params) == pytest.approx(2.56e-6, rel=1e-12)

    def test_clamp_warns(self):
        params = DetectorParams(epsilon=0.8)
        with pytest.warns(ClampWarning):
            p = base_click_prob(True, 10.0, params)
        assert p == 1.0


class TestSteadyState:
    def test_closed_form_matches_recursion(self):
        params = DetectorParams(p_ap=0.2)
        mu = math.log(2)
        assert steady_state_click_prob(mu, params) == pytest.approx(0.625, abs=1e-12)
        assert steady_state_click_prob(mu, params) == pytest.approx(
            recursion_steady_state(mu, params), abs=1e-12
        )

    def test_no_afterpulse_collapses(self):
        params = DetectorParams(epsilon=1e-5)
        mu = 0.3
        assert steady_state_click_prob(mu, params) == pytest.approx(
            base_click_prob(True, mu, params), abs=1e-15
        )

    def test_out_of_range(self):
        params = DetectorParams(p_ap=0.2)
        # base 0.9 -> steady state 1.125 > 1
        mu = -math.log(0.1)
        with pytest.raises(InvalidParametersError):
            steady_state_click_prob(mu, params)

    def test_recursion_against_closed_form_sweep(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            p_ap = float(rng.uniform(0, 0.9))
            eps = float(rng.uniform(0, 1e-3))
            mu = float(rng.uniform(0, 0.2))
            params = DetectorParams(eta_det=0.83, epsilon=eps, p_ap=p_ap)
            closed = steady_state_click_prob(mu, params)
            assert abs(closed - recursion_steady_state(mu, params)) < 1e-12


class TestPatternProb:
    def test_factorized_ideal(self):
        p = pattern_prob("1010", "1010", math.log(2), IDEAL, boundary="cold")
        assert p == pytest.approx(0.25, abs=1e-15)

    def test_impossible_click(self):
        params = DetectorParams(p_ap=0.3)
        assert pattern_prob("1000", "0100", 1.0, params, boundary="cold") == 0.0

    def test_afterpulse_chain(self):
        params = DetectorParams(p_ap=0.2)
        p = pattern_prob("1000", "1100", math.log(2), params, boundary="cold")
        assert p == pytest.approx(0.5 * 0.2 * 0.8 * 1.0, abs=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            pattern_prob("1000", "10", 1.0, IDEAL)

    def test_vacuum_boundary_click_prob(self):
        # stationary boundary, vacuum frame: single-bin click probability is
        # p_ap * steady_state + epsilon
        params = DetectorParams(eta_det=0.83, epsilon=2.56e-6, p_ap=0.05)
        mu = 0.2
        stat = steady_state_click_prob(mu, params)
        expect = params.p_ap * stat + params.epsilon
        got = 0.0
        for first in (0, 1):
            bits = (first, 0, 0, 0)
            for rest in range(8):
                tail = tuple(rest >> (2 - i) & 1 for i in range(3))
                if first:
                    got += pattern_prob("0000", bits[:1] + tail, mu, params, "stationary")
        assert got == pytest.approx(expect, abs=1e-12)

    def test_sum_to_one_random(self):
        rng = np.random.default_rng(42)
        for _ in range(40):
            n = int(rng.integers(2, 9))
            m = int(rng.integers(1, n))
            state = [0] * n
            for pos in rng.choice(n, size=m, replace=False):
                state[pos] = 1
            params = DetectorParams(
                eta_det=float(rng.uniform(0.2, 1.0)),
                loss=float(rng.uniform(0.5, 1.0)),
                epsilon=float(rng.uniform(0, 1e-3)),
                p_ap=float(rng.uniform(0, 0.3)),
            )
            mu = float(rng.uniform(0, 2.0))
            boundary = "cold" if rng.random() < 0.5 else "stationary"
            total = sum(
                pattern_prob(state, [p >> (n - 1 - i) & 1 for i in range(n)], mu, params, boundary)
                for p in range(2**n)
            )
            assert abs(total - 1.0) < 1e-12


class TestCondProbTable:
    def test_binary_grouping_single_pulse(self):
        group = StateGroup.from_members(["10", "01"])
        mu = 0.7
        table = cond_prob_table(group, mu, IDEAL, grouping=noclick_grouping(2))
        j = table.outcomes.index("E1")
        for i in range(2):
            assert table.probs[i, j] == pytest.approx(1 - math.exp(-mu), abs=1e-12)

    def test_deterministic_limit(self):
        group = construct_lower_bound_code(4, 2, 1)
        table = cond_prob_table(group, 60.0, IDEAL, boundary="cold")
        for i, cw in enumerate(group.members):
            j = table.outcomes.index(str(cw))
            assert table.probs[i, j] == pytest.approx(1.0, abs=1e-12)

    def test_row_sums(self):
        group = construct_lower_bound_code(4, 2, 1)
        params = DetectorParams(eta_det=0.83, epsilon=2.56e-6, p_ap=0.01)
        table = cond_prob_table(group, 0.3, params)
        assert np.abs(table.probs.sum(axis=1) - 1.0).max() < 1e-12

    def test_matches_pattern_prob(self):
        group = construct_lower_bound_code(4, 2, 0)
        params = DetectorParams(eta_det=0.7, epsilon=1e-4, p_ap=0.08)
        table = cond_prob_table(group, 0.4, params, boundary="stationary")
        for i, cw in enumerate(group.members):
            for j, label in enumerate(table.outcomes):
                direct = pattern_prob(cw, label, 0.4, params, "stationary")
                assert table.probs[i, j] == pytest.approx(direct, abs=1e-13)

    def test_dimension_limit(self):
        members = ["1" + "0" * 20, "0" + "1" + "0" * 19]
        group = StateGroup.from_members(members)
        with pytest.raises(DimensionLimitError):
            cond_prob_table(group, 0.1, IDEAL)


class TestGroupOutcomes:
    def test_sixteen_to_two(self):
        group = construct_lower_bound_code(4, 2, 1)
        raw = cond_prob_table(group, 0.5, IDEAL)
        assert raw.n_outcomes == 16
        grouped = group_outcomes(raw, noclick_grouping(4))
        assert grouped.n_outcomes == 2
        assert np.allclose(grouped.probs.sum(axis=1), 1.0, atol=1e-14)
        j0 = grouped.outcomes.index("E0")
        for i in range(3):
            assert grouped.probs[i, j0] == pytest.approx(math.exp(-1.0), abs=1e-12)

    def test_identity(self):
        group = construct_lower_bound_code(4, 2, 0)
        raw = cond_prob_table(group, 0.5, IDEAL)
        same = group_outcomes(raw, identity_grouping(4))
        assert same.outcomes == raw.outcomes
        assert np.array_equal(same.probs, raw.probs)

    def test_merge_all(self):
        group = construct_lower_bound_code(4, 2, 0)
        raw = cond_prob_table(group, 0.5, IDEAL)
        from qcert.detector import OutcomeGrouping

        allg = OutcomeGrouping("all", {l: "X" for l in raw.outcomes})
        merged = group_outcomes(raw, allg)
        assert merged.n_outcomes == 1
        assert np.allclose(merged.probs, 1.0, atol=1e-14)

    def test_partial_grouping_rejected(self):
        from qcert.detector import OutcomeGrouping

        group = construct_lower_bound_code(4, 2, 0)
        raw = cond_prob_table(group, 0.5, IDEAL)
        partial = OutcomeGrouping("bad", {"0000": "E0"})
        with pytest.raises(PartialGroupingError):
            group_outcomes(raw, partial)

    def test_ideal_grouping_labels(self):
        group = construct_lower_bound_code(4, 2, 1)
        g = ideal_set_grouping(group)
        assert len(set(g.mapping.values())) == 9  # 8 ideal + other


class TestSampler:
    def test_saturated(self):
        samples = sample_patterns("1100", 80.0, IDEAL, count=50, seed=1, boundary="cold")
        assert patterns_to_strings(samples) == ["1100"] * 50

    def test_empirical_frequency(self):
        samples = sample_patterns("1000", math.log(2), IDEAL, count=10**6, seed=7, boundary="cold")
        freq = np.mean([s == "1000" for s in patterns_to_strings(samples)])
        assert abs(freq - 0.5) < 0.002  # ~4 sigma for 1e6 draws

    def test_deterministic(self):
        params = DetectorParams(eta_det=0.8, epsilon=1e-4, p_ap=0.1)
        a = sample_patterns("1010", 0.5, params, count=500, seed=123)
        b = sample_patterns("1010", 0.5, params, count=500, seed=123)
        assert np.array_equal(a, b)

    def test_backends_agree(self):
        from qcert._backend import backend, set_backend

        params = DetectorParams(eta_det=0.9, epsilon=1e-3, p_ap=0.2)
        orig = backend()
        try:
            set_backend("numpy")
            a = sample_patterns("1001", 0.8, params, count=2000, seed=99)
            if orig == "numba":
                set_backend("numba")
                b = sample_patterns("1001", 0.8, params, count=2000, seed=99)
                assert np.array_equal(a, b)
        finally:
            set_backend(orig)

    def test_matches_exact_distribution(self):
        params = DetectorParams(eta_det=0.83, epsilon=1e-3, p_ap=0.05)
        group = StateGroup.from_members(["101"])
        table = cond_prob_table(group, 0.9, params, boundary="stationary")
        count = 200_000
        samples = patterns_to_strings(
            sample_patterns("101", 0.9, params, count=count, seed=5, boundary="stationary")
        )
        from collections import Counter

        freq = Counter(samples)
        for j, label in enumerate(table.outcomes):
            p = table.probs[0, j]
            sigma = math.sqrt(max(p * (1 - p), 1e-12) / count)
            assert abs(freq.get(label, 0) / count - p) < 4 * sigma + 1e-4


def test_table_json_roundtrip():
    group = construct_lower_bound_code(4, 2, 1)
    params = DetectorParams(eta_det=0.83, epsilon=2.56e-6, p_ap=0.01)
    table = cond_prob_table(group, 0.3, params, grouping=noclick_grouping(4))
    obj = table.to_json()
    back = CondProbTable.from_json(obj)
    assert back.outcomes == table.outcomes
    assert np.array_equal(back.probs, table.probs)
    assert back.digest() == table.digest()


def test_csv_rows():
    group = StateGroup.from_members(["10", "01"])
    table = cond_prob_table(group, 0.5, IDEAL)
    rows = list(table.to_csv_rows())
    assert len(rows) == 2 * 4
    assert rows[0][0] == "10"
