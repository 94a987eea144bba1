import itertools
import math

import numpy as np
import pytest

from qcert.combinatorics import (
    ClickPattern,
    Codeword,
    ConfigurationSpec,
    GramMatrix,
    StateGroup,
    coincidence,
    constant_gram,
    construct_lower_bound_code,
    enumerate_states,
    gram_matrix,
    hamming_from_s,
    ideal_outcome_set,
    lower_bound_size,
    max_constant_s_group,
    outcome_count_closed_form,
    overlap_delta,
    subset_count,
)
from qcert.errors import (
    DegenerateGroupError,
    InvalidParametersError,
    LengthMismatchError,
    NotPsdError,
    SearchLimitError,
)


def brute_force_max_group(n, m, s):
    """Independent oracle: scan all codeword subsets for the largest constant-s one."""
    words = enumerate_states(n, m)
    best = 1
    for size in range(2, len(words) + 1):
        found = False
        for combo in itertools.combinations(words, size):
            if all(coincidence(a, b) == s for a, b in itertools.combinations(combo, 2)):
                found = True
                break
        if found:
            best = size
        else:
            break
    return best


class TestCodeword:
    def test_roundtrip(self):
        cw = Codeword((1, 1, 0, 0))
        assert str(cw) == "1100"
        assert cw.n == 4
        assert cw.weight == 2
        assert cw.support() == (0, 1)

    def test_weight_bounds(self):
        with pytest.raises(InvalidParametersError):
            Codeword((0, 0, 0, 0))
        with pytest.raises(InvalidParametersError):
            Codeword((1, 1, 1, 1))
        with pytest.raises(InvalidParametersError):
            Codeword((1,))

    def test_pattern_any_weight(self):
        assert ClickPattern((0, 0, 0, 0)).weight == 0
        assert ClickPattern((1, 1, 1, 1)).weight == 4


class TestEnumerate:
    def test_counts(self):
        assert len(enumerate_states(4, 2)) == 6
        assert len(enumerate_states(5, 3)) == 10

    def test_set_one_order(self):
        assert [str(c) for c in enumerate_states(4, 1)] == ["1000", "0100", "0010", "0001"]

    def test_distinct_lexicographic(self):
        words = enumerate_states(6, 3)
        assert len(set(words)) == math.comb(6, 3)
        supports = [w.support() for w in words]
        assert supports == sorted(supports)

    def test_invalid(self):
        with pytest.raises(InvalidParametersError):
            enumerate_states(4, 4)
        with pytest.raises(InvalidParametersError):
            enumerate_states(4, 0)


class TestCoincidence:
    def test_examples(self):
        assert coincidence("1100", "1010") == 1
        assert coincidence("1100", "0011") == 0
        assert coincidence("1100", "1100") == 2

    def test_symmetric(self):
        for a, b in itertools.combinations(enumerate_states(5, 2), 2):
            assert coincidence(a, b) == coincidence(b, a)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            coincidence("110", "1100")


def test_hamming_from_s():
    assert hamming_from_s(2, 1) == 2
    assert hamming_from_s(3, 3) == 0
    assert hamming_from_s(3, 1) == 4
    with pytest.raises(InvalidParametersError):
        hamming_from_s(2, 3)


def test_subset_count():
    assert subset_count(4, 2) == 2
    assert subset_count(4, 1) == 1
    assert subset_count(4, 3) == 1
    with pytest.raises(InvalidParametersError):
        subset_count(3, 3)


class TestLowerBoundCode:
    def test_known_groups(self):
        g = construct_lower_bound_code(4, 2, 1)
        assert sorted(str(m) for m in g.members) == ["1001", "1010", "1100"]
        g = construct_lower_bound_code(4, 2, 0)
        assert sorted(str(m) for m in g.members) == ["0011", "1100"]
        g = construct_lower_bound_code(4, 3, 1)
        assert g.size == 1

    def test_degenerate(self):
        with pytest.raises(DegenerateGroupError):
            construct_lower_bound_code(4, 2, 2)

    def test_all_small_configs(self):
        for n in range(3, 11):
            for m in range(1, n):
                for s in range(0, m):
                    g = construct_lower_bound_code(n, m, s)
                    assert g.size == lower_bound_size(n, m, s)
                    for a, b in itertools.combinations(g.members, 2):
                        assert coincidence(a, b) == s


class TestMaxGroup:
    def test_examples(self):
        assert max_constant_s_group(4, 2, 1)[0] == 3
        assert max_constant_s_group(4, 3, 2)[0] == 4
        assert max_constant_s_group(4, 1, 0)[0] == 4

    def test_against_brute_force(self):
        for n in range(3, 7):
            for m in range(1, n):
                for s in range(0, m):
                    size, group = max_constant_s_group(n, m, s)
                    assert size == brute_force_max_group(n, m, s), (n, m, s)
                    assert group.size == size

    def test_dominates_construction(self):
        for n in range(3, 11):
            for m in range(1, n):
                for s in range(0, m):
                    size, _ = max_constant_s_group(n, m, s)
                    assert size >= lower_bound_size(n, m, s), (n, m, s)

    def test_limit(self):
        with pytest.raises(SearchLimitError):
            max_constant_s_group(17, 2, 1)


class TestIdealOutcomes:
    def test_set_one(self):
        group = StateGroup.from_members(enumerate_states(4, 1))
        assert len(ideal_outcome_set(group)) == 5

    def test_subset_one(self):
        group = construct_lower_bound_code(4, 2, 1)
        pats = ideal_outcome_set(group)
        assert len(pats) == 8
        assert len(pats) == outcome_count_closed_form(3, 2, 1)

    def test_single_state(self):
        group = StateGroup.from_members(["1100"])
        assert len(ideal_outcome_set(group)) == 4

    def test_zero_pattern_included(self):
        group = construct_lower_bound_code(5, 2, 0)
        pats = ideal_outcome_set(group)
        assert ClickPattern((0,) * 5) in pats

    def test_union_count_shared_prefix(self):
        # members sharing an identical coincidence set: union has
        # C*2^m - (C-1)*2^s distinct patterns
        for (n, m, s) in [(4, 2, 1), (6, 3, 1), (6, 2, 0), (8, 3, 2)]:
            g = construct_lower_bound_code(n, m, s)
            if 2 * m > n:
                continue  # construction shares the prefix only for 2m <= n
            expect = g.size * 2**m - (g.size - 1) * 2**s
            assert len(ideal_outcome_set(g)) == expect


def test_overlap_delta():
    assert overlap_delta(1.0, 1, 0) == pytest.approx(math.exp(-1), abs=1e-15)
    assert overlap_delta(7.3, 3, 3) == 1.0
    assert overlap_delta(0.5, 2, 1) == pytest.approx(math.exp(-0.5), abs=1e-15)
    with pytest.raises(InvalidParametersError):
        overlap_delta(1.0, 1, 2)
    with pytest.raises(InvalidParametersError):
        overlap_delta(-0.1, 1, 0)


def test_overlap_delta_monotone():
    mus = np.linspace(0.0, 3.0, 13)
    for m, s in [(1, 0), (2, 1), (3, 0), (4, 2)]:
        vals = [overlap_delta(mu, m, s) for mu in mus]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
        assert (vals[0] == 1.0) == (mus[0] * (m - s) == 0)
    # decreasing in (m - s) at fixed mu
    at_mu = [overlap_delta(0.7, m, 0) for m in range(1, 5)]
    assert all(a > b for a, b in zip(at_mu, at_mu[1:]))


class TestGram:
    def test_two_states(self):
        g = gram_matrix(construct_lower_bound_code(4, 2, 0), 0.5)
        d = math.exp(-1.0)
        assert np.allclose(g.entries, [[1, d], [d, 1]], atol=1e-15)

    def test_constant_offdiag(self):
        g = gram_matrix(construct_lower_bound_code(4, 2, 1), 1.0)
        off = g.entries[~np.eye(3, dtype=bool)]
        assert np.all(off == math.exp(-1.0))

    def test_mu_zero_all_ones(self):
        g = gram_matrix(construct_lower_bound_code(4, 2, 1), 0.0)
        assert np.array_equal(g.entries, np.ones((3, 3)))

    def test_exact_symmetry_and_diag(self):
        g = gram_matrix(construct_lower_bound_code(6, 3, 1), 0.37)
        assert np.array_equal(g.entries, g.entries.T)
        assert np.array_equal(np.diag(g.entries), np.ones(g.size))

    def test_not_psd_rejected(self):
        bad = np.array([[1.0, 0.9, 0.1], [0.9, 1.0, 0.9], [0.1, 0.9, 1.0]])
        if np.linalg.eigvalsh(bad)[0] < -1e-10:
            with pytest.raises(NotPsdError):
                GramMatrix(bad)

    def test_constant_gram(self):
        g = constant_gram(3, 0.5)
        assert g.entries[0, 1] == 0.5
        assert g.entries[1, 1] == 1.0


class TestStateGroup:
    def test_constant_s_enforced(self):
        with pytest.raises(InvalidParametersError):
            StateGroup(
                ConfigurationSpec(4, 2, 1),
                (Codeword("1100"), Codeword("0011")),
            )

    def test_json_roundtrip(self):
        g = construct_lower_bound_code(5, 2, 1)
        obj = g.to_json()
        assert obj["members"][0] == "11000"
        g2 = StateGroup.from_json(obj)
        assert g2 == g
