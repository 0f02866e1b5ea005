import math

import numpy as np
import pytest

from qlinksim import analytic, oracle
from qlinksim.oracle import LatticeKind

from _reference import brute_expected_trials, brute_link_availability

# Frozen outputs of the independent forward-propagation reference in
# tests/_reference.py (residual mass < 1e-15 at truncation).
BRUTE_EXPECTED_TRIALS = {
    (0.5, 2, 2): 2.8,
    (0.3, 2, 2): 5.634451019066265,
    (0.5, 3, 3): 3.330328977016614,
    (0.3, 3, 3): 7.448726558408559,
    (0.5, 2, 5): 2.680851063829736,
    (0.3, 2, 5): 4.926376377811435,
    (0.2, 2, 1): 165.0 / 13.0,
    (0.7, 3, 2): 2.0589873591934165,
    (0.4, 2, 3): 3.618735083532144,
}


class TestExactExpectedTrials:
    def test_against_frozen_brute_force(self):
        for (p, m, n_star), ref in BRUTE_EXPECTED_TRIALS.items():
            val = oracle.exact_expected_trials(p, m, n_star)
            assert val == pytest.approx(ref, rel=1e-9), (p, m, n_star)

    def test_against_live_brute_force(self):
        # re-derive two entries at test time from the rules alone
        for p, m, n_star in [(0.45, 2, 2), (0.6, 3, 1)]:
            ref = brute_expected_trials(p, m, n_star)
            assert oracle.exact_expected_trials(p, m, n_star) == (
                pytest.approx(ref, rel=1e-9)
            )

    def test_no_memory_is_geometric_in_joint_success(self):
        for p in (0.2, 0.5, 0.8):
            for m in (2, 3):
                assert oracle.exact_expected_trials(p, m, 0) == (
                    pytest.approx(p**-m, rel=1e-10)
                )

    def test_single_link_any_cutoff(self):
        for n_star in (0, 3, 100):
            assert oracle.exact_expected_trials(0.4, 1, n_star) == 2.5

    def test_large_cutoff_approaches_infinite_memory(self):
        inf_val = analytic.expected_trials_infinite_memory(0.5, 2)
        assert oracle.exact_expected_trials(0.5, 2, 50) == (
            pytest.approx(inf_val, abs=1e-6)
        )

    def test_monotone_in_cutoff_between_known_limits(self):
        p, m = 0.4, 2
        lo = analytic.expected_trials_infinite_memory(p, m)
        hi = analytic.expected_trials_no_memory(p, m)
        prev = hi
        for n_star in range(0, 12):
            val = oracle.exact_expected_trials(p, m, n_star)
            assert lo - 1e-9 <= val <= hi + 1e-9
            assert val <= prev + 1e-9
            prev = val

    def test_state_budget_enforced(self):
        with pytest.raises(ValueError, match="budget"):
            oracle.exact_expected_trials(0.5, 10, 50)

    def test_validation(self):
        with pytest.raises(ValueError):
            oracle.exact_expected_trials(0.0, 2, 1)
        with pytest.raises(ValueError):
            oracle.exact_expected_trials(0.5, 2, -1)


class TestLinkAvailability:
    def test_closed_form_before_first_reset(self):
        for p in (0.2, 0.6):
            for n_star in (2, 5):
                for n in range(1, n_star + 2):
                    assert oracle.link_availability(p, n_star, n) == (
                        pytest.approx(1 - (1 - p) ** n, rel=1e-12)
                    )

    def test_no_memory_stationary_from_first_trial(self):
        for n in (1, 2, 7, 40):
            assert oracle.link_availability(0.6, 0, n) == pytest.approx(0.6)

    def test_hand_enumerated_three_trials(self):
        # p=1/2, cutoff 1: of the 2^3 attempt outcome paths, live-at-3 mass
        # sums to 5/8
        assert oracle.link_availability(0.5, 1, 3) == pytest.approx(0.625)

    def test_against_live_brute_force(self):
        for p, n_star, n in [(0.3, 2, 10), (0.7, 1, 6), (0.5, 4, 9)]:
            assert oracle.link_availability(p, n_star, n) == (
                pytest.approx(brute_link_availability(p, n_star, n), rel=1e-12)
            )

    def test_curve_matches_pointwise(self):
        curve = oracle.link_availability_curve(0.35, 2, 12)
        for i in range(12):
            assert curve[i] == pytest.approx(
                oracle.link_availability(0.35, 2, i + 1), rel=1e-12
            )

    def test_converges_to_renewal_stationary_value(self):
        # long-run availability (n*+1)p / (1 + n*p)
        p, n_star = 0.3, 4
        stat = (n_star + 1) * p / (1 + n_star * p)
        assert oracle.link_availability(p, n_star, 500) == pytest.approx(stat, abs=1e-9)

    def test_validation(self):
        with pytest.raises(ValueError):
            oracle.link_availability(0.5, 1, 0)
        with pytest.raises(ValueError):
            oracle.link_availability(1.5, 1, 2)


class TestExactExpectedLinks:
    def test_factorizes_over_links(self):
        assert oracle.exact_expected_links(0.5, 1, 2, 40) == pytest.approx(30.0)

    def test_no_memory(self):
        assert oracle.exact_expected_links(0.3, 0, 17, 10) == pytest.approx(3.0)

    def test_certain_links(self):
        assert oracle.exact_expected_links(1.0, 2, 1, 9) == pytest.approx(9.0)

    def test_closed_form_grid_to_machine_precision(self):
        for p in (0.1, 0.4, 0.9):
            for n_star in (1, 3):
                for n in range(1, n_star + 2):
                    m = 25
                    expected = m * -math.expm1(n * math.log1p(-p))
                    assert abs(oracle.exact_expected_links(p, n_star, n, m)
                               - expected) < 1e-12 * m


class TestTransitionMatrix:
    def test_column_stochastic(self):
        t = oracle._single_link_transition(0.3, 4)
        np.testing.assert_allclose(t.sum(axis=0), 1.0, atol=1e-15)

    def test_reset_age_reattempts_within_trial(self):
        t = oracle._single_link_transition(0.3, 2)
        # from the max-age state the link lands back at age 0 w.p. p
        assert t[1, 3] == pytest.approx(0.3)
        assert t[0, 3] == pytest.approx(0.7)


class TestSemiAnalyticThreshold:
    def test_square_no_memory_is_bond_threshold(self):
        assert oracle.percolation_threshold_semi_analytic(
            LatticeKind.SQUARE, 10, 0
        ) == pytest.approx(0.5, abs=1e-8)

    def test_triangular_no_memory_is_bond_threshold(self):
        assert oracle.percolation_threshold_semi_analytic(
            LatticeKind.TRIANGULAR, 10, 0
        ) == pytest.approx(2 * math.sin(math.pi / 18), abs=1e-8)

    def test_saturated_cutoff_closed_form(self):
        # with n* >= n-1 the availability is 1-(1-p)^n, inverted analytically
        val = oracle.percolation_threshold_semi_analytic(LatticeKind.SQUARE, 10, 9)
        assert val == pytest.approx(1 - 0.5 ** (1 / 10), abs=1e-8)
        assert val == pytest.approx(0.0670, abs=1e-3)

    def test_monotone_in_cutoff(self):
        vals = [oracle.percolation_threshold_semi_analytic(LatticeKind.SQUARE, 10, k)
                for k in range(5)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_triangular_below_square(self):
        for n_star in range(5):
            sq = oracle.percolation_threshold_semi_analytic(
                LatticeKind.SQUARE, 10, n_star)
            tr = oracle.percolation_threshold_semi_analytic(
                LatticeKind.TRIANGULAR, 10, n_star)
            assert tr < sq

    def test_threshold_inverts_availability(self):
        p = oracle.percolation_threshold_semi_analytic(LatticeKind.SQUARE, 10, 2)
        assert oracle.link_availability(p, 2, 10) == pytest.approx(0.5, abs=1e-8)

    def test_custom_bond_threshold_validation(self):
        with pytest.raises(ValueError):
            oracle.percolation_threshold_semi_analytic(
                LatticeKind.SQUARE, 10, 0, p_c_bond=1.5)
