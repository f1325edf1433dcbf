"""
Tests for successive-elimination policy identification.
"""

import pytest

from multipolicy_eval.caesar import CaesarConfig
from multipolicy_eval.generators import random_policies
from multipolicy_eval.identification import (
    RoundRecord,
    eliminate,
    eliminate_multi_reward,
    elimination_consistent,
    identify,
    round_count,
)
from multipolicy_eval.mdp import exact_value


def make_record(estimates, survivors):
    return RoundRecord(
        round=3,
        gamma=0.125,
        delta=0.01,
        survivors_before=[0, 1, 2],
        estimates=estimates,
        survivors=survivors,
        budget=0,
    )


class TestRoundCount:
    """Tests for round_count."""

    @pytest.mark.parametrize(("epsilon", "expected"), [(0.1, 6), (0.5, 3), (0.25, 4), (4.0, 1)])
    def test_values(self, epsilon, expected):
        """Test ceil(log2(4 / eps)) with a floor of one round."""
        assert round_count(epsilon) == expected


class TestEliminate:
    """Tests for the elimination rules."""

    def test_keeps_estimates_within_two_gamma(self):
        """Test that only candidates trailing by more than 2 gamma are dropped."""
        assert eliminate([0.5, 0.4, 0.1], 0.05) == [0, 1]

    def test_maximum_always_survives(self):
        """Test that gamma = 0 keeps exactly the maximisers."""
        assert eliminate([0.2, 0.7, 0.7], 0.0) == [1, 2]

    def test_empty(self):
        """Test that no estimates give no survivors."""
        assert eliminate([], 0.1) == []

    def test_multi_reward_keeps_any_leader(self):
        """Test that a candidate leading under one reward survives."""
        assert eliminate_multi_reward([[1.0, 0.0], [0.0, 1.0]], 0.1) == [0, 1]
        assert eliminate_multi_reward([[1.0, 0.0], [1.0, 0.2]], 0.1) == [0]

    def test_multi_reward_shapes(self):
        """Test empty candidate lists and the 2-D requirement."""
        assert eliminate_multi_reward([[], []], 0.1) == []
        with pytest.raises(ValueError):
            eliminate_multi_reward([0.1, 0.2], 0.1)


class TestEliminationConsistent:
    """Tests for the oracle audit of a round."""

    def test_consistent_round(self):
        """Test that keeping the best and dropping far candidates passes."""
        assert elimination_consistent(make_record([0.1, 0.9, 0.5], [1]), [0.0, 1.0, 0.5]) is True

    def test_far_candidate_kept(self):
        """Test that a survivor with gap above 4 gamma fails the audit."""
        assert elimination_consistent(make_record([0.1, 0.9, 0.5], [0, 1]), [0.0, 1.0, 0.5]) is False

    def test_best_candidate_dropped(self):
        """Test that removing the true best fails the audit."""
        assert elimination_consistent(make_record([0.1, 0.9, 0.5], [2]), [0.0, 1.0, 0.5]) is False

    def test_inaccurate_round(self):
        """Test that a round with an estimate off by more than gamma is not judged."""
        assert elimination_consistent(make_record([0.3, 0.9, 0.5], [1]), [0.0, 1.0, 0.5]) is None


class TestIdentify:
    """Tests for identify."""

    def test_single_candidate(self, tiny_mdp, tiny_policies):
        """Test that one candidate is chosen without any round."""
        state = identify(tiny_mdp, tiny_policies[:1], 0.1, 0.1)
        assert state.chosen == 0
        assert state.rounds == []
        assert state.survivors == [0]
        assert state.total_budget == 0
        assert state.max_rounds == 6

    def test_rejects_bad_input(self, tiny_mdp, tiny_policies):
        """Test empty candidate lists and out-of-range accuracy."""
        with pytest.raises(ValueError):
            identify(tiny_mdp, [], 0.1, 0.1)
        with pytest.raises(ValueError):
            identify(tiny_mdp, tiny_policies, 1.5, 0.1)

    @pytest.mark.slow
    def test_picks_the_best_policy(self, tiny_mdp, tiny_policies):
        """Test that the clearly best policy is identified and the audit is consistent."""
        state = identify(tiny_mdp, tiny_policies, 0.25, 0.1, CaesarConfig(mom_reps=3), rng=4)
        assert state.chosen == 1
        assert len(state.rounds) <= 4
        assert all(elimination_consistent(record, [0.0, 1.0, 0.5]) is not False for record in state.rounds)
        assert state.total_budget > 0

    @pytest.mark.slow
    def test_epsilon_optimal_rate(self, tiny_mdp, tiny_policies):
        """Test that an epsilon-optimal candidate out of five is returned in at least 18 of 20 runs."""
        candidates = tiny_policies + random_policies(tiny_mdp, 2, seed=6, deterministic=False)
        values = [exact_value(tiny_mdp, policy) for policy in candidates]
        config = CaesarConfig(mom_reps=3)
        optimal = sum(
            max(values) - values[identify(tiny_mdp, candidates, 0.1, 0.1, config, rng=seed).chosen] <= 0.1
            for seed in range(20)
        )
        assert optimal >= 18
