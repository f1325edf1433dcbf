"""
Tests for model and policy generators.
"""

import numpy as np
import pytest

from multipolicy_eval.generators import (
    TARGET,
    gen_chain_mdp,
    gen_random_mdp,
    gen_two_layer_k_example,
    gen_unrealizable_example,
    random_policies,
    unrealizable_demo,
)
from multipolicy_eval.mdp import exact_value, exact_visitation, validate_mdp, validate_policy
from multipolicy_eval.models import PolicyTable


class TestTwoLayer:
    """Tests for gen_two_layer_k_example."""

    def test_every_policy_has_value_p(self, two_layer):
        """Test that all K policies are worth p and share the second layer."""
        mdp, policies = two_layer
        assert validate_mdp(mdp).ok
        assert [exact_value(mdp, policy) for policy in policies] == pytest.approx([0.3] * 4)
        second = [exact_visitation(mdp, policy).table[1] for policy in policies]
        assert all(np.allclose(second[0], table) for table in second)

    def test_policies_differ_at_the_root(self, two_layer):
        """Test that policy k plays action k at the root."""
        _, policies = two_layer
        assert [int(np.argmax(policy.table[0, 0])) for policy in policies] == [0, 1, 2, 3]

    def test_rejects_more_policies_than_actions(self):
        """Test K > A and p outside (0, 1)."""
        with pytest.raises(ValueError):
            gen_two_layer_k_example(3, 0.5, num_actions=2)
        with pytest.raises(ValueError):
            gen_two_layer_k_example(2, 1.0)


class TestUnrealizable:
    """Tests for the unrealizable example and its optimum."""

    def test_target_mass_is_half(self, unrealizable):
        """Test that every policy puts mass 1/2 on the target state."""
        mdp, policies = unrealizable
        for policy in policies:
            assert exact_visitation(mdp, policy).table[1, TARGET].sum() == pytest.approx(0.5)

    def test_needs_two_policies(self):
        """Test that K = 1 is rejected."""
        with pytest.raises(ValueError):
            gen_unrealizable_example(1)

    def test_unconstrained_optimum_is_not_realizable(self):
        """Test sqrt(K) / (1 + sqrt(K)) target mass against the realizable 1/2."""
        demo = unrealizable_demo(2)
        assert demo.closed_form_mass == pytest.approx(0.5858, abs=1e-4)
        assert demo.optimal_target_mass == pytest.approx(demo.closed_form_mass, abs=0.03)
        assert demo.reference_formula_mass == pytest.approx(0.8)
        assert demo.realizable_mass == pytest.approx(0.5)
        assert demo.unconstrained_value < demo.realizable_value


class TestRandomModels:
    """Tests for random and chain models and random policies."""

    def test_random_mdp_is_valid_and_seeded(self):
        """Test validity and reproducibility."""
        mdp = gen_random_mdp(4, 3, 3, seed=8)
        assert validate_mdp(mdp).ok
        assert np.array_equal(mdp.transitions, gen_random_mdp(4, 3, 3, seed=8).transitions)
        assert not np.array_equal(mdp.transitions, gen_random_mdp(4, 3, 3, seed=9).transitions)

    def test_sparsity_zeroes_entries(self):
        """Test that sparse rows stay distributions with at least one entry."""
        mdp = gen_random_mdp(6, 2, 3, sparsity=0.7, seed=1)
        assert validate_mdp(mdp).ok
        assert np.mean(mdp.transitions == 0) > 0.3
        assert np.all((mdp.transitions > 0).sum(axis=-1) >= 1)

    def test_sparsity_range(self):
        """Test that sparsity must lie in [0, 1)."""
        with pytest.raises(ValueError):
            gen_random_mdp(2, 2, 2, sparsity=1.0)

    def test_chain(self, chain_mdp):
        """Test that always advancing reaches the rewarding end."""
        H, S, A = chain_mdp.shape
        assert validate_mdp(chain_mdp).ok
        advance = PolicyTable.deterministic(np.zeros((H, S), dtype=int), A)
        assert exact_visitation(chain_mdp, advance).table[4, 4].sum() == pytest.approx(1.0)
        with pytest.raises(ValueError):
            gen_chain_mdp(1, 2, 2)

    def test_random_policies(self, random_mdp):
        """Test deterministic and stochastic policy draws."""
        deterministic = random_policies(random_mdp, 3, seed=2)
        stochastic = random_policies(random_mdp, 2, seed=2, deterministic=False)
        assert len(deterministic) == 3
        assert all(np.isin(policy.table, [0.0, 1.0]).all() for policy in deterministic)
        assert all(validate_policy(policy, random_mdp).ok for policy in deterministic + stochastic)
        assert not any(np.isin(policy.table, [0.0, 1.0]).all() for policy in stochastic)
