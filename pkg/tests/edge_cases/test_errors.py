"""
Tests for degenerate inputs and the error hierarchy.
"""

import numpy as np
import pytest

from multipolicy_eval.caesar import CaesarConfig, evaluate_policies, mc_baseline
from multipolicy_eval.errors import (
    BudgetExceededError,
    CoverSupportError,
    DimensionMismatchError,
    EnumerationCapError,
    InvalidModelError,
    MultiPolicyEvalError,
    SolverNonConvergenceError,
    SupportError,
)
from multipolicy_eval.generators import gen_random_mdp, random_policies
from multipolicy_eval.models import PolicyTable, TabularMdp


@pytest.fixture
def fast_config():
    """Small fixed sample sizes."""
    return CaesarConfig(coarse_trajectories=1000, mom_reps=1, final_trajectories=1000, max_ides_iterations=300)


class TestDegenerateInputs:
    """Test edge cases of model size and rewards."""

    def test_zero_rewards(self, tiny_mdp, tiny_policies, fast_config):
        """Test that all-zero rewards give estimates of exactly zero."""
        mdp = tiny_mdp.with_rewards(np.zeros((2, 2, 2)))
        report = evaluate_policies(mdp, tiny_policies, 0.2, 0.1, fast_config)
        assert report.estimates == [0.0, 0.0, 0.0]

    def test_horizon_one(self, fast_config):
        """Test a single-step model."""
        mdp = gen_random_mdp(3, 2, 1, seed=2)
        policies = random_policies(mdp, 2, seed=2)
        report = evaluate_policies(mdp, policies, 0.2, 0.1, fast_config)
        assert len(report.estimates) == 2
        assert all(np.isfinite(report.estimates))
        assert len(report.sampling_objective) == 1

    def test_single_action(self, fast_config):
        """Test a model where every policy is the same."""
        mdp = gen_random_mdp(3, 1, 2, seed=3)
        policies = [PolicyTable.uniform(2, 3, 1)] * 2
        report = evaluate_policies(mdp, policies, 0.2, 0.1, fast_config)
        assert report.oracle_values[0] == report.oracle_values[1]
        assert all(np.isfinite(report.estimates))

    def test_single_policy(self, tiny_mdp, tiny_policies, fast_config):
        """Test that one policy gets the whole mixture."""
        report = evaluate_policies(tiny_mdp, tiny_policies[1:2], 0.2, 0.1, fast_config)
        assert report.alpha == [1.0]

    def test_single_state_model(self):
        """Test a model with one state through the Monte Carlo baseline."""
        mdp = TabularMdp(
            num_states=1,
            num_actions=2,
            horizon=2,
            initial_dist=[1.0],
            transitions=np.ones((2, 1, 2, 1)),
            rewards=np.full((2, 1, 2), 0.5),
        )
        report = mc_baseline(mdp, [PolicyTable.uniform(2, 1, 2)], 0.2, 0.1)
        assert report.estimates == pytest.approx([1.0])


class TestErrorHierarchy:
    """Test the exception classes."""

    def test_common_base(self):
        """Test that every library error derives from MultiPolicyEvalError."""
        for kind in (
            BudgetExceededError,
            CoverSupportError,
            DimensionMismatchError,
            EnumerationCapError,
            InvalidModelError,
            SolverNonConvergenceError,
            SupportError,
        ):
            assert issubclass(kind, MultiPolicyEvalError)

    def test_value_error_compatibility(self):
        """Test that input errors are also ValueErrors."""
        assert issubclass(DimensionMismatchError, ValueError)
        assert issubclass(InvalidModelError, ValueError)
        assert issubclass(CoverSupportError, SupportError)

    def test_attributes(self):
        """Test the data carried by errors."""
        cap = EnumerationCapError(100, 10)
        assert (cap.count, cap.cap) == (100, 10)
        solver = SolverNonConvergenceError("best", 0.25, 7)
        assert solver.best_solution == "best"
        assert solver.iterations == 7
        assert "7 iterations" in str(solver)
        budget = BudgetExceededError("cap", phase_counts={"coarse": 5})
        assert budget.partial is None
        assert budget.phase_counts == {"coarse": 5}
        assert InvalidModelError("bad").report is None
