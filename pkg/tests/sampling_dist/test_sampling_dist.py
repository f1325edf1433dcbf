"""
Tests for the minimax sampling distribution solver.
"""

import numpy as np
import pytest

from multipolicy_eval.errors import DimensionMismatchError, SolverNonConvergenceError, SupportError
from multipolicy_eval.generators import gen_random_mdp, random_policies
from multipolicy_eval.mdp import exact_visitation
from multipolicy_eval.models import MixtureWeights, VisitationTable
from multipolicy_eval.sampling_dist import (
    SamplingObjective,
    SolverConfig,
    argmax_witness,
    argmax_witness_value,
    grid_search_alpha,
    objective_subgradient,
    objective_value,
    realized_mixture,
    solve_alpha,
    solve_alpha_per_step,
    total_objective,
)


def disjoint_targets():
    """Two single-step targets on different cells."""
    tables = np.zeros((2, 1, 1, 2))
    tables[0, 0, 0, 0] = 1.0
    tables[1, 0, 0, 1] = 1.0
    return tables


def exact_tables(mdp, policies):
    return np.stack([exact_visitation(mdp, policy).table for policy in policies])


class TestObjective:
    """Tests for SamplingObjective and its values."""

    def test_rejects_non_4d_targets(self):
        """Test that targets must be (K, H, S, A)."""
        with pytest.raises(DimensionMismatchError):
            SamplingObjective(np.ones((2, 2, 2)))

    def test_rejects_uncovered_targets(self):
        """Test that a hull missing a target entry raises SupportError."""
        tables = disjoint_targets()
        with pytest.raises(SupportError):
            SamplingObjective(tables, hull=tables[:1])

    def test_identical_targets(self, random_mdp, random_policy):
        """Test that K copies of one target give sum d^2 / d = 1 per step."""
        obj = SamplingObjective(exact_tables(random_mdp, [random_policy] * 3))
        alpha = MixtureWeights.uniform(3)
        assert objective_value(obj, alpha, 0) == pytest.approx(1.0)
        assert total_objective(obj, alpha) == pytest.approx(random_mdp.horizon)

    def test_uncovered_entry_is_infinite(self):
        """Test that a point mass on one target leaves the other uncovered."""
        obj = SamplingObjective(disjoint_targets())
        assert objective_value(obj, MixtureWeights.point(0, 2), 0) == np.inf

    def test_alpha_length_mismatch(self):
        """Test that alpha must have one weight per generator."""
        with pytest.raises(DimensionMismatchError):
            objective_value(SamplingObjective(disjoint_targets()), MixtureWeights.uniform(3), 0)

    def test_subgradient_picks_lowest_active_index(self):
        """Test that ties between targets resolve to the lowest index."""
        value, gradient, active = objective_subgradient(SamplingObjective(disjoint_targets()), np.array([0.5, 0.5]))
        assert value == pytest.approx(2.0)
        assert list(active) == [0]
        assert gradient[0] == pytest.approx(-4.0)
        assert gradient[1] == pytest.approx(0.0)


class TestSolver:
    """Tests for solve_alpha."""

    def test_disjoint_targets_split_evenly(self):
        """Test that two disjoint targets get equal weight and value 2."""
        solution = solve_alpha(SamplingObjective(disjoint_targets()))
        assert solution.alpha.alpha == pytest.approx([0.5, 0.5], abs=1e-3)
        assert solution.total_objective == pytest.approx(2.0, rel=1e-3)
        assert solution.converged

    def test_single_generator(self, random_mdp, random_policy):
        """Test that one generator is returned as is."""
        solution = solve_alpha(SamplingObjective(exact_tables(random_mdp, [random_policy])))
        assert list(solution.alpha.alpha) == [1.0]
        assert solution.certificate_gap == pytest.approx(0.0)

    def test_mu_hat_is_the_mixture(self, random_mdp):
        """Test that mu_hat equals sum_k alpha_k d_k."""
        policies = random_policies(random_mdp, 3, seed=11)
        tables = exact_tables(random_mdp, policies)
        solution = solve_alpha(SamplingObjective(tables))
        assert np.allclose(solution.mu_hat, np.einsum("k,khsa->hsa", solution.alpha.alpha, tables))
        assert np.allclose(solution.mu_hat.sum(axis=(1, 2)), 1.0)

    def test_matches_grid_oracle(self):
        """Test that the solver is within 1% of the grid optimum and its bound is valid."""
        mdp = gen_random_mdp(3, 2, 3, seed=3)
        obj = SamplingObjective(exact_tables(mdp, random_policies(mdp, 2, seed=4, deterministic=False)))
        solution = solve_alpha(obj)
        _, grid_value = grid_search_alpha(obj, resolution=1e-3)
        assert solution.total_objective <= grid_value * 1.01
        assert solution.lower_bound <= grid_value + 1e-9
        assert solution.lower_bound <= solution.total_objective + 1e-9

    def test_non_convergence_carries_best_iterate(self):
        """Test that hitting max_iters raises with the best solution attached."""
        with pytest.raises(SolverNonConvergenceError) as exc_info:
            solve_alpha(SamplingObjective(disjoint_targets()), SolverConfig(max_iters=1))
        assert not exc_info.value.best_solution.converged
        assert exc_info.value.iterations == 1

    def test_stalled_step_is_not_converged(self):
        """Test that stopping on a vanished step size leaves converged False with an open gap."""
        hull = np.zeros((2, 1, 1, 2))
        hull[0, 0, 0, 0] = 1.0
        hull[1, 0, 0] = [0.9, 0.1]
        obj = SamplingObjective(disjoint_targets(), hull)
        solution = solve_alpha(obj, SolverConfig(step0=1e-9, min_step=1e-9, window=1, tol=1e-3))
        assert not solution.converged
        assert solution.iterations == 2
        assert solution.certificate_gap > 1e-3 * solution.total_objective

    def test_per_step_solutions(self, random_mdp):
        """Test that the per-step solver returns one solution per step, each no worse than the joint one there."""
        obj = SamplingObjective(exact_tables(random_mdp, random_policies(random_mdp, 2, seed=5)))
        joint = solve_alpha(obj)
        per_step = solve_alpha_per_step(obj)
        assert len(per_step) == random_mdp.horizon
        for h, solution in enumerate(per_step):
            assert solution.total_objective <= joint.objective[h] * 1.01


class TestOracles:
    """Tests for the grid oracle, realized mixture and witness bound."""

    def test_grid_single_step(self):
        """Test the grid oracle on the disjoint example."""
        alpha, value = grid_search_alpha(SamplingObjective(disjoint_targets()), resolution=0.1, h=0)
        assert alpha.alpha == pytest.approx([0.5, 0.5])
        assert value == pytest.approx(2.0)

    def test_realized_mixture(self, tiny_mdp, tiny_policies):
        """Test that the realized mixture averages exact tables."""
        visitations = [exact_visitation(tiny_mdp, policy) for policy in tiny_policies[:2]]
        mixture = realized_mixture(visitations, MixtureWeights.uniform(2))
        assert mixture.kind == "mixture"
        assert np.allclose(mixture.table[0], [[0.5, 0.5], [0.0, 0.0]])

    def test_realized_mixture_length_mismatch(self, tiny_mdp, tiny_policies):
        """Test that alpha must match the number of tables."""
        visitations = [exact_visitation(tiny_mdp, tiny_policies[0])]
        with pytest.raises(DimensionMismatchError):
            realized_mixture(visitations, MixtureWeights.uniform(2))

    def test_witness_bound(self, random_mdp):
        """Test that every policy's objective against the argmax witness is at most S A."""
        witness = argmax_witness(random_mdp)
        assert isinstance(witness, VisitationTable)
        assert np.allclose(witness.step_mass(), 1.0)
        tables = exact_tables(random_mdp, random_policies(random_mdp, 5, seed=9, deterministic=False))
        assert argmax_witness_value(tables, witness) <= random_mdp.num_states * random_mdp.num_actions + 1e-9
