"""
Tests for step-wise importance density estimation.
"""

import itertools

import numpy as np
import pytest
from pydantic import ValidationError

from multipolicy_eval.errors import DimensionMismatchError, SupportError
from multipolicy_eval.generators import gen_random_mdp, random_policies
from multipolicy_eval.ides import (
    IdesConfig,
    MixtureDataSource,
    StepSamples,
    density_l1_error,
    exact_gradient,
    hessian_diagonal,
    iteration_count,
    loss_minimizer,
    loss_value,
    mom_select,
    propagated_state_mass,
    run_ides,
    run_ides_all,
    sample_loss,
    sgd_minimize_step,
    stochastic_gradient,
)
from multipolicy_eval.mdp import exact_visitation
from multipolicy_eval.models import MixtureWeights, PolicyTable
from multipolicy_eval.sampler import Phase, RngStream, RolloutLedger
from multipolicy_eval.traces import TRACE_COLUMNS, TraceRecorder


@pytest.fixture
def behaviour(random_mdp):
    """Uniform-policy visitation of random_mdp, used as the sampling law."""
    return exact_visitation(random_mdp, PolicyTable.uniform(*random_mdp.shape)).table


def naive_sgd(d_hat_h, mu_hat_h, pi_h, ratio_prev, samples, n, curvature=0.8):
    """Dense projected SGD with explicit triangular averaging."""
    support = d_hat_h > 0
    w = np.zeros_like(d_hat_h)
    accumulated = np.zeros_like(d_hat_h)
    for i in range(1, n + 1):
        j = i - 1
        gradient = stochastic_gradient(
            w,
            (samples.a_states[j], samples.a_actions[j]),
            (samples.b_prev_states[j], samples.b_prev_actions[j], samples.b_states[j]),
            pi_h,
            mu_hat_h,
            ratio_prev,
            support,
        )
        w = np.clip(w - 2.0 / (curvature * (i + 1)) * gradient, 0.0, 2.0 * d_hat_h)
        accumulated += i * w
    return accumulated / (n * (n + 1) / 2)


class TestConfig:
    """Tests for IdesConfig."""

    def test_default_repetitions(self):
        """Test N = ceil(mom_factor ln(1 / delta))."""
        assert IdesConfig(epsilon=0.1, delta=0.1).repetitions == 19
        assert IdesConfig(epsilon=0.1, delta=0.1, mom_reps=3).repetitions == 3

    def test_rejects_bad_epsilon(self):
        """Test that epsilon must lie in (0, 1)."""
        with pytest.raises(ValidationError):
            IdesConfig(epsilon=1.5, delta=0.1)


class TestExactLoss:
    """Tests for the exact loss, its gradient and minimiser."""

    def test_first_step_mass_is_initial_distribution(self, random_mdp):
        """Test that m_0 = nu."""
        assert np.allclose(propagated_state_mass(random_mdp, 0), random_mdp.initial_dist)

    def test_later_steps_need_previous_ratio(self, random_mdp):
        """Test that steps after the first require the previous law and ratio."""
        with pytest.raises(ValueError):
            propagated_state_mass(random_mdp, 1)

    def test_exact_ratio_propagates_exact_mass(self, random_mdp, random_policy, behaviour):
        """Test that an exact previous ratio yields the exact state marginal."""
        d = exact_visitation(random_mdp, random_policy).table
        ratio = np.divide(d[0], behaviour[0], out=np.zeros_like(d[0]), where=behaviour[0] > 0)
        mass = propagated_state_mass(random_mdp, 1, behaviour[0], ratio)
        assert np.allclose(mass, d[1].sum(axis=1))

    def test_minimizer_is_target_density(self, random_mdp, random_policy, behaviour):
        """Test that with mu_hat = mu_tilde the minimiser is d_h and the gradient vanishes there."""
        d = exact_visitation(random_mdp, random_policy).table
        ratio = np.divide(d[0], behaviour[0], out=np.zeros_like(d[0]), where=behaviour[0] > 0)
        mass = propagated_state_mass(random_mdp, 1, behaviour[0], ratio)
        pi_h = random_policy.table[1]
        w_star = loss_minimizer(pi_h, behaviour[1], behaviour[1], mass)
        assert np.allclose(w_star, d[1])
        assert np.allclose(exact_gradient(w_star, pi_h, behaviour[1], behaviour[1], mass), 0.0)
        nudged = w_star + 0.01
        assert loss_value(w_star, pi_h, behaviour[1], behaviour[1], mass) < loss_value(
            nudged, pi_h, behaviour[1], behaviour[1], mass
        )

    def test_support_error(self):
        """Test that sampling mass where mu_hat is zero raises SupportError."""
        mu_tilde = np.array([[0.5, 0.5]])
        mu_hat = np.array([[1.0, 0.0]])
        with pytest.raises(SupportError):
            loss_value(np.zeros((1, 2)), np.ones((1, 2)) / 2, mu_tilde, mu_hat, np.ones(1))

    def test_hessian_diagonal(self):
        """Test that the Hessian is mu_tilde / mu_hat on the support."""
        assert np.allclose(hessian_diagonal(np.array([[0.2, 0.0]]), np.array([[0.4, 0.0]])), [0.5])

    def test_density_l1_error(self):
        """Test the per-step L1 error of mu_tilde * ratio against d."""
        mu_tilde = np.array([[[0.5, 0.5]]])
        ratio = np.array([[[1.2, 0.8]]])
        assert np.allclose(density_l1_error(mu_tilde, ratio, np.array([[[0.5, 0.5]]])), [0.2])


class TestStochasticGradient:
    """Tests for the one-sample gradient."""

    def test_unbiased(self):
        """Test that the expected stochastic gradient equals the exact gradient."""
        mdp = gen_random_mdp(2, 2, 2, seed=2)
        pi = random_policies(mdp, 1, seed=3, deterministic=False)[0].table
        mu_tilde = exact_visitation(mdp, PolicyTable.uniform(2, 2, 2)).table
        mu_hat = 0.5 * mu_tilde + 0.125
        ratio_prev = np.array([[0.5, 1.5], [2.0, 0.25]])
        w = np.array([[0.1, 0.3], [0.2, 0.05]])

        expected = np.zeros((2, 2))
        pairs = list(itertools.product(range(2), range(2)))
        for (s, a), (s_prev, a_prev), s_next in itertools.product(pairs, pairs, range(2)):
            probability = mu_tilde[1, s, a] * mu_tilde[0, s_prev, a_prev] * mdp.transitions[0, s_prev, a_prev, s_next]
            expected += probability * stochastic_gradient(
                w, (s, a), (s_prev, a_prev, s_next), pi[1], mu_hat[1], ratio_prev
            )
        mass = propagated_state_mass(mdp, 1, mu_tilde[0], ratio_prev)
        assert np.allclose(expected, exact_gradient(w, pi[1], mu_tilde[1], mu_hat[1], mass))

    def test_zero_off_support(self):
        """Test that coordinates outside the support get no gradient."""
        support = np.array([[True, False]])
        gradient = stochastic_gradient(
            np.ones((1, 2)), (0, 1), (-1, -1, 0), np.array([[0.5, 0.5]]), np.ones((1, 2)), None, support
        )
        assert gradient[0, 1] == 0.0
        assert gradient[0, 0] == pytest.approx(-0.5)


class TestDataSource:
    """Tests for MixtureDataSource."""

    def test_prefix_stable_across_chunks(self, random_mdp, random_policy):
        """Test that asking for more pairs extends the same sequence."""
        ledger = RolloutLedger()
        source = MixtureDataSource(
            random_mdp, [random_policy], MixtureWeights.uniform(1), RngStream(0), ledger=ledger, chunk_size=8
        )
        long = source.pairs(1, 0, 20)
        fresh = MixtureDataSource(random_mdp, [random_policy], MixtureWeights.uniform(1), RngStream(0), chunk_size=8)
        short = fresh.pairs(1, 0, 5)
        assert long.head(5) == short
        assert len(long) == 20
        assert ledger.counts[Phase.IDES] == 3 * 16

    def test_first_step_has_no_previous_pair(self, random_mdp, random_policy):
        """Test that first-step b-samples carry -1 as their previous pair."""
        source = MixtureDataSource(random_mdp, [random_policy], MixtureWeights.uniform(1), RngStream(0), chunk_size=4)
        pairs = source.pairs(0, 0, 4)
        assert pairs.b_prev_states == [-1] * 4
        assert pairs.b_prev_actions == [-1] * 4

    def test_release_drops_cache(self, random_mdp, random_policy):
        """Test that release() forgets a step's pairs."""
        source = MixtureDataSource(random_mdp, [random_policy], MixtureWeights.uniform(1), RngStream(0), chunk_size=4)
        source.pairs(0, 0, 4)
        source.release(0)
        assert not source._cache


class TestSgd:
    """Tests for iteration counts, SGD and Median-of-Means."""

    def test_iteration_count_formula(self):
        """Test n_h = C_h H^4 / eps^2 times the summed spread, with a virtual 1 at the first step."""
        d_hat = np.array([[0.5, 0.0], [0.0, 0.5]])
        assert iteration_count(d_hat, d_hat, None, None, 2, 0.5, 1.0) == 128
        assert iteration_count(d_hat, d_hat, d_hat, d_hat, 2, 0.5, 1.0) == 128

    def test_iteration_count_cap(self, caplog):
        """Test that counts above the cap are truncated with a warning."""
        d_hat = np.array([[0.5, 0.0], [0.0, 0.5]])
        assert iteration_count(d_hat, d_hat, None, None, 2, 0.5, 1.0, cap=100) == 100
        assert "truncating" in caplog.text

    def test_lazy_average_matches_dense(self, random_mdp, random_policy, behaviour):
        """Test that the sparse lazily averaged SGD equals a dense implementation."""
        source = MixtureDataSource(
            random_mdp, [PolicyTable.uniform(*random_mdp.shape)], MixtureWeights.uniform(1), RngStream(3)
        )
        samples = source.pairs(1, 0, 300)
        d = exact_visitation(random_mdp, random_policy).table
        ratio_prev = np.divide(d[0], behaviour[0], out=np.zeros_like(d[0]), where=behaviour[0] > 0)
        lazy = sgd_minimize_step(d[1], behaviour[1], random_policy.table[1], ratio_prev, samples, 300)
        dense = naive_sgd(d[1], behaviour[1], random_policy.table[1], ratio_prev, samples, 300)
        assert np.allclose(lazy, dense, rtol=1e-9, atol=1e-12)

    def test_empty_support(self):
        """Test that an all-zero target estimate gives all-zero weights."""
        result = sgd_minimize_step(np.zeros((1, 2)), np.ones((1, 2)), np.ones((1, 2)) / 2, None, StepSamples(), 5)
        assert np.all(result == 0.0)

    def test_too_few_samples(self):
        """Test that fewer pairs than iterations is an error."""
        with pytest.raises(ValueError, match="sample pairs"):
            sgd_minimize_step(np.ones((1, 2)) / 2, np.ones((1, 2)), np.ones((1, 2)) / 2, None, StepSamples(), 5)

    def test_support_error_on_zero_mu_hat(self):
        """Test that mu_hat must be positive on the target support."""
        d_hat = np.array([[0.5, 0.5]])
        with pytest.raises(SupportError):
            sgd_minimize_step(d_hat, np.array([[1.0, 0.0]]), d_hat, None, StepSamples(), 1)

    def test_trace_rows(self, random_mdp, random_policy, behaviour):
        """Test that a trace row is recorded every stride iterations."""
        source = MixtureDataSource(
            random_mdp, [PolicyTable.uniform(*random_mdp.shape)], MixtureWeights.uniform(1), RngStream(3)
        )
        d = exact_visitation(random_mdp, random_policy).table
        trace = TraceRecorder(stride=10)
        sgd_minimize_step(
            d[0], behaviour[0], random_policy.table[0], None, source.pairs(0, 0, 100), 100, trace=trace, run_id="r"
        )
        frame = trace.to_frame()
        assert list(frame.columns) == TRACE_COLUMNS
        assert list(frame["iteration"]) == list(range(10, 101, 10))

    def test_mom_select_lower_median(self):
        """Test that the lower median is chosen for an even number of runs."""
        assert mom_select(["a", "b", "c", "d"], [4.0, 1.0, 3.0, 2.0]) == "d"
        assert mom_select(["a", "b", "c"], [3.0, 1.0, 2.0]) == "c"

    def test_mom_select_requires_matching_losses(self):
        """Test that runs and losses must pair up."""
        with pytest.raises(ValueError):
            mom_select(["a"], [])

    def test_sample_loss_support_error(self):
        """Test that a held-out sample with weight where mu_hat is zero raises SupportError."""
        samples = StepSamples([0], [1], [-1], [-1], [0])
        with pytest.raises(SupportError):
            sample_loss(np.ones((1, 2)), samples, np.ones((1, 2)) / 2, np.array([[1.0, 0.0]]), None)


class TestRunIdes:
    """Tests for the IDES driver."""

    def test_dimension_mismatch(self, random_mdp, random_policy, behaviour):
        """Test that coarse tables must match the policies and mu_hat."""
        source = MixtureDataSource(random_mdp, [random_policy], MixtureWeights.uniform(1), RngStream(0))
        cfg = IdesConfig(epsilon=0.1, delta=0.1)
        with pytest.raises(DimensionMismatchError):
            run_ides_all([random_policy], np.zeros((2, *random_mdp.shape)), behaviour, source, source, cfg)

    def test_bookkeeping(self, random_mdp, random_policy, behaviour):
        """Test iteration counts, selected repetitions and held-out losses per step."""
        d = exact_visitation(random_mdp, random_policy).table
        uniform = [PolicyTable.uniform(*random_mdp.shape)]
        source = MixtureDataSource(random_mdp, uniform, MixtureWeights.uniform(1), RngStream(0), Phase.IDES)
        holdout = MixtureDataSource(random_mdp, uniform, MixtureWeights.uniform(1), RngStream(0), Phase.HOLDOUT)
        cfg = IdesConfig(epsilon=0.5, delta=0.1, c_h=0.01, mom_reps=3)
        result = run_ides(random_policy, d, behaviour, source, holdout, cfg)
        H = random_mdp.horizon
        assert len(result.iterations) == len(result.selected_reps) == len(result.holdout_losses) == H
        assert all(len(losses) == 3 for losses in result.holdout_losses)
        assert all(0 <= rep < 3 for rep in result.selected_reps)
        assert result.weights.weights.shape == random_mdp.shape
        assert np.all(result.weights.weights[d == 0] == 0.0)

    @pytest.mark.slow
    def test_density_accuracy(self):
        """Test that the fitted densities are close to the targets in L1 on every step."""
        mdp = gen_random_mdp(3, 2, 2, seed=21)
        policies = random_policies(mdp, 2, seed=22)
        d = np.stack([exact_visitation(mdp, policy).table for policy in policies])
        alpha = MixtureWeights.uniform(2)
        mu = np.einsum("k,khsa->hsa", alpha.alpha, d)
        source = MixtureDataSource(mdp, policies, alpha, RngStream(8), Phase.IDES)
        holdout = MixtureDataSource(mdp, policies, alpha, RngStream(8), Phase.HOLDOUT)
        cfg = IdesConfig(epsilon=0.1, delta=0.1, c_h=2.0, mom_reps=3)
        results = run_ides_all(policies, d, mu, source, holdout, cfg)
        for k, result in enumerate(results):
            assert np.all(density_l1_error(mu, result.weights.ratio(), d[k]) <= 0.15)


class TestMedianOfMeans:
    """Tests for the success rate of median-of-means selection."""

    @pytest.mark.slow
    @pytest.mark.parametrize("delta", [0.1, 0.01])
    def test_heavy_tailed_runs(self, delta):
        """Test that the median run is within epsilon in at least 1 - delta - 0.02 of 10^4 trials."""
        epsilon = 0.1
        reps = IdesConfig(epsilon=epsilon, delta=delta, mom_factor=8.0).repetitions
        generator = RngStream(17).generator()
        # Lomax(1.5) has mean 2, so E|err| = eps / 4
        errors = epsilon / 8 * generator.pareto(1.5, size=(10_000, reps))
        errors *= generator.choice([-1.0, 1.0], size=errors.shape)
        hits = sum(abs(mom_select(list(trial), list(np.abs(trial)))) <= epsilon for trial in errors)
        assert hits / 10_000 >= (1 - delta) - 0.02
