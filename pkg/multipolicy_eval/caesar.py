"""
End-to-end multi-policy evaluation.

Pipeline: coarse visitation estimates of every target, a minimax sampling
mixture over them, importance densities fitted on mixture data, and a single
importance-weighted pass over fresh mixture trajectories that evaluates all
targets at once. The mixture may also range over every deterministic policy,
whose visitations are estimated layer by layer from an oracle cover. Each
phase draws from its own streams, takes an equal share of delta, and charges
every trajectory to one RolloutLedger.
"""

import logging
import math
from collections.abc import Sequence
from pathlib import Path
from typing import Any, Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, computed_field

from multipolicy_eval.coarse import CoarseConfig, coarse_estimate, coarse_estimate_all, threshold_low_mass
from multipolicy_eval.config import DEFAULT_BUDGET_CAP, DEFAULT_ENUMERATION_CAP, Constants, Mode
from multipolicy_eval.errors import BudgetExceededError, SolverNonConvergenceError, SupportError, WitnessBoundError
from multipolicy_eval.ides import IdesConfig, MixtureDataSource, run_ides_all
from multipolicy_eval.march import MarchConfig, build_cover, march_estimate_all
from multipolicy_eval.mdp import check_dimensions, enumerate_deterministic_policies, exact_value, exact_visitation
from multipolicy_eval.models import CoarseVisitation, ImportanceWeightTable, PolicyTable, TabularMdp
from multipolicy_eval.sampler import (
    Phase,
    RngStream,
    RolloutLedger,
    TrajectoryBatch,
    rollout_batch,
    rollout_mixture_batch,
)
from multipolicy_eval.sampling_dist import (
    SamplingObjective,
    SamplingSolution,
    SolverConfig,
    solve_alpha,
    solve_alpha_per_step,
)
from multipolicy_eval.traces import TraceRecorder

logger = logging.getLogger("multipolicy_eval")

COARSE_DIVISOR = 14.0


class CaesarConfig(BaseModel):
    """
    Pipeline settings.

    Attributes:
        mode: Source of unspecified constants when `constants` is not given.
        constants: Explicit constants, e.g. from a calibration file.
        budget_cap: Global trajectory cap across all phases.
        solver: Mixture solver settings.
        reward_aware: Size the final phase with the actual rewards instead of r = 1.
        mom_reps: Override the Median-of-Means repetition count.
        max_ides_iterations: Cap on each n_h.
        coarse_trajectories: Override the per-policy coarse sample size.
        final_trajectories: Override the final sample size.
        oracle_limit: Report oracle values when S * A * H is at most this.
        trace_stride: Record IDES traces at this stride and attach them to the report.
        sampling_set: Mixture components of the sampling law: the targets, or the
            targets plus every deterministic policy.
        hull_source: Visitation tables of the deterministic policies: layer-wise
            estimates from an oracle cover, or the exact tables.
        march_trajectories: Override the per-layer cover batch size.
        enumeration_cap: Largest deterministic policy set accepted.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    mode: Mode = Mode.CALIBRATED
    constants: Constants | None = None
    budget_cap: int = Field(default=DEFAULT_BUDGET_CAP, ge=1)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    reward_aware: bool = True
    mom_reps: int | None = Field(default=None, ge=1)
    max_ides_iterations: int = Field(default=10**7, ge=1)
    coarse_trajectories: int | None = Field(default=None, ge=1)
    final_trajectories: int | None = Field(default=None, ge=1)
    oracle_limit: int = Field(default=10**4, ge=0)
    trace_stride: int | None = Field(default=None, ge=1)
    sampling_set: Literal["targets", "deterministic"] = "targets"
    hull_source: Literal["march", "exact"] = "march"
    march_trajectories: int | None = Field(default=None, ge=1)
    enumeration_cap: int = Field(default=DEFAULT_ENUMERATION_CAP, ge=1)

    def resolved_constants(self) -> Constants:
        return self.constants if self.constants is not None else Constants.for_mode(self.mode)

    def failure_phases(self) -> list[str]:
        """Phases sharing the failure probability, in pipeline order."""
        phases = ["coarse"]
        if self.sampling_set == "deterministic" and self.hull_source == "march":
            phases.append("march")
        return [*phases, "ides", "final"]


def split_delta(delta: float, phases: Sequence[str]) -> dict[str, float]:
    """Equal shares of delta per phase; the shares sum to delta."""
    return {phase: delta / len(phases) for phase in phases}


class PhaseCounts(BaseModel):
    """Trajectories consumed per phase."""

    coarse: int = 0
    march: int = 0
    ides: int = 0
    holdout: int = 0
    final: int = 0
    baseline: int = 0

    @computed_field  # type: ignore[prop-decorator]
    @property
    def total(self) -> int:
        return self.coarse + self.march + self.ides + self.holdout + self.final + self.baseline

    @classmethod
    def from_ledger(cls, ledger: RolloutLedger) -> "PhaseCounts":
        return cls(
            coarse=ledger.counts[Phase.COARSE],
            march=ledger.counts[Phase.MARCH],
            ides=ledger.counts[Phase.IDES],
            holdout=ledger.counts[Phase.HOLDOUT],
            final=ledger.counts[Phase.FINAL],
            baseline=ledger.counts[Phase.BASELINE],
        )


class EvaluationReport(BaseModel):
    """
    Value estimates for every target policy plus budget accounting.

    estimates_by_reward holds one row per extra reward table when several
    reward functions were evaluated from the same weights. delta_split is the
    failure probability spent by each phase (IDES: summed over policies and
    steps). coarse_estimates is kept on partial reports only.
    """

    algorithm: Literal["caesar", "mc"]
    estimates: list[float]
    oracle_values: list[float] | None = None
    phase_counts: PhaseCounts
    epsilon: float
    delta: float
    seed: int
    config: dict[str, Any] = Field(default_factory=dict)
    delta_split: dict[str, float] | None = None
    alpha: list[float] | None = None
    sampling_objective: list[float] | None = None
    ides_iterations: list[list[int]] | None = None
    estimates_by_reward: list[list[float]] | None = None
    trace: list[dict[str, Any]] | None = None
    coarse_estimates: list[CoarseVisitation] | None = None
    complete: bool = True

    @property
    def abs_errors(self) -> list[float] | None:
        if self.oracle_values is None:
            return None
        return [abs(v - o) for v, o in zip(self.estimates, self.oracle_values, strict=True)]

    @property
    def max_abs_error(self) -> float | None:
        errors = self.abs_errors
        return max(errors) if errors else None

    def summary_frame(self) -> pd.DataFrame:
        """One row per policy: k, v_hat and, when known, v_oracle and abs_err."""
        frame = pd.DataFrame({"k": range(len(self.estimates)), "v_hat": self.estimates})
        if self.oracle_values is not None:
            frame["v_oracle"] = self.oracle_values
            frame["abs_err"] = self.abs_errors
        return frame

    def write_csv(self, path: str | Path) -> None:
        self.summary_frame().to_csv(path, index=False)


# =============================================================================
# Final estimator
# =============================================================================


def per_trajectory_statistic(ratio: np.ndarray, batch: TrajectoryBatch, rewards: np.ndarray) -> np.ndarray:
    """X_i = sum_h ratio_h(s_h, a_h) r_h(s_h, a_h) for each trajectory."""
    steps = np.arange(batch.horizon)
    return np.sum(ratio[steps, batch.states, batch.actions] * rewards[steps, batch.states, batch.actions], axis=1)


def final_estimator(
    weights: Sequence[ImportanceWeightTable], batch: TrajectoryBatch, rewards: np.ndarray
) -> np.ndarray:
    """
    V_hat_k = mean over trajectories of sum_h (w_k,h / mu_hat_h)(s_h, a_h) r_h(s_h, a_h).

    Raises:
        SupportError: If a sampled pair has positive weight but zero mu_hat.
    """
    steps = np.arange(batch.horizon)
    estimates = np.zeros(len(weights))
    for k, table in enumerate(weights):
        sampled_weights = table.weights[steps, batch.states, batch.actions]
        sampled_mu = table.mu_hat[steps, batch.states, batch.actions]
        if np.any((sampled_weights > 0) & (sampled_mu <= 0)):
            raise SupportError(f"Policy {k}: sampled pair with positive weight outside the support of mu_hat")
        estimates[k] = float(per_trajectory_statistic(table.ratio(), batch, rewards).mean()) if len(batch) else 0.0
    return estimates


def _spread(d_hats: np.ndarray, mu_hat: np.ndarray, rewards: np.ndarray) -> np.ndarray:
    """(K, H) of sum_{s,a} d_hat^2 r^2 / mu_hat."""
    inverse = np.divide(1.0, mu_hat, out=np.zeros_like(mu_hat), where=mu_hat > 0)
    return np.einsum("khsa,hsa->kh", d_hats**2 * rewards**2, inverse)


def final_sample_size(
    d_hats: np.ndarray,
    mu_hat: np.ndarray,
    epsilon: float,
    delta: float,
    constants: Constants | None = None,
    rewards: np.ndarray | None = None,
) -> int:
    """
    Bernstein sample size for simultaneous accuracy over K policies.

    n = ceil(c_v H rho L / eps^2 + c_r M L / eps) with L = ln(2K / delta),
    rho = sum_h max_k sum_{s,a} d_hat^2 r^2 / mu_hat and M = max_k sum_h max over
    supported pairs of 2 d_hat r / mu_hat. Without rewards r = 1.

    Args:
        d_hats: Coarse tables (K, H, S, A).
        mu_hat: Solved sampling surrogate (H, S, A).
        epsilon: Accuracy.
        delta: Failure probability.
        constants: Bernstein constants; theory values by default.
        rewards: Optional reward table (H, S, A).
    """
    constants = constants or Constants.for_mode(Mode.THEORY)
    d_hats = np.asarray(d_hats)
    K, H = d_hats.shape[0], d_hats.shape[1]
    r = np.ones(mu_hat.shape) if rewards is None else np.asarray(rewards)
    rho = float(_spread(d_hats, mu_hat, r).max(axis=0).sum())
    bound = np.divide(2.0 * d_hats * r, mu_hat, out=np.zeros_like(d_hats), where=mu_hat > 0)
    m = float(bound.max(axis=(2, 3)).sum(axis=1).max())
    log_term = math.log(2 * K / delta)
    n = constants.bernstein_variance * H * rho * log_term / epsilon**2
    n += constants.bernstein_range * m * log_term / epsilon
    return max(1, math.ceil(n))


def variance_bound(exact_tables: np.ndarray, mu_tilde: np.ndarray) -> np.ndarray:
    """Per-policy bound H sum_h sum_{s,a} d^2 / mu_tilde on Var[X] for rewards in [0, 1]."""
    H = exact_tables.shape[1]
    return H * _spread(np.asarray(exact_tables), mu_tilde, np.ones(mu_tilde.shape)).sum(axis=1)


# =============================================================================
# Pipeline
# =============================================================================


def _as_rng(rng: RngStream | int) -> RngStream:
    return rng if isinstance(rng, RngStream) else RngStream(int(rng))


def _oracle_values(mdp: TabularMdp, policies: Sequence[PolicyTable], limit: int) -> list[float] | None:
    H, S, A = mdp.shape
    if S * A * H > limit:
        return None
    return [exact_value(mdp, policy) for policy in policies]


def evaluate_policies(
    mdp: TabularMdp,
    policies: Sequence[PolicyTable],
    epsilon: float,
    delta: float,
    config: CaesarConfig | None = None,
    rng: RngStream | int = 0,
    reward_tables: Sequence[np.ndarray] | None = None,
    trace: TraceRecorder | None = None,
) -> EvaluationReport:
    """
    Estimate the value of every target policy from one sampling mixture.

    Args:
        mdp: The environment.
        policies: Target policies.
        epsilon: Accuracy for every policy simultaneously.
        delta: Failure probability.
        config: Pipeline settings.
        rng: Root stream or seed.
        reward_tables: Extra reward tables evaluated from the same weights.
        trace: Optional IDES trace recorder; without one, `config.trace_stride` records onto the report.

    Returns:
        EvaluationReport with per-phase trajectory counts.

    Raises:
        BudgetExceededError: If the budget cap is hit; carries the partial report.
        EnumerationCapError: If the deterministic sampling set is larger than the enumeration cap.
    """
    if not 0 < epsilon < 1 or not 0 < delta < 1:
        raise ValueError("epsilon and delta must lie in (0, 1)")
    if not policies:
        raise ValueError("At least one policy is required")
    for policy in policies:
        check_dimensions(mdp, policy)
    config = config or CaesarConfig()
    rng = _as_rng(rng)
    constants = config.resolved_constants()
    ledger = RolloutLedger(config.budget_cap)
    H, S, A = mdp.shape
    K = len(policies)
    own_trace = TraceRecorder(config.trace_stride) if trace is None and config.trace_stride is not None else None
    trace = trace if trace is not None else own_trace
    shares = split_delta(delta, config.failure_phases())
    progress: dict[str, Any] = {}

    def partial() -> EvaluationReport:
        return EvaluationReport(
            algorithm="caesar",
            estimates=[],
            phase_counts=PhaseCounts.from_ledger(ledger),
            epsilon=epsilon,
            delta=delta,
            seed=rng.seed,
            config=config.model_dump(mode="json"),
            delta_split=shares,
            complete=False,
            **progress,
        )

    try:
        coarse_epsilon = epsilon / (COARSE_DIVISOR * S * A)
        coarse_cfg = CoarseConfig(epsilon=coarse_epsilon, delta=shares["coarse"], c_univ=constants.c_univ)
        if config.coarse_trajectories is not None:
            estimates = [
                coarse_estimate(
                    mdp,
                    policy,
                    coarse_cfg,
                    rng.derive(Phase.COARSE, k),
                    num_trajectories=config.coarse_trajectories,
                    ledger=ledger,
                )
                for k, policy in enumerate(policies)
            ]
        else:
            estimates = coarse_estimate_all(mdp, policies, coarse_cfg, rng, ledger)
        progress["coarse_estimates"] = estimates
        thresholded = [threshold_low_mass(estimate, epsilon) for estimate in estimates]
        d_hats = np.stack([estimate.table.table for estimate in thresholded])

        generators = list(policies)
        hull: np.ndarray | None = None
        if config.sampling_set == "deterministic":
            extra = list(enumerate_deterministic_policies(mdp, config.enumeration_cap))
            extra_tables = _deterministic_tables(mdp, extra, config, coarse_epsilon, shares, constants, rng, ledger)
            generators += extra
            hull = np.concatenate([d_hats, extra_tables])
            logger.info("Sampling set: %d targets and %d deterministic policies", K, len(extra))

        solution = _solve(SamplingObjective(d_hats, hull), config.solver)
        progress["alpha"] = solution.alpha.alpha.tolist()
        progress["sampling_objective"] = solution.objective.tolist()
        logger.info(
            "Sampling mixture alpha=%s, objective=%.4g", np.round(solution.alpha.alpha, 4), solution.total_objective
        )

        ides_cfg = IdesConfig(
            epsilon=epsilon,
            delta=shares["ides"] / (K * H),
            c_h=constants.c_h,
            mom_factor=constants.mom_factor,
            mom_reps=config.mom_reps,
            max_iterations=config.max_ides_iterations,
        )
        source = MixtureDataSource(mdp, generators, solution.alpha, rng, Phase.IDES, ledger)
        holdout = MixtureDataSource(mdp, generators, solution.alpha, rng, Phase.HOLDOUT, ledger)
        results = run_ides_all(policies, d_hats, solution.mu_hat, source, holdout, ides_cfg, trace)
        progress["ides_iterations"] = [result.iterations for result in results]
        logger.info("IDES phase: %d trajectories, %d held out", ledger.counts[Phase.IDES], ledger.counts[Phase.HOLDOUT])

        n_final = config.final_trajectories or final_sample_size(
            d_hats,
            solution.mu_hat,
            epsilon / 2,
            shares["final"],
            constants,
            _reward_bound(mdp.rewards, reward_tables) if config.reward_aware else None,
        )
        batch = rollout_mixture_batch(mdp, generators, solution.alpha, n_final, rng.derive(Phase.FINAL), ledger)
        weights = [result.weights for result in results]
        values = final_estimator(weights, batch, mdp.rewards)
        by_reward = [final_estimator(weights, batch, np.asarray(r)).tolist() for r in reward_tables or []]
        logger.info("Final phase: %d trajectories; total %d", n_final, ledger.total)
    except BudgetExceededError as e:
        e.partial = partial()
        e.phase_counts = e.partial.phase_counts
        raise

    return EvaluationReport(
        algorithm="caesar",
        estimates=values.tolist(),
        oracle_values=_oracle_values(mdp, policies, config.oracle_limit),
        phase_counts=PhaseCounts.from_ledger(ledger),
        epsilon=epsilon,
        delta=delta,
        seed=rng.seed,
        config=config.model_dump(mode="json"),
        delta_split=shares,
        alpha=solution.alpha.alpha.tolist(),
        sampling_objective=solution.objective.tolist(),
        ides_iterations=[result.iterations for result in results],
        estimates_by_reward=by_reward or None,
        trace=own_trace.records() if own_trace is not None else None,
    )


def _deterministic_tables(
    mdp: TabularMdp,
    policies: Sequence[PolicyTable],
    config: CaesarConfig,
    epsilon: float,
    shares: dict[str, float],
    constants: Constants,
    rng: RngStream,
    ledger: RolloutLedger,
) -> np.ndarray:
    """Visitation tables of the deterministic policies, estimated from an oracle cover or exact."""
    if config.hull_source == "exact":
        return np.stack([exact_visitation(mdp, policy).table for policy in policies])
    march_cfg = MarchConfig(
        epsilon=epsilon,
        delta=shares["march"],
        c_univ=constants.c_univ,
        layer_trajectories=config.march_trajectories,
    )
    cover = build_cover(mdp, "oracle-cover")
    estimates = march_estimate_all(mdp, cover, policies, march_cfg, rng, ledger)
    # same cutoff as the target estimates
    return np.stack([threshold_low_mass(estimate, epsilon, per_entry=True).table.table for estimate in estimates])


def _reward_bound(rewards: np.ndarray, extra: Sequence[np.ndarray] | None) -> np.ndarray:
    """Entrywise max over all reward tables in use."""
    if not extra:
        return rewards
    return np.max(np.stack([rewards, *map(np.asarray, extra)]), axis=0)


def _solve(objective: SamplingObjective, cfg: SolverConfig) -> SamplingSolution:
    try:
        return solve_alpha(objective, cfg)
    except SolverNonConvergenceError as e:
        logger.warning("Mixture solver did not converge (gap %.3e); using best iterate", e.certificate_gap)
        return e.best_solution


# =============================================================================
# Baselines and checks
# =============================================================================


def mc_baseline(
    mdp: TabularMdp,
    policies: Sequence[PolicyTable],
    epsilon: float,
    delta: float,
    rng: RngStream | int = 0,
    budget_cap: int = DEFAULT_BUDGET_CAP,
    oracle_limit: int = 10**4,
) -> EvaluationReport:
    """
    On-policy Monte Carlo per target with n = ceil(H^2 ln(2K / delta) / (2 eps^2)) rollouts each.

    Raises:
        BudgetExceededError: If K n exceeds the cap.
    """
    rng = _as_rng(rng)
    ledger = RolloutLedger(budget_cap)
    H = mdp.horizon
    K = len(policies)
    n = math.ceil(H**2 * math.log(2 * K / delta) / (2 * epsilon**2))
    estimates = []
    for k, policy in enumerate(policies):
        batch = rollout_batch(mdp, policy, n, rng.derive(Phase.BASELINE, k), ledger)
        estimates.append(float(batch.rewards.sum(axis=1).mean()))
    logger.info("Monte Carlo baseline: %d policies x %d rollouts", K, n)
    return EvaluationReport(
        algorithm="mc",
        estimates=estimates,
        oracle_values=_oracle_values(mdp, policies, oracle_limit),
        phase_counts=PhaseCounts.from_ledger(ledger),
        epsilon=epsilon,
        delta=delta,
        seed=rng.seed,
        config={"rollouts_per_policy": n, "budget_cap": budget_cap},
    )


def deterministic_upper_bound_check(
    mdp: TabularMdp,
    cap: int = DEFAULT_ENUMERATION_CAP,
    solver: SolverConfig | None = None,
    rtol: float = 1e-2,
) -> float:
    """
    max_h max_k sum d^2 / mu_h over all deterministic policies, mu_h the per-step optimal mixture.

    Args:
        mdp: The environment.
        cap: Largest number of deterministic policies enumerated.
        solver: Mixture solver settings.
        rtol: Relative slack above S * A granted to an inexact solve.

    Returns:
        The objective value, at most S * A (1 + rtol).

    Raises:
        EnumerationCapError: If there are more than cap deterministic policies.
        WitnessBoundError: If the value exceeds S * A (1 + rtol).
    """
    solver = solver or SolverConfig()
    tables = np.stack([exact_visitation(mdp, policy).table for policy in enumerate_deterministic_policies(mdp, cap)])
    value = float(max(solution.objective.max() for solution in solve_alpha_per_step(SamplingObjective(tables), solver)))
    limit = mdp.num_states * mdp.num_actions
    if value > limit * (1 + rtol):
        raise WitnessBoundError(value, limit)
    return value
