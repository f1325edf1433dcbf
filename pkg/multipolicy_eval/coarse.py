"""
Coarse visitation estimation.

An estimate is coarse when |d_hat - d| <= max(eps, d / c) holds for every
(h, s, a) at once: additive below eps, multiplicative above. Empirical
frequencies reach this with O(log(1/(eps delta)) / eps) trajectories per policy.
Thresholding then removes entries below 5 eps' so that every surviving entry
is purely multiplicatively accurate.
"""

import logging
import math
from collections.abc import Sequence
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from multipolicy_eval.models import CoarseVisitation, PolicyTable, TabularMdp, VisitationTable
from multipolicy_eval.sampler import Phase, RngStream, RolloutLedger, rollout_batch

logger = logging.getLogger("multipolicy_eval")

THRESHOLD_MULTIPLIER = 5.0
THRESHOLD_DIVISOR = 14.0
SANDWICH_LOW = 0.8
SANDWICH_HIGH = 4.0 / 3.0


class CoarseConfig(BaseModel):
    """
    Accuracy settings for coarse estimation.

    Attributes:
        epsilon: Additive accuracy below which entries are only additively controlled.
        delta: Failure probability of the simultaneous event.
        c_mult: Multiplicative constant c of the max(eps, d / c) bound.
        c_univ: Universal sample-size constant C.
        slack: Additive term of the bound, "epsilon" (default) or "epsilon_over_c".
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    epsilon: float = Field(gt=0, lt=1)
    delta: float = Field(gt=0, lt=1)
    c_mult: float = Field(default=4.0, ge=1)
    c_univ: float = Field(default=32.0, gt=0)
    slack: Literal["epsilon", "epsilon_over_c"] = "epsilon"

    @property
    def additive_slack(self) -> float:
        return self.epsilon if self.slack == "epsilon" else self.epsilon / self.c_mult


def coarse_sample_size(cfg: CoarseConfig, k_policies: int) -> int:
    """
    Total trajectories for K policies: ceil(C K ln(C K / (eps delta)) / eps).

    Args:
        cfg: Coarse accuracy settings.
        k_policies: Number of policies sharing the failure budget.

    Returns:
        The trajectory count.
    """
    ck = cfg.c_univ * k_policies
    return math.ceil(ck * math.log(ck / (cfg.epsilon * cfg.delta)) / cfg.epsilon)


def per_policy_sample_size(cfg: CoarseConfig, k_policies: int) -> int:
    """Each policy's share of coarse_sample_size."""
    return math.ceil(coarse_sample_size(cfg, k_policies) / k_policies)


def coarse_estimate(
    mdp: TabularMdp,
    policy: PolicyTable,
    cfg: CoarseConfig,
    rng: RngStream,
    k_policies: int = 1,
    num_trajectories: int | None = None,
    ledger: RolloutLedger | None = None,
) -> CoarseVisitation:
    """
    Empirical per-step state-action frequencies of on-policy rollouts.

    Args:
        mdp: The environment.
        policy: Policy to estimate.
        cfg: Accuracy settings.
        rng: Stream to draw from.
        k_policies: Policies sharing the failure budget; sets the default sample size.
        num_trajectories: Override the sample size.
        ledger: Optional budget ledger.

    Returns:
        Unthresholded CoarseVisitation.
    """
    n = num_trajectories if num_trajectories is not None else per_policy_sample_size(cfg, k_policies)
    batch = rollout_batch(mdp, policy, n, rng, ledger)
    table = batch.visit_counts(mdp.num_states, mdp.num_actions) / max(n, 1)
    return CoarseVisitation(
        table=VisitationTable(table=table, kind="coarse"),
        epsilon_used=cfg.epsilon,
        num_trajectories=n,
    )


def coarse_estimate_all(
    mdp: TabularMdp,
    policies: Sequence[PolicyTable],
    cfg: CoarseConfig,
    rng: RngStream,
    ledger: RolloutLedger | None = None,
) -> list[CoarseVisitation]:
    """Coarse estimates for K policies on disjoint COARSE streams."""
    k_policies = len(policies)
    estimates = [
        coarse_estimate(mdp, policy, cfg, rng.derive(Phase.COARSE, k), k_policies=k_policies, ledger=ledger)
        for k, policy in enumerate(policies)
    ]
    logger.info(
        "Coarse phase: %d policies x %d trajectories (eps=%.3g)",
        k_policies,
        estimates[0].num_trajectories if estimates else 0,
        cfg.epsilon,
    )
    return estimates


def low_mass_cutoff(epsilon: float, num_states: int, num_actions: int) -> float:
    """5 eps' with eps' = eps / (14 S A)."""
    return THRESHOLD_MULTIPLIER * epsilon / (THRESHOLD_DIVISOR * num_states * num_actions)


def threshold_low_mass(est: CoarseVisitation, epsilon: float, per_entry: bool = False) -> CoarseVisitation:
    """
    Zero every entry below 5 eps'.

    Args:
        est: Coarse estimate built with per-entry accuracy eps'.
        epsilon: Overall accuracy eps, so eps' = eps / (14 S A); with per_entry
            the value is taken as eps' directly.
        per_entry: Interpret epsilon as eps'.

    Returns:
        Thresholded copy; entries are never increased.
    """
    table = est.table.table
    _, S, A = table.shape
    cutoff = THRESHOLD_MULTIPLIER * epsilon if per_entry else low_mass_cutoff(epsilon, S, A)
    kept = np.where(table >= cutoff, table, 0.0)
    zeroed = int(np.count_nonzero(table) - np.count_nonzero(kept))
    logger.debug("Thresholding at %.3g zeroed %d entries", cutoff, zeroed)
    return CoarseVisitation(
        table=VisitationTable(table=kept, kind="thresholded"),
        epsilon_used=est.epsilon_used,
        thresholded=True,
        num_trajectories=est.num_trajectories,
    )


# =============================================================================
# Oracle checks
# =============================================================================


def coarse_event_holds(
    estimate: np.ndarray,
    exact: np.ndarray,
    epsilon: float,
    c_mult: float = 4.0,
) -> bool:
    """True when |d_hat - d| <= max(eps, d / c) at every entry."""
    bound = np.maximum(epsilon, exact / c_mult)
    return bool(np.all(np.abs(estimate - exact) <= bound + 1e-12))


def sandwich_holds(estimate: np.ndarray, exact: np.ndarray) -> bool:
    """True when 0.8 d_hat <= d <= (4/3) d_hat on every nonzero estimate entry."""
    support = estimate > 0
    low = SANDWICH_LOW * estimate[support] - 1e-12
    high = SANDWICH_HIGH * estimate[support] + 1e-12
    values = exact[support]
    return bool(np.all((values >= low) & (values <= high)))


def ignored_mass(thresholded: np.ndarray, exact: np.ndarray) -> np.ndarray:
    """True mass per step on entries that thresholding zeroed."""
    return np.where(thresholded > 0, 0.0, exact).sum(axis=(1, 2))
