"""
Layer-wise coarse estimation for many policies from one covering distribution.

Every layer draws a single batch from a cover mu and reuses it for all
policies: the estimate at h + 1 is the next-state mass of cover samples
reweighted by d_hat_h / mu_hat_h (clipped at 2 H S A), times pi_{h+1}(a | s).
Accuracy is tracked with the beta-distance

    dist^beta(x, y) = min_{alpha in [1 / beta, beta]} |alpha x - y|

which is zero inside the multiplicative band and additive outside it.
"""

import logging
import math
from collections.abc import Sequence
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from multipolicy_eval.coarse import CoarseConfig, coarse_sample_size
from multipolicy_eval.config import CALIBRATED_CONSTANTS
from multipolicy_eval.errors import CoverSupportError, DimensionMismatchError, EnumerationCapError
from multipolicy_eval.mdp import check_dimensions, exact_visitation, max_reach_policy, max_reach_visitation
from multipolicy_eval.models import (
    CoarseVisitation,
    MixtureWeights,
    PolicyTable,
    TabularMdp,
    ValidationReport,
    VisitationTable,
    Violation,
)
from multipolicy_eval.sampler import Phase, RngStream, RolloutLedger, rollout_mixture_batch

logger = logging.getLogger("multipolicy_eval")

CLIP_FACTOR = 2.0
COVER_FACTOR = 2.0
DIAGNOSTIC_BETA = math.e**2

CoverMode = Literal["oracle-cover", "uniform-mixture"]


# =============================================================================
# Beta-distance
# =============================================================================


class BetaDistanceParams(BaseModel):
    """Distance parameter beta >= 1."""

    model_config = ConfigDict(frozen=True)

    beta: float = Field(ge=1)

    @classmethod
    def for_horizon(cls, horizon: int) -> "BetaDistanceParams":
        return cls(beta=1.0 + 1.0 / horizon)


def _beta_dist_array(x: np.ndarray, y: np.ndarray, beta: float) -> np.ndarray:
    if beta < 1:
        raise ValueError(f"beta must be >= 1, got {beta}")
    if np.any(x < 0) or np.any(y < 0):
        raise ValueError("beta-distance is defined for nonnegative inputs")
    below = x / beta - y
    above = y - beta * x
    return np.maximum(np.maximum(below, above), 0.0)


def beta_dist(x: float, y: float, beta: float) -> float:
    """
    Closed form of min over alpha in [1 / beta, beta] of |alpha x - y|.

    Zero when y lies in [x / beta, beta x]; otherwise the distance to the
    nearer end of that band (y itself when x = 0).

    Raises:
        ValueError: If x or y is negative or beta < 1.
    """
    return float(_beta_dist_array(np.asarray(x, dtype=float), np.asarray(y, dtype=float), beta))


def beta_dist_vec(x: Sequence[float] | np.ndarray, y: Sequence[float] | np.ndarray, beta: float) -> float:
    """Coordinatewise sum of beta_dist over equal-shaped arrays."""
    x_arr = np.asarray(x, dtype=float)
    y_arr = np.asarray(y, dtype=float)
    if x_arr.shape != y_arr.shape:
        raise DimensionMismatchError(f"beta-distance of shapes {x_arr.shape} and {y_arr.shape}")
    return float(_beta_dist_array(x_arr, y_arr, beta).sum())


class BetaDistanceReport(BaseModel):
    """Per-step dist^beta(d_hat_h, d_h) with an optional reference bound."""

    beta: float
    values: list[float]
    bound: float | None = None

    @property
    def within_bound(self) -> bool:
        return self.bound is None or all(value <= self.bound + 1e-12 for value in self.values)


def beta_dist_diagnostic(
    estimate: VisitationTable | np.ndarray,
    exact: VisitationTable | np.ndarray,
    epsilon: float | None = None,
    beta: float = DIAGNOSTIC_BETA,
) -> BetaDistanceReport:
    """
    Per-step beta-distance between an estimate and the exact visitation.

    Args:
        estimate: Estimated (H, S, A) table.
        exact: Exact (H, S, A) table.
        epsilon: When given, the bound H (1 + beta) epsilon is reported alongside.
        beta: Distance parameter, e^2 by default.

    Returns:
        BetaDistanceReport with one value per step.
    """
    d_hat = estimate.table if isinstance(estimate, VisitationTable) else np.asarray(estimate, dtype=float)
    d = exact.table if isinstance(exact, VisitationTable) else np.asarray(exact, dtype=float)
    if d_hat.shape != d.shape:
        raise DimensionMismatchError(f"estimate {d_hat.shape} vs exact {d.shape}")
    values = _beta_dist_array(d_hat, d, beta).sum(axis=(1, 2))
    bound = None if epsilon is None else d.shape[0] * (1.0 + beta) * epsilon
    return BetaDistanceReport(beta=beta, values=values.tolist(), bound=bound)


# =============================================================================
# Covers
# =============================================================================


class CoverDistribution(BaseModel):
    """
    A sampling distribution realised as a mixture of policies.

    Attributes:
        table: Exact per-step visitation of the mixture.
        policies: Mixture components.
        alpha: Mixture weights.
        provenance: How the cover was built.
    """

    model_config = ConfigDict(frozen=True)

    table: VisitationTable
    policies: list[PolicyTable]
    alpha: MixtureWeights
    provenance: CoverMode


def build_cover(mdp: TabularMdp, mode: CoverMode = "oracle-cover", cap: int = 10**6) -> CoverDistribution:
    """
    Build a covering distribution.

    "oracle-cover" mixes, uniformly, one reach-maximising deterministic policy
    per (h, s, a), so mu_h(s, a) >= d_max_h(s, a) / (H S A). "uniform-mixture"
    is the uniform random policy and carries no guarantee.

    Args:
        mdp: The environment.
        mode: Cover construction.
        cap: Largest number of mixture components accepted for "oracle-cover".

    Raises:
        EnumerationCapError: If H * S * A exceeds cap.
    """
    H, S, A = mdp.shape
    if mode == "uniform-mixture":
        policies = [PolicyTable.uniform(H, S, A)]
    elif mode == "oracle-cover":
        count = H * S * A
        if count > cap:
            raise EnumerationCapError(count, cap)
        policies = [max_reach_policy(mdp, h, s, a) for h in range(H) for s in range(S) for a in range(A)]
    else:
        raise ValueError(f"Unknown cover mode: {mode}")
    alpha = MixtureWeights.uniform(len(policies))
    table = np.einsum("k,khsa->hsa", alpha.alpha, np.stack([exact_visitation(mdp, p).table for p in policies]))
    logger.info("Built %s with %d components", mode, len(policies))
    return CoverDistribution(
        table=VisitationTable(table=table, kind="cover"),
        policies=policies,
        alpha=alpha,
        provenance=mode,
    )


def coverage_violations(mdp: TabularMdp, cover: CoverDistribution, epsilon: float) -> ValidationReport:
    """
    Entries breaking mu_h(s, a) >= d_max_h(s, a) / (2 H S A) where d_max_h(s) >= eps / (S A).

    A failing report is also logged as a warning.
    """
    H, S, A = mdp.shape
    d_max = max_reach_visitation(mdp).table
    relevant = d_max >= epsilon / (S * A)
    short = cover.table.table < d_max / (COVER_FACTOR * H * S * A) - 1e-12
    report = ValidationReport(
        violations=[
            Violation(
                kind="coverage",
                index=[int(i) for i in index],
                detail=f"mu={cover.table.table[tuple(index)]:.3g} d_max={d_max[tuple(index)]:.3g}",
            )
            for index in np.argwhere(relevant & short)
        ]
    )
    if not report.ok:
        logger.warning("%s does not cover %d entries: %s", cover.provenance, len(report.violations), report.summary())
    return report


# =============================================================================
# Layer-wise estimation
# =============================================================================


class MarchConfig(BaseModel):
    """
    Settings for layer-wise estimation from a cover.

    Attributes:
        epsilon: Target additive accuracy of every returned entry.
        delta: Failure probability, split evenly over the H layers.
        c_univ: Sample-size constant of the per-layer coarse estimates.
        layer_trajectories: Override the per-layer cover batch size.
        strict: Raise CoverSupportError instead of warning when estimated mass
            sits where mu_hat is zero.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    epsilon: float = Field(gt=0, lt=1)
    delta: float = Field(gt=0, lt=1)
    c_univ: float = Field(default=CALIBRATED_CONSTANTS.c_univ, gt=0)
    layer_trajectories: int | None = Field(default=None, ge=1)
    strict: bool = False

    def layer_epsilon(self, mdp: TabularMdp) -> float:
        """eps' = eps / (2 H^2 S^2 A^2)."""
        H, S, A = mdp.shape
        return self.epsilon / (2 * H**2 * S**2 * A**2)

    def layer_sample_size(self, mdp: TabularMdp) -> int:
        """Single-policy coarse sample size at eps' and delta / H."""
        if self.layer_trajectories is not None:
            return self.layer_trajectories
        coarse = CoarseConfig(epsilon=self.layer_epsilon(mdp), delta=self.delta / mdp.horizon, c_univ=self.c_univ)
        return coarse_sample_size(coarse, 1)


def clipped_ratio(d_hat: np.ndarray, mu_hat: np.ndarray, clip: float) -> np.ndarray:
    """d_hat / mu_hat where mu_hat > 0, else 0, clipped at clip."""
    safe = np.where(mu_hat > 0, mu_hat, 1.0)
    return np.minimum(np.where(mu_hat > 0, d_hat / safe, 0.0), clip)


def march_estimate_all(
    mdp: TabularMdp,
    cover: CoverDistribution,
    policies: Sequence[PolicyTable],
    cfg: MarchConfig,
    rng: RngStream,
    ledger: RolloutLedger | None = None,
) -> list[CoarseVisitation]:
    """
    Coarse visitation estimates for many policies from shared cover batches.

    Per layer h two cover batches are drawn: one for mu_hat_h and one whose
    (s_h, a_h, s_{h+1}) triples propagate every policy's estimate to h + 1.
    The first layer is nu_hat(s) pi_0(a | s) with nu_hat from the step-0 states.

    Args:
        mdp: The environment.
        cover: Covering distribution.
        policies: Policies to estimate; deterministic or stochastic.
        cfg: Accuracy settings.
        rng: Base stream; layers draw from MARCH streams (h, 0) and (h, 1).
        ledger: Optional budget ledger.

    Returns:
        One CoarseVisitation per policy, in order.

    Raises:
        CoverSupportError: In strict mode, when a policy's estimate has mass
            where mu_hat is zero.
    """
    if not policies:
        raise ValueError("At least one policy is required")
    for policy in policies:
        check_dimensions(mdp, policy)
    H, S, A = mdp.shape
    K = len(policies)
    n = cfg.layer_sample_size(mdp)
    clip = CLIP_FACTOR * H * S * A
    pi = np.stack([policy.table for policy in policies])

    estimates = np.zeros((K, H, S, A))
    drawn = 0
    lost_mass = 0.0
    for h in range(H):
        mu_batch = rollout_mixture_batch(
            mdp, cover.policies, cover.alpha, n, rng.derive(Phase.MARCH, h, 0), ledger
        )
        drawn += n
        if h == 0:
            nu_hat = np.bincount(mu_batch.states[:, 0], minlength=S) / n
            estimates[:, 0] = nu_hat[None, :, None] * pi[:, 0]
        if h + 1 == H:
            break
        mu_hat = mu_batch.visit_counts(S, A)[h] / n
        uncovered = (estimates[:, h] > 0) & (mu_hat[None] == 0)
        if uncovered.any():
            mass = float(estimates[:, h][uncovered].sum())
            if cfg.strict:
                raise CoverSupportError(f"Step {h}: estimated mass {mass:.3g} lies where the cover estimate is zero")
            lost_mass += mass
        ratio = clipped_ratio(estimates[:, h], mu_hat[None], clip)

        step_batch = rollout_mixture_batch(
            mdp, cover.policies, cover.alpha, n, rng.derive(Phase.MARCH, h, 1), ledger
        )
        drawn += n
        s, a, s_next = step_batch.states[:, h], step_batch.actions[:, h], step_batch.states[:, h + 1]
        weights = ratio[:, s, a]
        state_mass = np.stack([np.bincount(s_next, weights=w, minlength=S) for w in weights]) / n
        estimates[:, h + 1] = state_mass[:, :, None] * pi[:, h + 1]
        logger.debug("Layer %d: max weight %.3g over %d samples", h, float(weights.max(initial=0.0)), n)

    if lost_mass > 0:
        logger.warning("Cover misses %.3g total estimated mass; it was dropped", lost_mass)
    logger.info("Layer-wise estimation: %d policies from %d cover trajectories", K, drawn)
    return [
        CoarseVisitation(
            table=VisitationTable(table=estimates[k], kind="coarse"),
            epsilon_used=cfg.epsilon,
            num_trajectories=drawn,
        )
        for k in range(K)
    ]


def march_estimate(
    mdp: TabularMdp,
    cover: CoverDistribution,
    policy: PolicyTable,
    epsilon: float,
    rng: RngStream,
    cfg: MarchConfig | None = None,
    ledger: RolloutLedger | None = None,
) -> CoarseVisitation:
    """Single-policy form of march_estimate_all; cfg defaults to delta = 0.1 at the given epsilon."""
    if cfg is None:
        cfg = MarchConfig(epsilon=epsilon, delta=0.1)
    elif cfg.epsilon != epsilon:
        cfg = cfg.model_copy(update={"epsilon": epsilon})
    return march_estimate_all(mdp, cover, [policy], cfg, rng, ledger)[0]
