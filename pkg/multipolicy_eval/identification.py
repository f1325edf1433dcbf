"""
Near-optimal policy identification by successive elimination.

Round i evaluates the surviving candidates to accuracy gamma = 2^-i and drops
every candidate whose estimate trails the best one by more than 2 gamma.
After ceil(log2(4 / eps)) rounds any survivor is eps-optimal.
"""

import logging
import math
from collections.abc import Sequence

import numpy as np
from pydantic import BaseModel, Field

from multipolicy_eval.caesar import CaesarConfig, evaluate_policies
from multipolicy_eval.models import PolicyTable, TabularMdp
from multipolicy_eval.sampler import Phase, RngStream

logger = logging.getLogger("multipolicy_eval")


class RoundRecord(BaseModel):
    """Audit entry for one elimination round; estimates are indexed like survivors_before."""

    round: int
    gamma: float
    delta: float
    survivors_before: list[int]
    estimates: list[float]
    estimates_by_reward: list[list[float]] | None = None
    survivors: list[int]
    budget: int


class IdentificationState(BaseModel):
    """Audit trail of an identification run."""

    num_candidates: int
    epsilon: float
    delta: float
    max_rounds: int
    rounds: list[RoundRecord] = Field(default_factory=list)
    chosen: int | None = None
    multi_reward: bool = False

    @property
    def survivors(self) -> list[int]:
        return self.rounds[-1].survivors if self.rounds else list(range(self.num_candidates))

    @property
    def total_budget(self) -> int:
        return sum(record.budget for record in self.rounds)


def round_count(epsilon: float) -> int:
    """ceil(log2(4 / eps)), at least 1."""
    return max(1, math.ceil(math.log2(4.0 / epsilon)))


def eliminate(estimates: Sequence[float], gamma: float) -> list[int]:
    """
    Positions of estimates within 2 gamma of the maximum.

    The empirical maximum always survives, so the result is never empty for
    a nonempty input.
    """
    if not estimates:
        return []
    values = np.asarray(estimates, dtype=float)
    return [int(i) for i in np.flatnonzero(values.max() - values <= 2 * gamma)]


def eliminate_multi_reward(estimates: np.ndarray | Sequence[Sequence[float]], gamma: float) -> list[int]:
    """
    Multi-reward elimination: estimates has one row per reward table.

    A position is removed only if it trails the best by more than 2 gamma under
    every reward.
    """
    values = np.asarray(estimates, dtype=float)
    if values.ndim != 2:
        raise ValueError("Expected a (rewards, candidates) array")
    if values.shape[1] == 0:
        return []
    kept = values.max(axis=1, keepdims=True) - values <= 2 * gamma
    return [int(i) for i in np.flatnonzero(kept.any(axis=0))]


def elimination_consistent(record: RoundRecord, oracle_values: Sequence[float]) -> bool | None:
    """
    Check a round against oracle values.

    Returns None when some estimate was not gamma-accurate. Otherwise True when
    the best candidate survived and every candidate with gap above 4 gamma was
    removed.
    """
    truth = np.asarray([oracle_values[k] for k in record.survivors_before])
    errors = np.abs(np.asarray(record.estimates) - truth)
    if np.any(errors > record.gamma):
        return None
    best = truth.max()
    for position, k in enumerate(record.survivors_before):
        gap = best - truth[position]
        if gap == 0 and k not in record.survivors:
            return False
        if gap > 4 * record.gamma and k in record.survivors:
            return False
    return True


def identify(
    mdp: TabularMdp,
    policies: Sequence[PolicyTable],
    epsilon: float,
    delta: float,
    config: CaesarConfig | None = None,
    rng: RngStream | int = 0,
    reward_tables: Sequence[np.ndarray] | None = None,
) -> IdentificationState:
    """
    Pick an eps-optimal candidate with probability at least 1 - delta.

    Args:
        mdp: The environment.
        policies: Candidate policies.
        epsilon: Optimality gap.
        delta: Failure probability, split evenly over the rounds.
        config: Settings for each evaluation round.
        rng: Root stream or seed; round i evaluates on child(IDENTIFY, i).
        reward_tables: When given, eliminate under several rewards at once (experimental).

    Returns:
        IdentificationState with the chosen index and the round audit.
    """
    if not policies:
        raise ValueError("At least one candidate policy is required")
    if not 0 < epsilon < 1 or not 0 < delta < 1:
        raise ValueError("epsilon and delta must lie in (0, 1)")
    rng = rng if isinstance(rng, RngStream) else RngStream(int(rng))
    max_rounds = round_count(epsilon)
    state = IdentificationState(
        num_candidates=len(policies),
        epsilon=epsilon,
        delta=delta,
        max_rounds=max_rounds,
        multi_reward=bool(reward_tables),
    )
    survivors = list(range(len(policies)))
    round_delta = delta / max_rounds

    for i in range(1, max_rounds + 1):
        if len(survivors) == 1:
            break
        gamma = 2.0**-i
        report = evaluate_policies(
            mdp,
            [policies[k] for k in survivors],
            gamma,
            round_delta,
            config,
            rng.child(Phase.IDENTIFY, i),
            reward_tables=reward_tables,
        )
        if reward_tables:
            by_reward = report.estimates_by_reward or []
            kept = eliminate_multi_reward(by_reward, gamma)
        else:
            by_reward = None
            kept = eliminate(report.estimates, gamma)
        record = RoundRecord(
            round=i,
            gamma=gamma,
            delta=round_delta,
            survivors_before=survivors,
            estimates=report.estimates,
            estimates_by_reward=by_reward,
            survivors=[survivors[position] for position in kept],
            budget=report.phase_counts.total,
        )
        state.rounds.append(record)
        logger.info(
            "Round %d (gamma=%.4g): %d -> %d candidates, %d trajectories",
            i,
            gamma,
            len(survivors),
            len(record.survivors),
            record.budget,
        )
        survivors = record.survivors

    pick = rng.derive(Phase.IDENTIFY, 0).generator().integers(len(survivors))
    state.chosen = survivors[int(pick)]
    return state
