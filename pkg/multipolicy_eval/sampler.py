"""
Seeded trajectory generation.

Every random draw goes through an RngStream: a (seed, stream id) pair backed
by a counter-based Philox generator, so that pipeline phases can consume
disjoint streams. Stream ids carry their phase in the top byte; the
RolloutLedger uses that to count trajectories per phase and to enforce the
global budget.
"""

import json
import logging
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from multipolicy_eval.config import DEFAULT_BUDGET_CAP
from multipolicy_eval.errors import BudgetExceededError, DimensionMismatchError
from multipolicy_eval.mdp import check_dimensions
from multipolicy_eval.models import MixtureWeights, PolicyTable, TabularMdp, Trajectory, VisitationTable

logger = logging.getLogger("multipolicy_eval")

_PHASE_SHIFT = 56
_FIELD_LIMITS = ((40, 1 << 16), (24, 1 << 16), (0, 1 << 24))


class Phase(IntEnum):
    """Consumer of a stream; encoded in the top byte of the stream id."""

    UNASSIGNED = 0
    COARSE = 1
    IDES = 2
    HOLDOUT = 3
    FINAL = 4
    MARCH = 5
    BASELINE = 6
    IDENTIFY = 7
    EXPERIMENT = 8


def stream_id(phase: Phase, *parts: int) -> int:
    """
    Pack a phase and up to three sub-indices into a 64-bit stream id.

    Args:
        phase: Owning phase.
        *parts: Sub-indices (e.g. policy, step, repetition); at most three.

    Returns:
        The packed stream id.
    """
    if len(parts) > len(_FIELD_LIMITS):
        raise ValueError(f"At most {len(_FIELD_LIMITS)} stream sub-indices are supported, got {len(parts)}")
    packed = int(phase) << _PHASE_SHIFT
    for value, (shift, limit) in zip(parts, _FIELD_LIMITS, strict=False):
        if not 0 <= value < limit:
            raise ValueError(f"Stream sub-index {value} outside [0, {limit})")
        packed |= int(value) << shift
    return packed


def phase_of(stream: int) -> Phase:
    return Phase(stream >> _PHASE_SHIFT)


@dataclass(frozen=True)
class RngStream:
    """A reproducible, independent random stream: identical (seed, stream) gives identical draws."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.Philox(sequence))

    def derive(self, phase: Phase, *parts: int) -> "RngStream":
        """Stream of the given phase and sub-indices under the same seed."""
        return RngStream(self.seed, stream_id(phase, *parts))

    def child(self, phase: Phase, *parts: int) -> "RngStream":
        """Root stream of a fresh seed derived from this one (for nested pipelines)."""
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream, stream_id(phase, *parts)))
        return RngStream(int(sequence.generate_state(1, np.uint64)[0]))

    @property
    def phase(self) -> Phase:
        return phase_of(self.stream)


class RolloutLedger:
    """
    Counts trajectories per phase and enforces the global budget cap.

    Every rollout function accepts an optional ledger; the pipeline passes one
    ledger through all phases so its totals equal the sum of all rollout calls.
    """

    def __init__(self, budget_cap: int = DEFAULT_BUDGET_CAP):
        self.budget_cap = budget_cap
        self.counts: Counter[Phase] = Counter()
        self.streams: dict[tuple[int, int], Phase] = {}

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def remaining(self) -> int:
        return max(self.budget_cap - self.total, 0)

    def charge(self, rng: RngStream, n: int) -> None:
        """
        Record n trajectories drawn from rng.

        Raises:
            BudgetExceededError: If the cap would be exceeded; nothing is recorded.
        """
        if self.total + n > self.budget_cap:
            raise BudgetExceededError(
                f"Drawing {n} trajectories would exceed the budget cap of {self.budget_cap} "
                f"({self.total} already used)",
                phase_counts=self.as_dict(),
            )
        self.counts[rng.phase] += n
        self.streams[(rng.seed, rng.stream)] = rng.phase

    def streams_by_phase(self) -> dict[Phase, set[int]]:
        grouped: dict[Phase, set[int]] = {}
        for (_, stream), phase in self.streams.items():
            grouped.setdefault(phase, set()).add(stream)
        return grouped

    def phases_disjoint(self) -> bool:
        """True when no stream id was consumed by two different phases."""
        seen: dict[int, Phase] = {}
        for (_, stream), phase in self.streams.items():
            if seen.setdefault(stream, phase) != phase:
                return False
        return True

    def as_dict(self) -> dict[str, int]:
        return {phase.name.lower(): count for phase, count in sorted(self.counts.items())}


# =============================================================================
# Batches
# =============================================================================


@dataclass(frozen=True)
class TrajectoryBatch:
    """n trajectories as (n, H) arrays; policy_index is the mixture component of each row."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    policy_index: np.ndarray

    def __len__(self) -> int:
        return int(self.states.shape[0])

    @property
    def horizon(self) -> int:
        return int(self.states.shape[1])

    def visit_counts(self, num_states: int, num_actions: int) -> np.ndarray:
        """Counts of (h, s, a) over the batch, shape (H, S, A)."""
        counts = np.zeros((self.horizon, num_states, num_actions))
        steps = np.broadcast_to(np.arange(self.horizon), self.states.shape)
        np.add.at(counts, (steps, self.states, self.actions), 1.0)
        return counts

    def frequencies(self, num_states: int, num_actions: int) -> VisitationTable:
        """Empirical per-step state-action frequencies."""
        return VisitationTable(table=self.visit_counts(num_states, num_actions) / len(self), kind="empirical")

    def to_trajectories(self) -> list[Trajectory]:
        return [
            Trajectory(
                policy_index=int(self.policy_index[i]),
                steps=[
                    (int(s), int(a), float(r))
                    for s, a, r in zip(self.states[i], self.actions[i], self.rewards[i], strict=True)
                ],
            )
            for i in range(len(self))
        ]


def _sample_rows(generator: np.random.Generator, probabilities: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw of one index per row; zero-probability indices are never returned."""
    cdf = np.cumsum(probabilities, axis=-1)
    cdf /= cdf[..., -1:]
    u = 1.0 - generator.random(probabilities.shape[0])
    return np.minimum((cdf < u[:, None]).sum(axis=-1), probabilities.shape[-1] - 1)


def rollout_mixture_batch(
    mdp: TabularMdp,
    policies: Sequence[PolicyTable],
    alpha: MixtureWeights,
    n: int,
    rng: RngStream,
    ledger: RolloutLedger | None = None,
) -> TrajectoryBatch:
    """
    Draw n trajectories: k ~ alpha once per trajectory, then roll out pi^k.

    Args:
        mdp: The environment.
        policies: The K mixture components.
        alpha: Mixture weights of length K.
        n: Number of trajectories.
        rng: Stream to draw from.
        ledger: Optional budget ledger charged with n.

    Returns:
        The TrajectoryBatch; with K=1 it equals rollout_batch on the same stream.
    """
    if not policies:
        raise ValueError("At least one policy is required")
    if alpha.num_policies != len(policies):
        raise DimensionMismatchError(f"alpha has {alpha.num_policies} weights for {len(policies)} policies")
    for policy in policies:
        check_dimensions(mdp, policy)
    if ledger is not None:
        ledger.charge(rng, n)

    H = mdp.horizon
    tables = np.stack([policy.table for policy in policies])
    generator = rng.generator()
    if len(policies) == 1:
        index = np.zeros(n, dtype=int)
    else:
        index = _sample_rows(generator, np.broadcast_to(alpha.alpha, (n, alpha.num_policies)))

    states = np.zeros((n, H), dtype=int)
    actions = np.zeros((n, H), dtype=int)
    rewards = np.zeros((n, H))
    if n == 0:
        return TrajectoryBatch(states, actions, rewards, index)
    states[:, 0] = _sample_rows(generator, np.broadcast_to(mdp.initial_dist, (n, mdp.num_states)))
    for h in range(H):
        s = states[:, h]
        actions[:, h] = _sample_rows(generator, tables[index, h, s])
        a = actions[:, h]
        rewards[:, h] = mdp.rewards[h, s, a]
        if h + 1 < H:
            states[:, h + 1] = _sample_rows(generator, mdp.transitions[h, s, a])
    return TrajectoryBatch(states, actions, rewards, index)


def rollout_batch(
    mdp: TabularMdp,
    policy: PolicyTable,
    n: int,
    rng: RngStream,
    ledger: RolloutLedger | None = None,
) -> TrajectoryBatch:
    """n on-policy trajectories of a single policy."""
    return rollout_mixture_batch(mdp, [policy], MixtureWeights.point(0, 1), n, rng, ledger)


def rollout(mdp: TabularMdp, policy: PolicyTable, rng: RngStream, ledger: RolloutLedger | None = None) -> Trajectory:
    """One trajectory: s_1 ~ nu, a_h ~ pi_h(.|s_h), s_{h+1} ~ P_h(.|s_h, a_h)."""
    return rollout_batch(mdp, policy, 1, rng, ledger).to_trajectories()[0]


def rollout_mixture(
    mdp: TabularMdp,
    policies: Sequence[PolicyTable],
    alpha: MixtureWeights,
    n: int,
    rng: RngStream,
    ledger: RolloutLedger | None = None,
) -> list[tuple[int, Trajectory]]:
    """Mixture rollouts as (policy index, Trajectory) pairs."""
    batch = rollout_mixture_batch(mdp, policies, alpha, n, rng, ledger)
    return [(int(trajectory.policy_index or 0), trajectory) for trajectory in batch.to_trajectories()]


def dump_trajectories(batch: TrajectoryBatch, path: str | Path) -> None:
    """Write one JSON object per line: {"policy_index", "steps": [[s, a, r], ...]}."""
    with Path(path).open("w", encoding="utf-8") as handle:
        for trajectory in batch.to_trajectories():
            handle.write(json.dumps({"policy_index": trajectory.policy_index, "steps": trajectory.steps}) + "\n")
