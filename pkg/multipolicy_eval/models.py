"""
Domain types for tabular finite-horizon MDPs.

All tables are numpy arrays indexed [h][s][a] (steps are 0-indexed) and are
frozen after construction so that models can be shared read-only across
workers. Shape checks happen at construction; probability invariants are
reported by `mdp.validate_mdp` / `mdp.validate_policy`.
"""

from typing import Annotated, Any, Literal

import numpy as np
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    WithJsonSchema,
    model_validator,
)

from multipolicy_eval.config import PROBABILITY_TOLERANCE


def _as_float_array(value: Any) -> np.ndarray:
    array = np.array(value, dtype=float)
    array.setflags(write=False)
    return array


FloatArray = Annotated[
    np.ndarray,
    BeforeValidator(_as_float_array),
    PlainSerializer(lambda array: array.tolist(), return_type=list),
    WithJsonSchema({"type": "array", "items": {}}),
]


class _ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True, extra="forbid")


# =============================================================================
# Model and policies
# =============================================================================


class TabularMdp(_ArrayModel):
    """
    Episodic tabular MDP with time-inhomogeneous dynamics.

    transitions[h] maps the step-h state-action pair to the step-(h+1) state;
    the last layer is carried for file-format symmetry and never read.
    """

    num_states: int = Field(ge=1)
    num_actions: int = Field(ge=1)
    horizon: int = Field(ge=1)
    initial_dist: FloatArray
    transitions: FloatArray
    rewards: FloatArray

    @model_validator(mode="after")
    def _check_shapes(self) -> "TabularMdp":
        S, A, H = self.num_states, self.num_actions, self.horizon
        expected = {
            "initial_dist": (S,),
            "transitions": (H, S, A, S),
            "rewards": (H, S, A),
        }
        for name, shape in expected.items():
            actual = getattr(self, name).shape
            if actual != shape:
                raise ValueError(f"{name} has shape {actual}, expected {shape}")
        return self

    @property
    def shape(self) -> tuple[int, int, int]:
        """(H, S, A) of every per-step table over this model."""
        return self.horizon, self.num_states, self.num_actions

    def with_rewards(self, rewards: Any) -> "TabularMdp":
        """Return a copy of this MDP with another reward table."""
        return TabularMdp(
            num_states=self.num_states,
            num_actions=self.num_actions,
            horizon=self.horizon,
            initial_dist=self.initial_dist,
            transitions=self.transitions,
            rewards=rewards,
        )


class PolicyTable(_ArrayModel):
    """Non-stationary policy: table[h, s, a] = pi_h(a|s)."""

    horizon: int = Field(ge=1)
    table: FloatArray

    @model_validator(mode="after")
    def _check_shape(self) -> "PolicyTable":
        if self.table.ndim != 3 or self.table.shape[0] != self.horizon:
            raise ValueError(f"table has shape {self.table.shape}, expected ({self.horizon}, S, A)")
        return self

    @property
    def num_states(self) -> int:
        return int(self.table.shape[1])

    @property
    def num_actions(self) -> int:
        return int(self.table.shape[2])

    @classmethod
    def deterministic(cls, actions: Any, num_actions: int) -> "PolicyTable":
        """
        Build a deterministic policy from an (H, S) array of action indices.

        Args:
            actions: Action chosen at each (h, s).
            num_actions: Size of the action space.

        Returns:
            The one-hot PolicyTable.
        """
        actions = np.asarray(actions, dtype=int)
        table = np.zeros(actions.shape + (num_actions,))
        np.put_along_axis(table, actions[..., None], 1.0, axis=-1)
        return cls(horizon=actions.shape[0], table=table)

    @classmethod
    def uniform(cls, horizon: int, num_states: int, num_actions: int) -> "PolicyTable":
        return cls(horizon=horizon, table=np.full((horizon, num_states, num_actions), 1.0 / num_actions))


class PolicySet(BaseModel):
    """On-disk container for several policies."""

    model_config = ConfigDict(extra="forbid")

    policies: list[PolicyTable] = Field(min_length=1)


# =============================================================================
# Distributions
# =============================================================================


VisitationKind = Literal["exact", "empirical", "coarse", "thresholded", "mixture", "cover"]


class VisitationTable(_ArrayModel):
    """Per-step state-action mass table v[h, s, a]."""

    table: FloatArray
    kind: VisitationKind = "exact"

    @model_validator(mode="after")
    def _check_table(self) -> "VisitationTable":
        if self.table.ndim != 3:
            raise ValueError(f"visitation table must be 3-dimensional, got shape {self.table.shape}")
        if np.any(self.table < 0):
            raise ValueError("visitation table has negative entries")
        return self

    @property
    def horizon(self) -> int:
        return int(self.table.shape[0])

    def step_mass(self) -> np.ndarray:
        """Total mass per step."""
        return self.table.sum(axis=(1, 2))

    def state_marginal(self) -> np.ndarray:
        """v[h, s] summed over actions."""
        return self.table.sum(axis=2)


class MixtureWeights(_ArrayModel):
    """Simplex weights over K target policies."""

    alpha: FloatArray

    @model_validator(mode="after")
    def _check_simplex(self) -> "MixtureWeights":
        if self.alpha.ndim != 1 or self.alpha.size == 0:
            raise ValueError("alpha must be a non-empty vector")
        if np.any(self.alpha < 0):
            raise ValueError("alpha has negative entries")
        if abs(float(self.alpha.sum()) - 1.0) > PROBABILITY_TOLERANCE:
            raise ValueError(f"alpha sums to {self.alpha.sum()!r}, expected 1")
        return self

    @property
    def num_policies(self) -> int:
        return int(self.alpha.size)

    @classmethod
    def uniform(cls, num_policies: int) -> "MixtureWeights":
        return cls(alpha=np.full(num_policies, 1.0 / num_policies))

    @classmethod
    def point(cls, index: int, num_policies: int) -> "MixtureWeights":
        alpha = np.zeros(num_policies)
        alpha[index] = 1.0
        return cls(alpha=alpha)


class CoarseVisitation(BaseModel):
    """Coarse estimate of one policy's visitation distribution."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    table: VisitationTable
    epsilon_used: float = Field(gt=0)
    thresholded: bool = False
    num_trajectories: int = Field(default=0, ge=0)


class ImportanceWeightTable(_ArrayModel):
    """
    Importance weights for one target policy.

    weights[h, s, a] estimates d_h(s,a) * mu_hat_h(s,a) / mu_tilde_h(s,a), so that
    ratio() estimates the density ratio of the target against the sampling mixture.
    """

    weights: FloatArray
    mu_hat: FloatArray

    @model_validator(mode="after")
    def _check_shapes(self) -> "ImportanceWeightTable":
        if self.weights.shape != self.mu_hat.shape:
            raise ValueError(f"weights {self.weights.shape} and mu_hat {self.mu_hat.shape} differ in shape")
        return self

    def ratio(self) -> np.ndarray:
        """w / mu_hat on the support of mu_hat, 0 elsewhere."""
        out = np.zeros_like(self.weights)
        np.divide(self.weights, self.mu_hat, out=out, where=self.mu_hat > 0)
        return out


# =============================================================================
# Trajectories and reports
# =============================================================================


class Trajectory(BaseModel):
    """One episode of exactly H (state, action, reward) steps."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    policy_index: int | None = None
    steps: list[tuple[int, int, float]]

    @property
    def states(self) -> list[int]:
        return [step[0] for step in self.steps]

    @property
    def actions(self) -> list[int]:
        return [step[1] for step in self.steps]

    @property
    def total_reward(self) -> float:
        return sum(step[2] for step in self.steps)


class Violation(BaseModel):
    """One violated model invariant."""

    kind: str
    index: list[int] = Field(default_factory=list)
    detail: str


class ValidationReport(BaseModel):
    """Outcome of validating a model or a policy."""

    violations: list[Violation] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self, limit: int = 5) -> str:
        """Short human-readable rendering of the first few violations."""
        if self.ok:
            return "pass"
        head = "; ".join(f"{v.kind} at {v.index}: {v.detail}" for v in self.violations[:limit])
        more = len(self.violations) - limit
        return head + (f" (and {more} more)" if more > 0 else "")
