"""
Model and policy generators for experiments and tests.
"""

import logging
import math

import numpy as np
from pydantic import BaseModel, Field

from multipolicy_eval.mdp import exact_visitation
from multipolicy_eval.models import MixtureWeights, PolicyTable, TabularMdp
from multipolicy_eval.sampler import RngStream
from multipolicy_eval.sampling_dist import SamplingObjective, SolverConfig, objective_value, solve_alpha

logger = logging.getLogger("multipolicy_eval")

# state indices of the two-layer constructions
ROOT, TARGET, OTHER = 0, 1, 2


def _two_layer_transitions(num_actions: int, p: float) -> np.ndarray:
    transitions = np.zeros((2, 3, num_actions, 3))
    transitions[:, :, :, ROOT] = 1.0
    transitions[0, ROOT, :, :] = 0.0
    transitions[0, ROOT, :, TARGET] = p
    transitions[0, ROOT, :, OTHER] = 1.0 - p
    return transitions


def gen_two_layer_k_example(
    num_policies: int, p: float, num_actions: int | None = None
) -> tuple[TabularMdp, list[PolicyTable]]:
    """
    Two-layer model where K policies differ only at the root.

    The root reaches the rewarding state with probability p whatever the action;
    policy k plays action k at the root and action 0 elsewhere, so every policy
    has value p and the same second-layer visitation.

    Args:
        num_policies: K.
        p: Probability of reaching the rewarding state.
        num_actions: A, defaults to K.

    Raises:
        ValueError: If K > A or p is outside (0, 1).
    """
    A = num_actions if num_actions is not None else num_policies
    if num_policies < 1 or num_policies > A:
        raise ValueError(f"Need 1 <= K <= A, got K={num_policies}, A={A}")
    if not 0 < p < 1:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    rewards = np.zeros((2, 3, A))
    rewards[1, TARGET, :] = 1.0
    mdp = TabularMdp(
        num_states=3,
        num_actions=A,
        horizon=2,
        initial_dist=np.eye(3)[ROOT],
        transitions=_two_layer_transitions(A, p),
        rewards=rewards,
    )
    policies = []
    for k in range(num_policies):
        actions = np.zeros((2, 3), dtype=int)
        actions[0, ROOT] = k
        policies.append(PolicyTable.deterministic(actions, A))
    return mdp, policies


def gen_unrealizable_example(num_policies: int, num_actions: int | None = None) -> tuple[TabularMdp, list[PolicyTable]]:
    """
    Two-layer model whose unconstrained optimal layer-2 law is not realizable.

    The root moves to either second-layer state with probability 1/2 under every
    action, so any policy puts mass 1/2 on the target state. Policy k plays
    action k there and action 0 elsewhere.

    Raises:
        ValueError: If K < 2 or K > A.
    """
    A = num_actions if num_actions is not None else num_policies
    if num_policies < 2 or num_policies > A:
        raise ValueError(f"Need 2 <= K <= A, got K={num_policies}, A={A}")
    rewards = np.zeros((2, 3, A))
    rewards[1, TARGET, :] = 1.0
    mdp = TabularMdp(
        num_states=3,
        num_actions=A,
        horizon=2,
        initial_dist=np.eye(3)[ROOT],
        transitions=_two_layer_transitions(A, 0.5),
        rewards=rewards,
    )
    policies = []
    for k in range(num_policies):
        actions = np.zeros((2, 3), dtype=int)
        actions[1, TARGET] = k
        policies.append(PolicyTable.deterministic(actions, A))
    return mdp, policies


def _dirichlet_rows(
    generator: np.random.Generator, shape: tuple[int, ...], size: int, sparsity: float
) -> np.ndarray:
    rows = generator.dirichlet(np.ones(size), size=shape)
    if sparsity > 0:
        keep = generator.random(rows.shape) >= sparsity
        # every row keeps at least one entry
        anchor = generator.integers(size, size=shape)
        np.put_along_axis(keep, anchor[..., None], True, axis=-1)
        rows = np.where(keep, rows, 0.0)
        rows /= rows.sum(axis=-1, keepdims=True)
    return rows


def gen_random_mdp(
    num_states: int,
    num_actions: int,
    horizon: int,
    sparsity: float = 0.0,
    seed: int = 0,
) -> TabularMdp:
    """
    Random model with Dirichlet(1) transition rows and uniform [0, 1] rewards.

    Args:
        num_states: S.
        num_actions: A.
        horizon: H.
        sparsity: Probability that a transition entry is zeroed (one entry per row always survives).
        seed: Generator seed.
    """
    if not 0 <= sparsity < 1:
        raise ValueError(f"sparsity must lie in [0, 1), got {sparsity}")
    generator = RngStream(seed).generator()
    transitions = _dirichlet_rows(generator, (horizon, num_states, num_actions), num_states, sparsity)
    return TabularMdp(
        num_states=num_states,
        num_actions=num_actions,
        horizon=horizon,
        initial_dist=generator.dirichlet(np.ones(num_states)),
        transitions=transitions,
        rewards=generator.random((horizon, num_states, num_actions)),
    )


def gen_chain_mdp(num_states: int, num_actions: int, horizon: int) -> TabularMdp:
    """
    Chain with a hard-to-reach end.

    Action 0 advances one state (the last state absorbs); every other action
    resets to state 0. The uniform random policy reaches depth h with
    probability A^-h while a reach-maximising policy gets there surely.
    Reward 1 is paid in the last state.
    """
    if num_states < 2 or num_actions < 2:
        raise ValueError("A chain needs S >= 2 and A >= 2")
    S, A, H = num_states, num_actions, horizon
    transitions = np.zeros((H, S, A, S))
    for s in range(S):
        transitions[:, s, 0, min(s + 1, S - 1)] = 1.0
        transitions[:, s, 1:, 0] = 1.0
    rewards = np.zeros((H, S, A))
    rewards[:, S - 1, :] = 1.0
    return TabularMdp(
        num_states=S,
        num_actions=A,
        horizon=H,
        initial_dist=np.eye(S)[0],
        transitions=transitions,
        rewards=rewards,
    )


def random_policies(mdp: TabularMdp, count: int, seed: int = 0, deterministic: bool = True) -> list[PolicyTable]:
    """count random policies: uniformly drawn actions, or Dirichlet(1) action rows."""
    generator = RngStream(seed).generator()
    H, S, A = mdp.shape
    if deterministic:
        return [PolicyTable.deterministic(generator.integers(A, size=(H, S)), A) for _ in range(count)]
    return [PolicyTable(horizon=H, table=generator.dirichlet(np.ones(A), size=(H, S))) for _ in range(count)]


# =============================================================================
# Unrealizable optimum
# =============================================================================


def unconstrained_layer_optimum(
    tables: np.ndarray, h: int, solver: SolverConfig | None = None
) -> tuple[np.ndarray, float]:
    """
    Minimise max_k sum d_k,h^2 / mu over every law mu on the (s, a) cells of step h.

    Only cells in the support of some target are candidates.

    Returns:
        (state marginal of the optimal law (S,), optimal value).
    """
    tables = np.asarray(tables, dtype=float)
    _, _, S, A = tables.shape
    step = tables[:, h : h + 1]
    cells = np.argwhere(np.any(step[:, 0] > 0, axis=0))
    hull = np.zeros((len(cells), 1, S, A))
    for j, (s, a) in enumerate(cells):
        hull[j, 0, s, a] = 1.0
    solution = solve_alpha(SamplingObjective(step, hull), solver)
    return solution.mu_hat[0].sum(axis=1), float(solution.total_objective)


class UnrealizableDemo(BaseModel):
    """Unconstrained layer-2 optimum against what any policy can realise."""

    num_policies: int = Field(ge=2)
    optimal_target_mass: float
    closed_form_mass: float
    reference_formula_mass: float
    realizable_mass: float
    unconstrained_value: float
    realizable_value: float


def unrealizable_demo(num_policies: int, solver: SolverConfig | None = None) -> UnrealizableDemo:
    """
    Solve the unconstrained layer-2 problem of gen_unrealizable_example.

    The optimum puts sqrt(K) / (1 + sqrt(K)) on the target state; the
    K^2 / (1 + K^2) form is reported alongside. Every policy realises 1/2.
    """
    mdp, policies = gen_unrealizable_example(num_policies)
    tables = np.stack([exact_visitation(mdp, policy).table for policy in policies])
    marginal, value = unconstrained_layer_optimum(tables, 1, solver)
    root_k = math.sqrt(num_policies)
    realizable = objective_value(SamplingObjective(tables), MixtureWeights.uniform(num_policies), 1)
    demo = UnrealizableDemo(
        num_policies=num_policies,
        optimal_target_mass=float(marginal[TARGET]),
        closed_form_mass=root_k / (1 + root_k),
        reference_formula_mass=num_policies**2 / (1 + num_policies**2),
        realizable_mass=float(tables[0, 1, TARGET].sum()),
        unconstrained_value=value,
        realizable_value=realizable,
    )
    logger.info(
        "Unrealizable optimum for K=%d: target mass %.4f vs realizable %.2f",
        num_policies,
        demo.optimal_target_mass,
        demo.realizable_mass,
    )
    return demo
