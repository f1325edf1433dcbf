"""
Exact dynamic-programming oracle for tabular MDPs.

Forward visitation recursion, policy values (forward and backward), brute
force path enumeration, deterministic policy enumeration, the reach
probability oracle and JSON model I/O.
"""

import itertools
import json
import logging
from collections.abc import Iterator
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import TypeAdapter, ValidationError

from multipolicy_eval.config import DEFAULT_ENUMERATION_CAP, PROBABILITY_TOLERANCE
from multipolicy_eval.errors import DimensionMismatchError, EnumerationCapError, InvalidModelError
from multipolicy_eval.models import (
    PolicySet,
    PolicyTable,
    TabularMdp,
    ValidationReport,
    Violation,
    VisitationTable,
)

logger = logging.getLogger("multipolicy_eval")

_POLICY_FILE = TypeAdapter(PolicySet | PolicyTable)


# =============================================================================
# Validation
# =============================================================================


def _probability_violations(kind: str, rows: np.ndarray) -> list[Violation]:
    """Check that the last axis of `rows` holds finite probability vectors."""
    violations = []
    finite = np.isfinite(rows)
    for index in np.argwhere(np.asarray(~np.all(finite, axis=-1))):
        violations.append(
            Violation(kind=f"{kind}_nonfinite", index=list(map(int, index)), detail="NaN or infinite entry")
        )
    # non-finite rows are reported once, above
    rows = np.where(finite, rows, 0.0)
    sums = np.where(np.all(finite, axis=-1), rows.sum(axis=-1), 1.0)
    for index in np.argwhere(np.asarray(np.any(rows < 0, axis=-1))):
        violations.append(
            Violation(kind=f"{kind}_negative", index=list(map(int, index)), detail="negative entry")
        )
    for index in np.argwhere(np.abs(sums - 1.0) > PROBABILITY_TOLERANCE):
        violations.append(
            Violation(
                kind=f"{kind}_sum",
                index=list(map(int, index)),
                detail=f"row sums to {float(sums[tuple(index)]):.12g}",
            )
        )
    return violations


def validate_mdp(mdp: TabularMdp) -> ValidationReport:
    """
    Check the probability and reward invariants of a model.

    Args:
        mdp: The model to check.

    Returns:
        A report listing every violated invariant with its (h, s, a) index.
    """
    violations = _probability_violations("transition", mdp.transitions)
    violations.extend(_probability_violations("initial_dist", mdp.initial_dist))
    finite = np.isfinite(mdp.rewards)
    for index in np.argwhere(~finite):
        violations.append(
            Violation(
                kind="reward_nonfinite",
                index=list(map(int, index)),
                detail=f"reward {float(mdp.rewards[tuple(index)])!r}",
            )
        )
    for index in np.argwhere(finite & ((mdp.rewards < 0) | (mdp.rewards > 1))):
        violations.append(
            Violation(
                kind="reward_range",
                index=list(map(int, index)),
                detail=f"reward {float(mdp.rewards[tuple(index)])!r} outside [0, 1]",
            )
        )
    return ValidationReport(violations=violations)


def validate_policy(policy: PolicyTable, mdp: TabularMdp | None = None) -> ValidationReport:
    """Check that every pi_h(.|s) is a distribution, and dimensions when a model is given."""
    violations = []
    if mdp is not None and policy.table.shape != mdp.shape:
        violations.append(
            Violation(kind="policy_shape", detail=f"policy shape {policy.table.shape} != model shape {mdp.shape}")
        )
    violations.extend(_probability_violations("policy", policy.table))
    return ValidationReport(violations=violations)


def check_dimensions(mdp: TabularMdp, policy: PolicyTable) -> None:
    """Raise DimensionMismatchError unless the policy table is (H, S, A) for this model."""
    if policy.table.shape != mdp.shape:
        raise DimensionMismatchError(f"Policy table has shape {policy.table.shape}, model expects {mdp.shape}")


# =============================================================================
# Oracle
# =============================================================================


def exact_visitation(mdp: TabularMdp, policy: PolicyTable) -> VisitationTable:
    """
    Exact per-step state-action visitation d_h(s,a) by forward recursion.

    Args:
        mdp: The model.
        policy: A policy over the same (H, S, A).

    Returns:
        VisitationTable of kind "exact"; every step sums to 1.
    """
    check_dimensions(mdp, policy)
    visitation = np.empty(mdp.shape)
    state_dist = mdp.initial_dist
    for h in range(mdp.horizon):
        visitation[h] = state_dist[:, None] * policy.table[h]
        if h + 1 < mdp.horizon:
            state_dist = np.einsum("sa,sat->t", visitation[h], mdp.transitions[h])
    return VisitationTable(table=visitation, kind="exact")


def exact_value(mdp: TabularMdp, policy: PolicyTable) -> float:
    """Policy value V_1 = sum over h, s, a of d_h(s,a) r_h(s,a)."""
    return float(np.sum(exact_visitation(mdp, policy).table * mdp.rewards))


def backward_value(mdp: TabularMdp, policy: PolicyTable) -> float:
    """Policy value by backward induction, independent of the forward recursion."""
    check_dimensions(mdp, policy)
    value_next = np.zeros(mdp.num_states)
    for h in reversed(range(mdp.horizon)):
        q = mdp.rewards[h].copy()
        if h + 1 < mdp.horizon:
            q += mdp.transitions[h] @ value_next
        value_next = np.sum(policy.table[h] * q, axis=1)
    return float(mdp.initial_dist @ value_next)


def enumerate_trajectories(mdp: TabularMdp, policy: PolicyTable, max_paths: int = 4096) -> VisitationTable:
    """
    Visitation by brute force: sum path probabilities over all (S*A)^H paths.

    Args:
        mdp: The model.
        policy: A policy over the same (H, S, A).
        max_paths: Refuse larger path spaces.

    Returns:
        VisitationTable of kind "exact".
    """
    check_dimensions(mdp, policy)
    H, S, A = mdp.shape
    num_paths = (S * A) ** H
    if num_paths > max_paths:
        raise EnumerationCapError(num_paths, max_paths)

    visitation = np.zeros(mdp.shape)
    pairs = list(itertools.product(range(S), range(A)))
    for path in itertools.product(pairs, repeat=H):
        s0, a0 = path[0]
        probability = mdp.initial_dist[s0] * policy.table[0, s0, a0]
        for h in range(1, H):
            (s_prev, a_prev), (s, a) = path[h - 1], path[h]
            probability *= mdp.transitions[h - 1, s_prev, a_prev, s] * policy.table[h, s, a]
        if probability == 0.0:
            continue
        for h, (s, a) in enumerate(path):
            visitation[h, s, a] += probability
    return VisitationTable(table=visitation, kind="exact")


def count_deterministic_policies(mdp: TabularMdp) -> int:
    return mdp.num_actions ** (mdp.num_states * mdp.horizon)


def enumerate_deterministic_policies(mdp: TabularMdp, cap: int = DEFAULT_ENUMERATION_CAP) -> Iterator[PolicyTable]:
    """
    Yield each of the A^(S*H) deterministic policies exactly once.

    The cap is checked when called, before iteration starts.

    Raises:
        EnumerationCapError: If A^(S*H) exceeds cap.
    """
    count = count_deterministic_policies(mdp)
    if count > cap:
        raise EnumerationCapError(count, cap)
    logger.debug("Enumerating %d deterministic policies", count)
    return _iter_deterministic(mdp)


def _iter_deterministic(mdp: TabularMdp) -> Iterator[PolicyTable]:
    H, S, A = mdp.shape
    for choice in itertools.product(range(A), repeat=S * H):
        yield PolicyTable.deterministic(np.reshape(choice, (H, S)), A)


def _reach_values(mdp: TabularMdp, h: int, s: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Max probability of being in state s at step h, from each state at each earlier step.

    Returns:
        (values, greedy) where values[t, x] is the optimum from x at step t and
        greedy[t, x] an action attaining it, for t < h.
    """
    S = mdp.num_states
    values = np.zeros((h + 1, S))
    greedy = np.zeros((h, S), dtype=int)
    values[h, s] = 1.0
    for t in reversed(range(h)):
        q = mdp.transitions[t] @ values[t + 1]
        greedy[t] = np.argmax(q, axis=1)
        values[t] = q.max(axis=1)
    return values, greedy


def max_reach_visitation(mdp: TabularMdp) -> VisitationTable:
    """
    d_max[h, s, a] = max over policies of d_h(s, a).

    Choosing a at step h is free, so d_max[h, s, a] equals the maximal probability
    of reaching s at step h.
    """
    H, S, A = mdp.shape
    state_max = np.zeros((H, S))
    for h in range(H):
        for s in range(S):
            values, _ = _reach_values(mdp, h, s)
            state_max[h, s] = float(mdp.initial_dist @ values[0])
    return VisitationTable(table=np.repeat(state_max[:, :, None], A, axis=2), kind="exact")


def max_reach_policy(mdp: TabularMdp, h: int, s: int, a: int) -> PolicyTable:
    """A deterministic policy attaining d_max[h, s, a]; action 0 wherever the choice is irrelevant."""
    H, S, A = mdp.shape
    _, greedy = _reach_values(mdp, h, s)
    actions = np.zeros((H, S), dtype=int)
    actions[:h] = greedy
    actions[h, s] = a
    return PolicyTable.deterministic(actions, A)


# =============================================================================
# File I/O
# =============================================================================


def load_mdp(path: str | Path) -> TabularMdp:
    """
    Load and validate an MDP file.

    Raises:
        InvalidModelError: On malformed JSON, wrong shapes or violated invariants.
    """
    try:
        mdp = TabularMdp.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except ValidationError as e:
        raise InvalidModelError(f"Malformed MDP file {path}: {e.error_count()} validation errors") from e
    report = validate_mdp(mdp)
    if not report.ok:
        raise InvalidModelError(f"Invalid MDP in {path}: {report.summary()}", report=report)
    logger.info("Loaded MDP from %s (S=%d, A=%d, H=%d)", path, mdp.num_states, mdp.num_actions, mdp.horizon)
    return mdp


def parse_policies(path: str | Path) -> list[PolicyTable]:
    """
    Parse a policy file without checking the probability invariants.

    Raises:
        InvalidModelError: On malformed JSON or wrong shapes.
    """
    try:
        parsed = _POLICY_FILE.validate_json(Path(path).read_text(encoding="utf-8"))
    except ValidationError as e:
        raise InvalidModelError(f"Malformed policy file {path}: {e.error_count()} validation errors") from e
    return parsed.policies if isinstance(parsed, PolicySet) else [parsed]


def load_policies(path: str | Path, mdp: TabularMdp | None = None) -> list[PolicyTable]:
    """
    Load one policy ({"horizon", "table"}) or several ({"policies": [...]}).

    Raises:
        InvalidModelError: On malformed files or invalid tables.
    """
    policies = parse_policies(path)
    for k, policy in enumerate(policies):
        report = validate_policy(policy, mdp)
        if not report.ok:
            raise InvalidModelError(f"Invalid policy {k} in {path}: {report.summary()}", report=report)
    return policies


def _write_json(data: Any, path: str | Path) -> None:
    Path(path).write_text(json.dumps(data), encoding="utf-8")


def dump_mdp(mdp: TabularMdp, path: str | Path) -> None:
    Path(path).write_text(mdp.model_dump_json(), encoding="utf-8")


def dump_policies(policies: list[PolicyTable], path: str | Path) -> None:
    if len(policies) == 1:
        Path(path).write_text(policies[0].model_dump_json(), encoding="utf-8")
    else:
        Path(path).write_text(PolicySet(policies=policies).model_dump_json(), encoding="utf-8")


def dump_visitation(visitation: VisitationTable, path: str | Path) -> None:
    """Write the bare [H][S][A] table."""
    _write_json(visitation.table.tolist(), path)
