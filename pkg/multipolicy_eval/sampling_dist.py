"""
Minimax sampling distribution over the convex hull of visitation tables.

For mixture weights alpha over a generator set {g_j} the sampling table is
mu_h = sum_j alpha_j g_j,h and the per-step objective is

    f_h(alpha) = max_k sum_{s,a} d_k,h(s,a)^2 / mu_h(s,a)

with 0/0 = 0 and +inf where a positive target entry is uncovered. One alpha
must serve every step (a trajectory is drawn from a single mixture), so the
solver minimises F(alpha) = sum_h f_h(alpha). F is convex; the solver is
exponentiated gradient with a stagnation-halved step and a dual lower bound
that certifies the gap.
"""

import itertools
import logging
from collections.abc import Iterator, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from multipolicy_eval.errors import DimensionMismatchError, SolverNonConvergenceError, SupportError
from multipolicy_eval.mdp import exact_visitation, max_reach_policy
from multipolicy_eval.models import (
    CoarseVisitation,
    FloatArray,
    MixtureWeights,
    TabularMdp,
    VisitationTable,
)

logger = logging.getLogger("multipolicy_eval")


class SolverConfig(BaseModel):
    """
    Stopping rule and step control of the mixture solver.

    Attributes:
        tol: Relative tolerance for both the stagnation test and the certificate.
        max_iters: Iteration limit before SolverNonConvergenceError.
        window: Iterations per stagnation test.
        step0: Initial exponentiated-gradient step.
        min_step: Stop once the step has been halved below this.
        alpha_floor: Each weight is kept >= alpha_floor / J, then renormalised.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    tol: float = Field(default=1e-6, gt=0)
    max_iters: int = Field(default=20000, ge=1)
    window: int = Field(default=50, ge=1)
    step0: float = Field(default=0.5, gt=0)
    min_step: float = Field(default=1e-10, gt=0)
    alpha_floor: float = Field(default=1e-6, ge=0)


class SamplingObjective:
    """
    Targets d_k (K, H, S, A) and hull generators g_j (J, H, S, A).

    Without an explicit hull the generators are the targets themselves.
    """

    def __init__(self, tables: np.ndarray, hull: np.ndarray | None = None):
        tables = np.asarray(tables, dtype=float)
        if tables.ndim != 4 or tables.shape[0] == 0:
            raise DimensionMismatchError(f"Expected (K, H, S, A) targets, got shape {tables.shape}")
        hull = tables if hull is None else np.asarray(hull, dtype=float)
        if hull.shape[1:] != tables.shape[1:]:
            raise DimensionMismatchError(f"Hull shape {hull.shape} does not match targets {tables.shape}")
        self.tables = tables
        self.hull = hull
        self.squared = tables**2
        self.support = np.any(tables > 0, axis=0)

        uncovered = self.support & ~np.any(hull > 0, axis=0)
        if np.any(uncovered):
            raise SupportError(f"{int(uncovered.sum())} target entries are outside the support of every generator")

    @classmethod
    def from_estimates(
        cls, estimates: Sequence[CoarseVisitation | VisitationTable], hull: np.ndarray | None = None
    ) -> "SamplingObjective":
        tables = [e.table.table if isinstance(e, CoarseVisitation) else e.table for e in estimates]
        return cls(np.stack(tables), hull)

    @property
    def num_targets(self) -> int:
        return int(self.tables.shape[0])

    @property
    def num_generators(self) -> int:
        return int(self.hull.shape[0])

    @property
    def horizon(self) -> int:
        return int(self.tables.shape[1])

    def mixture(self, alpha: np.ndarray) -> np.ndarray:
        return np.einsum("j,jhsa->hsa", alpha, self.hull)

    def step_values(self, alpha: np.ndarray) -> np.ndarray:
        """(K, H) matrix of sum_{s,a} d_k,h^2 / mu_h."""
        return _step_values(self.squared, self.mixture(alpha))

    def restrict(self, h: int) -> "SamplingObjective":
        """Single-step objective for step h."""
        return SamplingObjective(self.tables[:, h : h + 1], self.hull[:, h : h + 1])


def _step_values(squared: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """sum_{s,a} squared / mu with 0/0 = 0 and +inf on uncovered positive entries; mu may carry batch axes."""
    covered = mu > 0
    inverse = np.divide(1.0, mu, out=np.zeros_like(mu), where=covered)
    values = np.einsum("khsa,...hsa->...kh", squared, inverse)
    uncovered = np.einsum("khsa,...hsa->...kh", squared, (~covered).astype(float)) > 0
    return np.where(uncovered, np.inf, values)


def objective_value(obj: SamplingObjective, alpha: MixtureWeights, h: int) -> float:
    """max_k sum_{s,a} d_k,h^2 / mu_h at step h."""
    _check_alpha(obj, alpha)
    return float(obj.step_values(alpha.alpha)[:, h].max())


def total_objective(obj: SamplingObjective, alpha: MixtureWeights) -> float:
    """F(alpha) = sum_h max_k sum_{s,a} d_k,h^2 / mu_h."""
    _check_alpha(obj, alpha)
    return float(obj.step_values(alpha.alpha).max(axis=0).sum())


def objective_subgradient(obj: SamplingObjective, alpha: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """
    Value and subgradient of F at alpha.

    The active target at each step is the lowest index attaining the max.

    Returns:
        (F(alpha), subgradient of shape (J,), active target index per step).
    """
    mu = obj.mixture(alpha)
    values = _step_values(obj.squared, mu)
    active = np.argmax(values, axis=0)
    value = float(values[active, np.arange(obj.horizon)].sum())
    gradient = _linear_gradient(obj, mu, _active_weights(active, obj.num_targets))
    return value, gradient, active


def _active_weights(active: np.ndarray, num_targets: int) -> np.ndarray:
    weights = np.zeros((num_targets, active.size))
    weights[active, np.arange(active.size)] = 1.0
    return weights


def _linear_gradient(obj: SamplingObjective, mu: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Gradient of sum_{k,h} weights[k,h] * sum_{s,a} d_k,h^2 / mu_h with respect to alpha."""
    inverse_sq = np.divide(1.0, mu**2, out=np.zeros_like(mu), where=mu > 0)
    pressure = np.einsum("kh,khsa->hsa", weights, obj.squared) * inverse_sq
    return -np.einsum("hsa,jhsa->j", pressure, obj.hull)


def _check_alpha(obj: SamplingObjective, alpha: MixtureWeights) -> None:
    if alpha.num_policies != obj.num_generators:
        raise DimensionMismatchError(f"alpha has {alpha.num_policies} weights for {obj.num_generators} generators")


# =============================================================================
# Solver
# =============================================================================


class SamplingSolution(BaseModel):
    """Solved mixture and its diagnostics."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    alpha: MixtureWeights
    mu_hat: FloatArray
    objective: FloatArray = Field(description="Per-step max_k sum d^2 / mu_hat")
    total_objective: float
    lower_bound: float
    certificate_gap: float
    iterations: int
    converged: bool = True


def _lower_bound(obj: SamplingObjective, alpha: np.ndarray, weights: np.ndarray) -> float:
    """
    Lower bound on min F from a convex minorant.

    For per-step target weights lambda_h on the simplex, g(a) = sum_{k,h} lambda_{k,h} f_{k,h}(a)
    is convex and below F, so g(alpha) + min_j grad_j - grad . alpha bounds min F from below.
    """
    mu = obj.mixture(alpha)
    values = _step_values(obj.squared, mu)
    if not np.all(np.isfinite(values)):
        return 0.0
    g = float(np.sum(weights * values))
    grad = _linear_gradient(obj, mu, weights)
    return max(g + float(grad.min()) - float(grad @ alpha), 0.0)


def _solution(
    obj: SamplingObjective, alpha: np.ndarray, lower: float, iterations: int, converged: bool
) -> SamplingSolution:
    alpha = alpha / alpha.sum()
    per_step = obj.step_values(alpha).max(axis=0)
    total = float(per_step.sum())
    return SamplingSolution(
        alpha=MixtureWeights(alpha=alpha),
        mu_hat=obj.mixture(alpha),
        objective=per_step,
        total_objective=total,
        lower_bound=lower,
        certificate_gap=max(total - lower, 0.0),
        iterations=iterations,
        converged=converged,
    )


def solve_alpha(obj: SamplingObjective, cfg: SolverConfig | None = None) -> SamplingSolution:
    """
    Minimise F(alpha) over the simplex.

    Args:
        obj: The sampling objective.
        cfg: Solver settings.

    Returns:
        Best iterate found, with per-step objective and certificate gap.
        `converged` is False when the step shrank below min_step before the
        certificate gap closed.

    Raises:
        SolverNonConvergenceError: When max_iters is reached first; carries the best solution.
    """
    cfg = cfg or SolverConfig()
    J = obj.num_generators
    if J == 1:
        return _solution(obj, np.ones(1), float(obj.step_values(np.ones(1)).max(axis=0).sum()), 0, True)

    floor = cfg.alpha_floor / J
    alpha = np.full(J, 1.0 / J)
    best_value, best_alpha = np.inf, alpha.copy()
    window_start_value = np.inf
    active_counts = np.zeros((obj.num_targets, obj.horizon))
    step = cfg.step0
    lower = 0.0

    for iteration in range(1, cfg.max_iters + 1):
        value, gradient, active = objective_subgradient(obj, alpha)
        active_counts[active, np.arange(obj.horizon)] += 1.0
        if value < best_value:
            best_value, best_alpha = value, alpha.copy()

        scale = float(np.abs(gradient).max())
        if scale == 0.0:
            # flat objective: every simplex point is optimal
            return _solution(obj, best_alpha, best_value, iteration, True)
        alpha = alpha * np.exp(-step * gradient / scale)
        alpha /= alpha.sum()
        alpha = np.maximum(alpha, floor)
        alpha /= alpha.sum()

        if iteration % cfg.window:
            continue
        best_active = _active_weights(objective_subgradient(obj, best_alpha)[2], obj.num_targets)
        lower = max(
            lower,
            _lower_bound(obj, best_alpha, active_counts / active_counts.sum(axis=0)),
            _lower_bound(obj, best_alpha, best_active),
        )
        active_counts[:] = 0.0
        gap = best_value - lower
        logger.debug(
            "Solver iteration %d: best=%.8g lower=%.8g gap=%.3e step=%.3e", iteration, best_value, lower, gap, step
        )
        if gap <= cfg.tol * best_value:
            return _solution(obj, best_alpha, lower, iteration, True)
        if window_start_value - best_value < cfg.tol * abs(best_value):
            step /= 2.0
            if step < cfg.min_step:
                logger.info("Solver stalled at iteration %d with certificate gap %.3e", iteration, gap)
                return _solution(obj, best_alpha, lower, iteration, False)
        window_start_value = best_value

    best = _solution(obj, best_alpha, lower, cfg.max_iters, False)
    raise SolverNonConvergenceError(best, best.certificate_gap, cfg.max_iters)


def solve_alpha_per_step(obj: SamplingObjective, cfg: SolverConfig | None = None) -> list[SamplingSolution]:
    """Independent per-step solutions; diagnostic only, since one trajectory law must serve every step."""
    solutions = []
    for h in range(obj.horizon):
        try:
            solutions.append(solve_alpha(obj.restrict(h), cfg))
        except SolverNonConvergenceError as e:
            logger.warning("Per-step solver did not converge at step %d; using best iterate", h)
            solutions.append(e.best_solution)
    return solutions


# =============================================================================
# Oracles
# =============================================================================


def _simplex_grid(num_weights: int, divisions: int) -> Iterator[np.ndarray]:
    """All points of the simplex whose coordinates are multiples of 1/divisions."""
    for bars in itertools.combinations(range(divisions + num_weights - 1), num_weights - 1):
        edges = np.array((-1, *bars, divisions + num_weights - 1))
        yield (np.diff(edges) - 1) / divisions


def grid_search_alpha(
    obj: SamplingObjective, resolution: float = 1e-3, h: int | None = None, chunk: int = 4096
) -> tuple[MixtureWeights, float]:
    """
    Exhaustive grid oracle over the simplex.

    Args:
        obj: The objective.
        resolution: Grid spacing.
        h: Minimise the single-step objective at h instead of F.
        chunk: Grid points evaluated per vectorised batch.

    Returns:
        (best grid alpha, its objective value).
    """
    divisions = round(1.0 / resolution)
    best_value, best_alpha = np.inf, None
    points = _simplex_grid(obj.num_generators, divisions)
    while True:
        batch = list(itertools.islice(points, chunk))
        if not batch:
            break
        alphas = np.stack(batch)
        mu = np.einsum("bj,jhsa->bhsa", alphas, obj.hull)
        per_step = _step_values(obj.squared, mu).max(axis=1)
        values = per_step[:, h] if h is not None else per_step.sum(axis=1)
        i = int(np.argmin(values))
        if values[i] < best_value:
            best_value, best_alpha = float(values[i]), alphas[i]
    assert best_alpha is not None
    return MixtureWeights(alpha=best_alpha / best_alpha.sum()), best_value


def realized_mixture(visitations: Sequence[VisitationTable], alpha: MixtureWeights) -> VisitationTable:
    """The law actually sampled: sum_k alpha_k d_k for exact tables d_k."""
    if alpha.num_policies != len(visitations):
        raise DimensionMismatchError(f"alpha has {alpha.num_policies} weights for {len(visitations)} tables")
    tables = np.stack([v.table for v in visitations])
    return VisitationTable(table=np.einsum("k,khsa->hsa", alpha.alpha, tables), kind="mixture")


def argmax_witness(mdp: TabularMdp) -> VisitationTable:
    """
    Per-step uniform mixture over the policies maximising each d_h(s, a).

    At step h the table is (1 / SA) sum_{s,a} d_h of the policy that maximises d_h(s, a);
    every policy's sum d_h^2 / witness_h is at most S A.
    """
    H, S, A = mdp.shape
    witness = np.zeros(mdp.shape)
    for h in range(H):
        for s in range(S):
            for a in range(A):
                witness[h] += exact_visitation(mdp, max_reach_policy(mdp, h, s, a)).table[h]
    return VisitationTable(table=witness / (S * A), kind="mixture")


def argmax_witness_value(tables: np.ndarray, witness: VisitationTable) -> float:
    """max_h max_k sum_{s,a} d_k,h^2 / witness_h."""
    return float(_step_values(np.asarray(tables) ** 2, witness.table).max())
