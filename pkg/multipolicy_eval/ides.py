"""
Step-wise importance density estimation.

For a target policy pi and the sampling mixture mu_tilde (with coarse
surrogate mu_hat) the step-h loss is

    l_h(w) = 1/2 sum_{s,a} mu_tilde_h w^2 / mu_hat_h - sum_{s,a} m_h(s) pi_h(a|s) w(s,a)

where m_h(s) = sum_{s',a'} mu_tilde_{h-1}(s',a') r_{h-1}(s',a') P_{h-1}(s|s',a') is the
next-state mass propagated through the previous ratio estimate r_{h-1} = w_{h-1} / mu_hat_{h-1}
(m_0 = nu). Its minimiser is d_h mu_hat_h / mu_tilde_h when r_{h-1} is exact, so
w / mu_hat estimates the density ratio d_h / mu_tilde_h.

Each step is fitted by projected SGD onto [0, 2 d_hat_h] with triangular
averaging, repeated on disjoint data and reduced by a median of held-out losses.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import TypeVar

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from multipolicy_eval.errors import DimensionMismatchError, SupportError
from multipolicy_eval.models import ImportanceWeightTable, MixtureWeights, PolicyTable, TabularMdp
from multipolicy_eval.sampler import Phase, RngStream, RolloutLedger, rollout_mixture_batch
from multipolicy_eval.traces import TraceRecorder

logger = logging.getLogger("multipolicy_eval")

T = TypeVar("T")

LOWER_CURVATURE = 0.8


class IdesConfig(BaseModel):
    """
    Settings for importance density estimation.

    Attributes:
        epsilon: Target accuracy of the downstream value estimates.
        delta: Failure probability for the Median-of-Means reduction.
        c_h: Iteration constant C_h.
        mom_reps: Repetitions N; defaults to ceil(mom_factor * ln(1 / delta)).
        mom_factor: Multiplier of ln(1 / delta) for the default N.
        curvature: Strong-convexity lower bound used by the step size 2 / (curvature (i + 1)).
        holdout_fraction: Held-out pairs per repetition, as a fraction of n_h.
        max_iterations: Cap on n_h; larger counts are truncated with a warning.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    epsilon: float = Field(gt=0, lt=1)
    delta: float = Field(gt=0, lt=1)
    c_h: float = Field(default=8.0, gt=0)
    mom_reps: int | None = Field(default=None, ge=1)
    mom_factor: float = Field(default=8.0, gt=0)
    curvature: float = Field(default=LOWER_CURVATURE, gt=0)
    holdout_fraction: float = Field(default=0.25, gt=0)
    max_iterations: int = Field(default=10**7, ge=1)

    @property
    def repetitions(self) -> int:
        if self.mom_reps is not None:
            return self.mom_reps
        return max(1, math.ceil(self.mom_factor * math.log(1.0 / self.delta)))


# =============================================================================
# Exact loss (oracle side)
# =============================================================================


def propagated_state_mass(
    mdp: TabularMdp, h: int, mu_tilde_prev: np.ndarray | None = None, ratio_prev: np.ndarray | None = None
) -> np.ndarray:
    """
    m_h(s) = sum_{s',a'} mu_tilde_{h-1}(s',a') ratio_{h-1}(s',a') P_{h-1}(s|s',a'), with m_0 = nu.

    Args:
        mdp: The model, for nu and P.
        h: Step (0-indexed).
        mu_tilde_prev: Sampling law at step h-1.
        ratio_prev: Estimated ratio at step h-1.

    Returns:
        Vector of length S.
    """
    if h == 0:
        return np.array(mdp.initial_dist)
    if mu_tilde_prev is None or ratio_prev is None:
        raise ValueError("Steps after the first need the previous sampling law and ratio")
    return np.einsum("sa,sat->t", mu_tilde_prev * ratio_prev, mdp.transitions[h - 1])


def _linear_term(pi_h: np.ndarray, state_mass: np.ndarray) -> np.ndarray:
    return state_mass[:, None] * pi_h


def _curvature(mu_tilde_h: np.ndarray, mu_hat_h: np.ndarray) -> np.ndarray:
    if np.any((mu_tilde_h > 0) & (mu_hat_h <= 0)):
        raise SupportError("Sampling law has mass where mu_hat is zero")
    return np.divide(mu_tilde_h, mu_hat_h, out=np.zeros_like(mu_tilde_h), where=mu_hat_h > 0)


def loss_value(
    w: np.ndarray, pi_h: np.ndarray, mu_tilde_h: np.ndarray, mu_hat_h: np.ndarray, state_mass: np.ndarray
) -> float:
    """
    Exact l_h(w).

    Args:
        w: Candidate weights (S, A).
        pi_h: Target policy at step h (S, A).
        mu_tilde_h: Sampling law at step h (S, A).
        mu_hat_h: Coarse surrogate of the sampling law at step h (S, A).
        state_mass: m_h from propagated_state_mass.

    Raises:
        SupportError: If mu_tilde has mass where mu_hat is zero.
    """
    quadratic = 0.5 * float(np.sum(_curvature(mu_tilde_h, mu_hat_h) * w**2))
    return quadratic - float(np.sum(_linear_term(pi_h, state_mass) * w))


def exact_gradient(
    w: np.ndarray, pi_h: np.ndarray, mu_tilde_h: np.ndarray, mu_hat_h: np.ndarray, state_mass: np.ndarray
) -> np.ndarray:
    """Gradient (mu_tilde / mu_hat) w - m_h(s) pi_h(a|s)."""
    return _curvature(mu_tilde_h, mu_hat_h) * w - _linear_term(pi_h, state_mass)


def loss_minimizer(
    pi_h: np.ndarray, mu_tilde_h: np.ndarray, mu_hat_h: np.ndarray, state_mass: np.ndarray
) -> np.ndarray:
    """Unconstrained minimiser m_h pi_h mu_hat_h / mu_tilde_h (0 where mu_tilde is 0)."""
    curvature = _curvature(mu_tilde_h, mu_hat_h)
    target = _linear_term(pi_h, state_mass)
    return np.divide(target, curvature, out=np.zeros_like(target), where=curvature > 0)


def hessian_diagonal(mu_tilde_h: np.ndarray, mu_hat_h: np.ndarray) -> np.ndarray:
    """mu_tilde / mu_hat on the support of mu_hat; the loss is diagonal-quadratic."""
    return _curvature(mu_tilde_h, mu_hat_h)[mu_hat_h > 0]


def density_l1_error(mu_tilde: np.ndarray, ratio: np.ndarray, exact: np.ndarray) -> np.ndarray:
    """Per-step sum_{s,a} |mu_tilde_h ratio_h - d_h|."""
    return np.abs(mu_tilde * ratio - exact).sum(axis=(1, 2))


# =============================================================================
# Samples
# =============================================================================


@dataclass
class StepSamples:
    """
    Paired samples for one step.

    a_* come from one trajectory's step h; b_* from another trajectory's step h-1
    together with its next state b_states. At the first step b_prev_* are -1 and
    b_states holds the initial state.
    """

    a_states: list[int] = field(default_factory=list)
    a_actions: list[int] = field(default_factory=list)
    b_prev_states: list[int] = field(default_factory=list)
    b_prev_actions: list[int] = field(default_factory=list)
    b_states: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.a_states)

    def head(self, n: int) -> "StepSamples":
        return StepSamples(
            self.a_states[:n],
            self.a_actions[:n],
            self.b_prev_states[:n],
            self.b_prev_actions[:n],
            self.b_states[:n],
        )


class MixtureDataSource:
    """
    Lazily generated, prefix-stable sample pairs from the sampling mixture.

    Pairs for (h, rep) come in chunks; chunk c is drawn from stream
    (phase, h, rep, c) with 2 * chunk_size trajectories, the first half feeding
    the a-samples and the second half the b-samples. Asking for more pairs
    extends the same sequence, so policies sharing the source see identical data.
    """

    def __init__(
        self,
        mdp: TabularMdp,
        policies: Sequence[PolicyTable],
        alpha: MixtureWeights,
        rng: RngStream,
        phase: Phase = Phase.IDES,
        ledger: RolloutLedger | None = None,
        chunk_size: int = 4096,
    ):
        self.mdp = mdp
        self.policies = list(policies)
        self.alpha = alpha
        self.rng = rng
        self.phase = phase
        self.ledger = ledger
        self.chunk_size = chunk_size
        self._cache: dict[tuple[int, int], StepSamples] = {}

    def pairs(self, h: int, rep: int, n: int) -> StepSamples:
        """The first n sample pairs for step h and repetition rep."""
        samples = self._cache.setdefault((h, rep), StepSamples())
        while len(samples) < n:
            self._extend(samples, h, rep, len(samples) // self.chunk_size)
        return samples.head(n)

    def release(self, h: int) -> None:
        """Drop cached pairs of step h."""
        for key in [key for key in self._cache if key[0] == h]:
            del self._cache[key]

    def _extend(self, samples: StepSamples, h: int, rep: int, chunk: int) -> None:
        stream = self.rng.derive(self.phase, h, rep, chunk)
        batch = rollout_mixture_batch(self.mdp, self.policies, self.alpha, 2 * self.chunk_size, stream, self.ledger)
        first, second = slice(0, self.chunk_size), slice(self.chunk_size, None)
        samples.a_states.extend(batch.states[first, h].tolist())
        samples.a_actions.extend(batch.actions[first, h].tolist())
        samples.b_states.extend(batch.states[second, h].tolist())
        if h == 0:
            samples.b_prev_states.extend([-1] * self.chunk_size)
            samples.b_prev_actions.extend([-1] * self.chunk_size)
        else:
            samples.b_prev_states.extend(batch.states[second, h - 1].tolist())
            samples.b_prev_actions.extend(batch.actions[second, h - 1].tolist())


def stochastic_gradient(
    w: np.ndarray,
    a_sample: tuple[int, int],
    b_sample: tuple[int, int, int],
    pi_h: np.ndarray,
    mu_hat_h: np.ndarray,
    ratio_prev: np.ndarray | None,
    support: np.ndarray | None = None,
) -> np.ndarray:
    """
    One-sample gradient estimate; unbiased for exact_gradient on the support.

    Args:
        w: Current weights (S, A).
        a_sample: (s, a) drawn from the sampling law at step h.
        b_sample: (s', a', s) with (s', a') from step h-1 and s its successor;
            at the first step s' and a' are ignored.
        pi_h: Target policy at step h.
        mu_hat_h: Coarse surrogate at step h.
        ratio_prev: Ratio estimate at step h-1, None at the first step.
        support: Parameter coordinates; gradient is zero elsewhere.
    """
    gradient = np.zeros_like(w)
    s, a = a_sample
    if mu_hat_h[s, a] > 0:
        gradient[s, a] = w[s, a] / mu_hat_h[s, a]
    s_prev, a_prev, s_next = b_sample
    ratio = 1.0 if ratio_prev is None else ratio_prev[s_prev, a_prev]
    gradient[s_next] -= ratio * pi_h[s_next]
    if support is not None:
        gradient[~support] = 0.0
    return gradient


def sample_loss(
    w: np.ndarray, samples: StepSamples, pi_h: np.ndarray, mu_hat_h: np.ndarray, ratio_prev: np.ndarray | None
) -> float:
    """Unbiased sample mean of l_h(w) over paired samples."""
    if len(samples) == 0:
        return 0.0
    a_s = np.asarray(samples.a_states)
    a_a = np.asarray(samples.a_actions)
    b_s = np.asarray(samples.b_states)
    denominators = mu_hat_h[a_s, a_a]
    values = w[a_s, a_a]
    if np.any((denominators <= 0) & (values != 0)):
        raise SupportError("Held-out sample with positive weight where mu_hat is zero")
    quadratic = 0.5 * np.divide(values**2, denominators, out=np.zeros_like(values), where=denominators > 0)
    if ratio_prev is None:
        ratios = np.ones(len(samples))
    else:
        ratios = ratio_prev[np.asarray(samples.b_prev_states), np.asarray(samples.b_prev_actions)]
    linear = ratios * np.sum(pi_h[b_s] * w[b_s], axis=1)
    return float(np.mean(quadratic - linear))


# =============================================================================
# SGD
# =============================================================================


def iteration_count(
    d_hat_h: np.ndarray,
    mu_hat_h: np.ndarray,
    d_hat_prev: np.ndarray | None,
    mu_hat_prev: np.ndarray | None,
    horizon: int,
    epsilon: float,
    c_h: float,
    cap: int = 10**7,
) -> int:
    """
    n_h = C_h (H^4 / eps^2) sum_{s,a} (d_hat_h^2 / mu_hat_h + d_hat_{h-1}^2 / mu_hat_{h-1}).

    The sum runs over both terms; at the first step the previous term is the
    virtual 1. Counts above cap are truncated with a warning.
    """
    spread = _squared_ratio(d_hat_h, mu_hat_h)
    spread += 1.0 if d_hat_prev is None or mu_hat_prev is None else _squared_ratio(d_hat_prev, mu_hat_prev)
    count = max(1, math.ceil(c_h * horizon**4 / epsilon**2 * spread))
    if count > cap:
        logger.warning("IDES iteration count %d exceeds the cap; truncating to %d", count, cap)
        return cap
    return count


def _squared_ratio(d_hat: np.ndarray, mu_hat: np.ndarray) -> float:
    return float(np.sum(np.divide(d_hat**2, mu_hat, out=np.zeros_like(d_hat), where=mu_hat > 0)))


def sgd_minimize_step(
    d_hat_h: np.ndarray,
    mu_hat_h: np.ndarray,
    pi_h: np.ndarray,
    ratio_prev: np.ndarray | None,
    samples: StepSamples,
    num_iterations: int,
    curvature: float = LOWER_CURVATURE,
    trace: TraceRecorder | None = None,
    run_id: str = "",
    h: int = 0,
) -> np.ndarray:
    """
    Projected SGD on l_h with step 2 / (curvature (i + 1)) and triangular averaging.

    Coordinates off the support of d_hat_h are not parameters and stay 0. Each
    iteration touches only the sampled coordinates, so the weighted average is
    accumulated lazily per coordinate.

    Args:
        d_hat_h: Coarse target visitation at step h; sets the box [0, 2 d_hat_h].
        mu_hat_h: Coarse sampling surrogate at step h.
        pi_h: Target policy at step h.
        ratio_prev: Ratio estimate at step h-1, None at the first step.
        samples: At least num_iterations sample pairs.
        num_iterations: n_h.
        curvature: Strong-convexity lower bound for the step size.
        trace: Optional recorder; rows are averages over each stride.
        run_id: Trace label.
        h: Trace step label.

    Returns:
        The averaged iterate as an (S, A) array.
    """
    support = d_hat_h > 0
    averaged = np.zeros_like(d_hat_h)
    if not support.any():
        return averaged
    if np.any(mu_hat_h[support] <= 0):
        raise SupportError("mu_hat is zero on the support of the target estimate")
    if len(samples) < num_iterations:
        raise ValueError(f"{num_iterations} iterations need as many sample pairs, got {len(samples)}")

    S, A = d_hat_h.shape
    position = np.full((S, A), -1, dtype=int)
    position[support] = np.arange(int(support.sum()))
    positions = position.tolist()
    upper = (2.0 * d_hat_h[support]).tolist()
    inverse_mu = (1.0 / mu_hat_h[support]).tolist()
    rows = [
        [(int(position[s, a]), float(pi_h[s, a])) for a in range(A) if support[s, a] and pi_h[s, a] > 0]
        for s in range(S)
    ]
    previous = None if ratio_prev is None else ratio_prev.tolist()

    m = len(upper)
    w = [0.0] * m
    since = [1] * m
    accumulated = [0.0] * m
    scale = 2.0 / curvature
    stride = trace.stride if trace is not None else 0
    window_loss = window_grad = 0.0

    for i, (s, a, s_prev, a_prev, s_next) in enumerate(
        zip(
            samples.a_states[:num_iterations],
            samples.a_actions[:num_iterations],
            samples.b_prev_states[:num_iterations],
            samples.b_prev_actions[:num_iterations],
            samples.b_states[:num_iterations],
            strict=True,
        ),
        start=1,
    ):
        gradient: dict[int, float] = {}
        p = positions[s][a]
        if p >= 0:
            gradient[p] = w[p] * inverse_mu[p]
        ratio = 1.0 if previous is None else previous[s_prev][a_prev]
        if ratio:
            for q, weight in rows[s_next]:
                gradient[q] = gradient.get(q, 0.0) - ratio * weight

        if stride:
            window_loss += (0.5 * w[p] * w[p] * inverse_mu[p] if p >= 0 else 0.0) - ratio * sum(
                weight * w[q] for q, weight in rows[s_next]
            )
            window_grad += math.sqrt(sum(g * g for g in gradient.values()))
            if i % stride == 0:
                trace.record(run_id, h, i, window_loss / stride, window_grad / stride)  # type: ignore[union-attr]
                window_loss = window_grad = 0.0

        eta = scale / (i + 1)
        for q, g in gradient.items():
            start = since[q]
            accumulated[q] += w[q] * (start + i - 1) * (i - start) * 0.5
            since[q] = i
            value = w[q] - eta * g
            w[q] = 0.0 if value < 0.0 else (upper[q] if value > upper[q] else value)

    n = num_iterations
    for q in range(m):
        start = since[q]
        accumulated[q] += w[q] * (start + n) * (n - start + 1) * 0.5
    averaged[support] = np.asarray(accumulated) / (n * (n + 1) * 0.5)
    return averaged


def mom_select(runs: Sequence[T], losses: Sequence[float]) -> T:
    """
    The run whose loss is the median (lower median for even N).

    Args:
        runs: N candidate results.
        losses: Held-out loss of each run.
    """
    if not runs or len(runs) != len(losses):
        raise ValueError("mom_select needs one loss per run and at least one run")
    order = sorted(range(len(runs)), key=lambda i: losses[i])
    return runs[order[(len(runs) - 1) // 2]]


# =============================================================================
# Driver
# =============================================================================


class IdesResult(BaseModel):
    """Importance weights of one policy with per-step bookkeeping."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    weights: ImportanceWeightTable
    iterations: list[int]
    selected_reps: list[int]
    holdout_losses: list[list[float]]


def run_ides_all(
    policies: Sequence[PolicyTable],
    d_hats: np.ndarray,
    mu_hat: np.ndarray,
    source: MixtureDataSource,
    holdout: MixtureDataSource,
    cfg: IdesConfig,
    trace: TraceRecorder | None = None,
) -> list[IdesResult]:
    """
    Importance weights for several policies on shared sample pairs.

    Steps run in order; at each step every policy fits N repetitions on the
    (h, rep) pairs of `source`, scores them on the (h, rep) pairs of `holdout` and
    keeps the median run, whose ratio feeds the next step.

    Args:
        policies: Target policies.
        d_hats: Thresholded coarse tables, shape (K, H, S, A).
        mu_hat: Coarse sampling surrogate, shape (H, S, A).
        source: Training pairs.
        holdout: Held-out pairs, disjoint from source.
        cfg: Settings.
        trace: Optional diagnostics recorder.

    Returns:
        One IdesResult per policy.
    """
    d_hats = np.asarray(d_hats)
    if d_hats.shape[0] != len(policies) or d_hats.shape[1:] != mu_hat.shape:
        raise DimensionMismatchError(f"Coarse tables {d_hats.shape} do not match {len(policies)} x {mu_hat.shape}")
    K, H = d_hats.shape[0], d_hats.shape[1]
    N = cfg.repetitions

    weights = np.zeros(d_hats.shape)
    ratios = np.zeros(d_hats.shape)
    iterations = [[0] * H for _ in range(K)]
    selected = [[0] * H for _ in range(K)]
    losses: list[list[list[float]]] = [[] for _ in range(K)]

    for h in range(H):
        counts = [
            iteration_count(
                d_hats[k, h],
                mu_hat[h],
                d_hats[k, h - 1] if h else None,
                mu_hat[h - 1] if h else None,
                H,
                cfg.epsilon,
                cfg.c_h,
                cfg.max_iterations,
            )
            for k in range(K)
        ]
        held = [max(1, math.ceil(cfg.holdout_fraction * n)) for n in counts]
        runs: list[list[tuple[np.ndarray, float]]] = [[] for _ in range(K)]
        for rep in range(N):
            train_pairs = source.pairs(h, rep, max(counts))
            test_pairs = holdout.pairs(h, rep, max(held))
            for k, policy in enumerate(policies):
                ratio_prev = ratios[k, h - 1] if h else None
                candidate = sgd_minimize_step(
                    d_hats[k, h],
                    mu_hat[h],
                    policy.table[h],
                    ratio_prev,
                    train_pairs,
                    counts[k],
                    cfg.curvature,
                    trace,
                    f"policy{k}-rep{rep}",
                    h,
                )
                loss = sample_loss(candidate, test_pairs.head(held[k]), policy.table[h], mu_hat[h], ratio_prev)
                runs[k].append((candidate, loss))
        source.release(h)
        holdout.release(h)

        for k in range(K):
            run_losses = [loss for _, loss in runs[k]]
            chosen = mom_select(list(range(N)), run_losses)
            weights[k, h] = runs[k][chosen][0]
            ratios[k, h] = np.divide(weights[k, h], mu_hat[h], out=np.zeros_like(mu_hat[h]), where=mu_hat[h] > 0)
            iterations[k][h] = counts[k]
            selected[k][h] = chosen
            losses[k].append(run_losses)
            logger.debug("IDES step %d policy %d: n_h=%d, kept repetition %d of %d", h, k, counts[k], chosen, N)

    return [
        IdesResult(
            weights=ImportanceWeightTable(weights=weights[k], mu_hat=mu_hat),
            iterations=iterations[k],
            selected_reps=selected[k],
            holdout_losses=losses[k],
        )
        for k in range(K)
    ]


def run_ides(
    policy: PolicyTable,
    d_hat: np.ndarray,
    mu_hat: np.ndarray,
    source: MixtureDataSource,
    holdout: MixtureDataSource,
    cfg: IdesConfig,
    trace: TraceRecorder | None = None,
) -> IdesResult:
    """Importance weights for a single policy; see run_ides_all."""
    return run_ides_all([policy], np.asarray(d_hat)[None], mu_hat, source, holdout, cfg, trace)[0]
