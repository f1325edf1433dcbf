"""
Exception hierarchy for multipolicy-eval.

Library functions raise these; the tool handlers translate them into
client-safe error payloads (see handlers.base.safe_error_message).
"""

from typing import Any


class MultiPolicyEvalError(Exception):
    """Base class for all library errors."""


class DimensionMismatchError(MultiPolicyEvalError, ValueError):
    """A policy, table or trajectory does not match the MDP dimensions."""


class InvalidModelError(MultiPolicyEvalError, ValueError):
    """A model or policy file failed validation on load."""

    def __init__(self, message: str, report: Any = None):
        super().__init__(message)
        self.report = report


class EnumerationCapError(MultiPolicyEvalError):
    """The number of deterministic policies exceeds the configured cap."""

    def __init__(self, count: int, cap: int):
        super().__init__(f"{count} deterministic policies exceed the enumeration cap of {cap}")
        self.count = count
        self.cap = cap


class SolverNonConvergenceError(MultiPolicyEvalError):
    """The mixture-weight solver hit max_iters before its stopping rule fired.

    Carries the best iterate found so callers may still use it.
    """

    def __init__(self, best_solution: Any, certificate_gap: float, iterations: int):
        super().__init__(
            f"Mixture solver did not converge in {iterations} iterations (certificate gap {certificate_gap:.3e})"
        )
        self.best_solution = best_solution
        self.certificate_gap = certificate_gap
        self.iterations = iterations


class SupportError(MultiPolicyEvalError):
    """Positive weight found where the reference distribution has no mass."""


class CoverSupportError(SupportError):
    """A cover sample landed on a pair whose estimated cover mass is zero."""


class BudgetExceededError(MultiPolicyEvalError):
    """The global trajectory budget would be exceeded.

    Attributes:
        phase_counts: Trajectories consumed per phase before the abort.
        partial: Partial result (e.g. an EvaluationReport) when one is available.
    """

    def __init__(self, message: str, phase_counts: Any = None, partial: Any = None):
        super().__init__(message)
        self.phase_counts = phase_counts
        self.partial = partial


class WitnessBoundError(MultiPolicyEvalError):
    """The solved mixture over deterministic policies breaks the S * A bound."""

    def __init__(self, value: float, limit: int):
        super().__init__(f"Deterministic-policy objective {value:.6g} exceeds S*A = {limit}")
        self.value = value
        self.limit = limit
