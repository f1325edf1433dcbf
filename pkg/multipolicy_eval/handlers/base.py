"""
Shared handler utilities: JSON payloads and client-safe errors.
"""

import logging
from collections.abc import Mapping, Sequence
from pathlib import Path
from typing import Any

from pydantic import BaseModel, TypeAdapter

from multipolicy_eval.config import Constants, load_constants
from multipolicy_eval.errors import (
    BudgetExceededError,
    DimensionMismatchError,
    EnumerationCapError,
    InvalidModelError,
    MultiPolicyEvalError,
    SolverNonConvergenceError,
    SupportError,
    WitnessBoundError,
)
from multipolicy_eval.protocol.errors import ErrorCode
from multipolicy_eval.protocol.types import TextContent

logger = logging.getLogger("multipolicy_eval")

# Reused across all json_response calls
_JSON_ADAPTER = TypeAdapter(dict[str, Any])

_ERROR_CODES: list[tuple[type[Exception], int]] = [
    (InvalidModelError, ErrorCode.INVALID_MODEL),
    (DimensionMismatchError, ErrorCode.DIMENSION_MISMATCH),
    (BudgetExceededError, ErrorCode.BUDGET_EXCEEDED),
    (SupportError, ErrorCode.SUPPORT_ERROR),
    (EnumerationCapError, ErrorCode.ENUMERATION_CAP),
    (SolverNonConvergenceError, ErrorCode.SOLVER_NON_CONVERGENCE),
    (WitnessBoundError, ErrorCode.WITNESS_BOUND),
    (ValueError, ErrorCode.INVALID_PARAMS),
]


def json_response(data: dict) -> list[TextContent]:
    """
    Wrap response data in a TextContent list.

    Args:
        data: Dictionary to serialize as JSON.

    Returns:
        List containing a single TextContent with the JSON text.
    """
    json_bytes = _JSON_ADAPTER.dump_json(data, by_alias=True)
    return [TextContent(text=json_bytes.decode("utf-8"))]


def safe_error_message(exc: Exception) -> str:
    """Return a client-safe error message, logging the real error."""
    logger.exception("Handler error: %s", exc)

    if isinstance(exc, MultiPolicyEvalError):
        return str(exc)
    if isinstance(exc, FileNotFoundError):
        return f"File not found: {exc.filename}"
    if isinstance(exc, OSError):
        return "Could not read or write a file"
    if isinstance(exc, ValueError | TypeError):
        return "Invalid input data"
    return "An internal error occurred"


def error_code(exc: Exception) -> int:
    for kind, code in _ERROR_CODES:
        if isinstance(exc, kind):
            return code
    return ErrorCode.INTERNAL_ERROR


def error_response(exc: Exception) -> list[TextContent]:
    """Error payload {"error", "code"}; budget aborts also carry their partial report."""
    payload: dict[str, Any] = {"error": safe_error_message(exc), "code": error_code(exc)}
    if isinstance(exc, BudgetExceededError) and isinstance(exc.partial, BaseModel):
        payload["partial"] = exc.partial.model_dump(mode="json")
    return json_response(payload)


def sanitize_pydantic_errors(errors: Sequence[Mapping[str, Any]]) -> list[dict[str, str]]:
    """Strip internal details from Pydantic validation errors."""
    sanitized = []
    for error in errors:
        sanitized.append(
            {
                "field": ".".join(str(loc) for loc in error.get("loc", [])),
                "message": error.get("msg", "Invalid value"),
            }
        )
    return sanitized


def resolve_constants(theory_constants: Path | None) -> Constants | None:
    """Constants from a file, or None to fall back to the configured mode."""
    return load_constants(theory_constants) if theory_constants is not None else None


def write_json(model: BaseModel, path: Path | None) -> None:
    if path is not None:
        path.write_text(model.model_dump_json(indent=2), encoding="utf-8")
