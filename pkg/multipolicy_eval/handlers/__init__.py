"""
Tool handlers.

Each handler takes the raw arguments dict and returns a list of TextContent
holding a JSON payload; failures become {"error", "code"} payloads.
"""

from multipolicy_eval.handlers.base import (
    error_code,
    error_response,
    json_response,
    safe_error_message,
    sanitize_pydantic_errors,
)
from multipolicy_eval.handlers.bench import handle_bench, handle_calibrate
from multipolicy_eval.handlers.evaluate import handle_eval, handle_validate
from multipolicy_eval.handlers.identify import handle_identify

__all__ = [
    # Base utilities
    "error_code",
    "error_response",
    "json_response",
    "safe_error_message",
    "sanitize_pydantic_errors",
    # Evaluation handlers
    "handle_eval",
    "handle_validate",
    # Identification handlers
    "handle_identify",
    # Harness handlers
    "handle_bench",
    "handle_calibrate",
]
