"""
Wire types and error codes of the tool surface.
"""

from multipolicy_eval.protocol.errors import ErrorCode
from multipolicy_eval.protocol.types import (
    BenchArguments,
    CalibrateArguments,
    EvalArguments,
    IdentifyArguments,
    TextContent,
    Tool,
    ToolsArguments,
    ValidateArguments,
)

__all__ = [
    # Error codes
    "ErrorCode",
    # Content and tool types
    "TextContent",
    "Tool",
    # Tool arguments
    "BenchArguments",
    "CalibrateArguments",
    "EvalArguments",
    "IdentifyArguments",
    "ToolsArguments",
    "ValidateArguments",
]
