"""
Tool registry for multipolicy-eval.

Maps tool names to handlers, routes calls and describes each tool with the
JSON schema of its argument model.
"""

from collections.abc import Callable
from typing import Any

from pydantic import BaseModel

from multipolicy_eval.handlers import (
    handle_bench,
    handle_calibrate,
    handle_eval,
    handle_identify,
    handle_validate,
    json_response,
)
from multipolicy_eval.handlers.decorators import require_valid_arguments
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

# Type alias for handler functions
HandlerFunc = Callable[[dict[str, Any]], list[TextContent]]


@require_valid_arguments(ToolsArguments)
def handle_tools(args: ToolsArguments) -> list[TextContent]:
    """List every tool descriptor."""
    return json_response({"tools": [tool.model_dump() for tool in get_tools()]})


# Handler registry mapping tool names to handler functions
HANDLERS: dict[str, HandlerFunc] = {
    "eval": handle_eval,
    "identify": handle_identify,
    "bench": handle_bench,
    "calibrate": handle_calibrate,
    "validate": handle_validate,
    "tools": handle_tools,
}

_DESCRIPTIONS: dict[str, tuple[str, type[BaseModel]]] = {
    "eval": (
        "Estimate the value of every policy in a policy file to accuracy epsilon with probability "
        "1 - delta, using CAESAR (one shared sampling mixture) or per-policy Monte Carlo.",
        EvalArguments,
    ),
    "identify": (
        "Pick an epsilon-optimal policy among candidates by successive elimination with halving-accuracy rounds.",
        IdentifyArguments,
    ),
    "bench": (
        "Run a seeded experiment grid; writes per-run JSON reports and an aggregate CSV.",
        BenchArguments,
    ),
    "calibrate": (
        "Binary-search the coarse and IDES constants on a reference suite and write a constants file.",
        CalibrateArguments,
    ),
    "validate": (
        "Check an MDP file, and optionally a policy file, and list every violated invariant.",
        ValidateArguments,
    ),
    "tools": ("List the available tools with their argument schemas.", ToolsArguments),
}


def call_tool(name: str, arguments: dict[str, Any]) -> list[TextContent]:
    """
    Route a tool call to its handler.

    Args:
        name: Tool name, e.g. 'eval' or 'identify'.
        arguments: Tool arguments dictionary.

    Returns:
        List of TextContent with the handler's JSON payload.
    """
    handler = HANDLERS.get(name)
    if handler is None:
        return json_response({"error": f"Unknown tool: {name}", "code": ErrorCode.METHOD_NOT_FOUND})
    return handler(arguments)


def get_tools() -> list[Tool]:
    """
    Tool definitions for every registered handler.

    Returns:
        List of Tool definitions whose inputSchema is the argument model's JSON schema.
    """
    return [
        Tool(name=name, description=description, inputSchema=model.model_json_schema())
        for name, (description, model) in _DESCRIPTIONS.items()
    ]
