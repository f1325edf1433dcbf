"""
Tool registration, schema generation and routing.
"""

from multipolicy_eval.tools.registry import HANDLERS, call_tool, get_tools

__all__ = [
    "HANDLERS",
    "call_tool",
    "get_tools",
]
