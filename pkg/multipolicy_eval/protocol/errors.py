"""
Error code constants for tool payloads.

JSON-RPC 2.0 codes plus domain codes in the server-defined range.
"""


class ErrorCode:
    """Integer codes carried in the "code" field of error payloads."""

    METHOD_NOT_FOUND = -32601
    INVALID_PARAMS = -32602
    INTERNAL_ERROR = -32603

    INVALID_MODEL = -32001
    DIMENSION_MISMATCH = -32002
    BUDGET_EXCEEDED = -32003
    SUPPORT_ERROR = -32004
    ENUMERATION_CAP = -32005
    SOLVER_NON_CONVERGENCE = -32006
    WITNESS_BOUND = -32007
