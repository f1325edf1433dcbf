"""
Decorators for tool handlers.
"""

from functools import wraps

from pydantic import ValidationError

from multipolicy_eval.errors import MultiPolicyEvalError
from multipolicy_eval.handlers.base import error_response, json_response, sanitize_pydantic_errors
from multipolicy_eval.mdp import load_mdp, load_policies
from multipolicy_eval.protocol.errors import ErrorCode


def require_valid_arguments(model):
    """Validate the raw arguments dict into `model`, returning an error payload on failure.

    Usage:
        @require_valid_arguments(EvalArguments)
        @require_mdp
        @require_policies
        def handle_eval(args, *, mdp, policies):
            ...
    """

    def decorator(fn):
        @wraps(fn)
        def wrapper(arguments):
            try:
                args = model.model_validate(arguments)
            except ValidationError as e:
                return json_response(
                    {
                        "error": "Invalid arguments",
                        "code": ErrorCode.INVALID_PARAMS,
                        "details": sanitize_pydantic_errors(e.errors()),
                    }
                )
            return fn(args)

        return wrapper

    return decorator


def require_mdp(fn):
    """Load and validate args.mdp, injecting it as `mdp`."""

    @wraps(fn)
    def wrapper(args, **kwargs):
        try:
            mdp = load_mdp(args.mdp)
        except (MultiPolicyEvalError, OSError) as e:
            return error_response(e)
        return fn(args, mdp=mdp, **kwargs)

    return wrapper


def require_policies(fn):
    """Load args.policies, checked against the injected mdp, as `policies`.

    Must be stacked after @require_mdp.
    """

    @wraps(fn)
    def wrapper(args, **kwargs):
        try:
            policies = load_policies(args.policies, kwargs.get("mdp"))
        except (MultiPolicyEvalError, OSError) as e:
            return error_response(e)
        return fn(args, policies=policies, **kwargs)

    return wrapper
