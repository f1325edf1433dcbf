"""
Evaluation handlers.

- handle_eval: estimate every policy's value with CAESAR or on-policy Monte Carlo
- handle_validate: check an MDP file (and optionally a policy file) without running anything
"""

from typing import Any

from pydantic import ValidationError

from multipolicy_eval.caesar import CaesarConfig, evaluate_policies, mc_baseline
from multipolicy_eval.handlers.base import (
    error_response,
    json_response,
    resolve_constants,
    sanitize_pydantic_errors,
    write_json,
)
from multipolicy_eval.handlers.decorators import require_mdp, require_policies, require_valid_arguments
from multipolicy_eval.mdp import parse_policies, validate_mdp, validate_policy
from multipolicy_eval.models import PolicyTable, TabularMdp, ValidationReport
from multipolicy_eval.protocol.errors import ErrorCode
from multipolicy_eval.protocol.types import EvalArguments, TextContent, ValidateArguments
from multipolicy_eval.traces import TraceRecorder


@require_valid_arguments(EvalArguments)
@require_mdp
@require_policies
def handle_eval(args: EvalArguments, *, mdp: TabularMdp, policies: list[PolicyTable]) -> list[TextContent]:
    """
    Evaluate all policies and write the report.

    Args:
        args: Validated eval arguments.
        mdp: Loaded model (injected by decorator).
        policies: Loaded policies (injected by decorator).

    Returns:
        List containing TextContent with the JSON EvaluationReport, or an error payload.
    """
    try:
        if args.algo == "mc":
            report = mc_baseline(mdp, policies, args.epsilon, args.delta, args.seed, args.budget_cap)
        else:
            config = CaesarConfig(
                mode=args.constants_mode,
                constants=resolve_constants(args.theory_constants),
                budget_cap=args.budget_cap,
                sampling_set=args.sampling_set,
            )
            trace = TraceRecorder(args.trace_stride) if args.trace is not None else None
            report = evaluate_policies(mdp, policies, args.epsilon, args.delta, config, args.seed, trace=trace)
            if trace is not None and args.trace is not None:
                trace.write_csv(args.trace)
        write_json(report, args.out)
        if args.csv is not None:
            report.write_csv(args.csv)
    except Exception as e:
        return error_response(e)
    return json_response(report.model_dump(mode="json"))


@require_valid_arguments(ValidateArguments)
def handle_validate(args: ValidateArguments) -> list[TextContent]:
    """
    Report every violated model invariant instead of failing on the first.

    Returns:
        List containing TextContent with {"ok", "violations"}; a failing report
        also carries "error" and "code".
    """
    try:
        mdp = TabularMdp.model_validate_json(args.mdp.read_text(encoding="utf-8"))
    except ValidationError as e:
        return json_response(
            {
                "error": f"Malformed MDP file {args.mdp}",
                "code": ErrorCode.INVALID_MODEL,
                "details": sanitize_pydantic_errors(e.errors()),
            }
        )
    except Exception as e:
        return error_response(e)

    violations = list(validate_mdp(mdp).violations)
    if args.policies is not None:
        try:
            policies = parse_policies(args.policies)
        except Exception as e:
            return error_response(e)
        for k, policy in enumerate(policies):
            violations.extend(
                violation.model_copy(update={"detail": f"policy {k}: {violation.detail}"})
                for violation in validate_policy(policy, mdp).violations
            )

    report = ValidationReport(violations=violations)
    payload: dict[str, Any] = {"ok": report.ok, **report.model_dump(mode="json")}
    if not report.ok:
        payload["error"] = f"Validation failed: {report.summary()}"
        payload["code"] = ErrorCode.INVALID_MODEL
    return json_response(payload)
