"""
Policy identification handler.
"""

from multipolicy_eval.caesar import CaesarConfig
from multipolicy_eval.handlers.base import error_response, json_response, resolve_constants, write_json
from multipolicy_eval.handlers.decorators import require_mdp, require_policies, require_valid_arguments
from multipolicy_eval.identification import identify
from multipolicy_eval.models import PolicyTable, TabularMdp
from multipolicy_eval.protocol.types import IdentifyArguments, TextContent


@require_valid_arguments(IdentifyArguments)
@require_mdp
@require_policies
def handle_identify(args: IdentifyArguments, *, mdp: TabularMdp, policies: list[PolicyTable]) -> list[TextContent]:
    """
    Pick an epsilon-optimal candidate by successive elimination.

    Args:
        args: Validated identify arguments.
        mdp: Loaded model (injected by decorator).
        policies: Loaded candidates (injected by decorator).

    Returns:
        List containing TextContent with the audit trail (rounds with gamma,
        survivors, estimates and budget) and the chosen index.
    """
    try:
        config = CaesarConfig(
            mode=args.constants_mode,
            constants=resolve_constants(args.theory_constants),
            budget_cap=args.budget_cap,
        )
        state = identify(mdp, policies, args.epsilon, args.delta, config, args.seed)
        write_json(state, args.out)
    except Exception as e:
        return error_response(e)
    return json_response(state.model_dump(mode="json"))
