"""
Command-line front end.

Every sub-command is a tool call: parsed options become the tool's arguments
dict and the JSON payload is printed to stdout. An error payload exits with
status 1; argparse exits with 2 on bad options.
"""

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from typing import Any

from multipolicy_eval import __version__
from multipolicy_eval.tools import call_tool

logger = logging.getLogger("multipolicy_eval")


def _add_model_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--mdp", required=True, help="MDP JSON file")
    parser.add_argument("--policies", required=True, help="Policy JSON file")
    parser.add_argument("--epsilon", type=float, required=True)
    parser.add_argument("--delta", type=float, required=True)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--constants-mode", choices=["calibrated", "theory"], default="calibrated")
    parser.add_argument("--theory-constants", help="Constants file from the calibrate tool")
    parser.add_argument("--budget-cap", type=int)
    parser.add_argument("--out", help="Write the JSON result here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multipolicy-eval", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (default: WARNING)",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    evaluate = commands.add_parser("eval", help="Evaluate every policy in a policy file")
    _add_model_options(evaluate)
    evaluate.add_argument("--mode", dest="algo", choices=["caesar", "mc"], default="caesar")
    evaluate.add_argument("--csv", help="Per-policy CSV summary")
    evaluate.add_argument("--trace", help="IDES diagnostic trace CSV")
    evaluate.add_argument("--trace-stride", type=int)
    evaluate.add_argument("--sampling-set", choices=["targets", "deterministic"])

    identify = commands.add_parser("identify", help="Pick an epsilon-optimal candidate policy")
    _add_model_options(identify)

    bench = commands.add_parser("bench", help="Run an experiment grid")
    bench.add_argument("--config", required=True, help="ExperimentConfig JSON file")

    calibrate = commands.add_parser("calibrate", help="Calibrate the universal constants")
    calibrate.add_argument("--config", help="CalibrationConfig JSON file")
    calibrate.add_argument("--out", required=True, help="Constants file to write")

    validate = commands.add_parser("validate", help="Check model and policy files")
    validate.add_argument("--mdp", required=True)
    validate.add_argument("--policies")

    commands.add_parser("tools", help="List tools and their argument schemas")
    return parser


def arguments_from(namespace: argparse.Namespace) -> dict[str, Any]:
    """Tool arguments from parsed options; unset options are left to the tool's defaults."""
    skip = {"command", "log_level"}
    return {key: value for key, value in vars(namespace).items() if key not in skip and value is not None}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    namespace = parser.parse_args(argv)
    logging.basicConfig(level=namespace.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    content = call_tool(namespace.command, arguments_from(namespace))
    text = content[0].text
    print(text)
    payload = json.loads(text)
    if "error" in payload:
        logger.error("%s failed: %s", namespace.command, payload["error"])
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
