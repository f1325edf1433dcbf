"""
Harness handlers.

- handle_bench: run an experiment grid from a config file
- handle_calibrate: calibrate the universal constants and write a constants file
"""

from multipolicy_eval.calibration import CalibrationConfig, calibrate_constants
from multipolicy_eval.experiments import load_experiment_config, run_experiment
from multipolicy_eval.handlers.base import error_response, json_response
from multipolicy_eval.handlers.decorators import require_valid_arguments
from multipolicy_eval.protocol.types import BenchArguments, CalibrateArguments, TextContent


@require_valid_arguments(BenchArguments)
def handle_bench(args: BenchArguments) -> list[TextContent]:
    """
    Run every cell of the grid.

    Returns:
        List containing TextContent with the aggregate path, row count and
        number of failed cells.
    """
    try:
        cfg = load_experiment_config(args.config)
        frame = run_experiment(cfg)
    except Exception as e:
        return error_response(e)
    failed = int((frame["status"] != "ok").sum())
    return json_response(
        {
            "aggregate": str(cfg.output_dir / "aggregate.csv"),
            "rows": len(frame),
            "failed": failed,
        }
    )


@require_valid_arguments(CalibrateArguments)
def handle_calibrate(args: CalibrateArguments) -> list[TextContent]:
    """Calibrate C and C_h on the reference suite and write them to args.out."""
    try:
        if args.config is not None:
            cfg = CalibrationConfig.model_validate_json(args.config.read_text(encoding="utf-8"))
        else:
            cfg = CalibrationConfig()
        constants = calibrate_constants(cfg.model_copy(update={"output": args.out}))
    except Exception as e:
        return error_response(e)
    return json_response({"constants": constants.model_dump(mode="json"), "out": str(args.out)})
