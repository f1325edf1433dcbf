"""
Universal constants and run modes.

The estimation guarantees hold "for some known constant"; the theory mode
uses the textbook values verbatim while the calibrated mode uses desk-scale
values found by the calibration harness. A constants file written by
`calibration.calibrate_constants` overrides either mode.
"""

import logging
from enum import Enum
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field

logger = logging.getLogger("multipolicy_eval")

DEFAULT_BUDGET_CAP = 10**8
DEFAULT_ENUMERATION_CAP = 10**6
PROBABILITY_TOLERANCE = 1e-9


class Mode(str, Enum):
    """How unspecified constants are resolved."""

    THEORY = "theory"
    CALIBRATED = "calibrated"


class Constants(BaseModel):
    """
    Constants used by sample-size and iteration-count formulas.

    Attributes:
        c_univ: Coarse estimation constant C in n >= C K log(CK/(eps delta)) / eps.
        c_h: IDES iteration constant C_h.
        bernstein_variance: Variance-term factor of the final sample size.
        bernstein_range: Range-term factor of the final sample size.
        mom_factor: Median-of-Means repetitions are ceil(mom_factor * ln(1/delta)).
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    c_univ: float = Field(default=32.0, gt=0)
    c_h: float = Field(default=8.0, gt=0)
    bernstein_variance: float = Field(default=8.0, gt=0)
    bernstein_range: float = Field(default=4.0 / 3.0, gt=0)
    mom_factor: float = Field(default=8.0, gt=0)

    @classmethod
    def for_mode(cls, mode: Mode) -> "Constants":
        """Return the built-in constants for a mode."""
        if mode == Mode.THEORY:
            return THEORY_CONSTANTS
        return CALIBRATED_CONSTANTS


THEORY_CONSTANTS = Constants()

CALIBRATED_CONSTANTS = Constants(
    c_univ=8.0,
    c_h=0.5,
    bernstein_variance=2.0,
    bernstein_range=1.0 / 3.0,
    mom_factor=2.0,
)


def load_constants(path: str | Path) -> Constants:
    """
    Load a constants file.

    Args:
        path: JSON file following the Constants schema.

    Returns:
        The parsed Constants.
    """
    constants = Constants.model_validate_json(Path(path).read_text(encoding="utf-8"))
    logger.info("Loaded constants from %s: %s", path, constants.model_dump())
    return constants


def dump_constants(constants: Constants, path: str | Path) -> None:
    """Write constants as JSON."""
    Path(path).write_text(constants.model_dump_json(indent=2), encoding="utf-8")
