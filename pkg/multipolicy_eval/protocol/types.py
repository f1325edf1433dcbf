"""
Tool wire types: content, tool descriptors and per-tool argument models.
"""

from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field

from multipolicy_eval.config import DEFAULT_BUDGET_CAP, Mode

# =============================================================================
# Content Types
# =============================================================================


class TextContent(BaseModel):
    """Text content of a tool result."""

    type: Literal["text"] = "text"
    text: str


# =============================================================================
# Tool Definitions
# =============================================================================


class Tool(BaseModel):
    """Tool descriptor with the JSON schema of its arguments."""

    name: str
    description: str
    inputSchema: dict[str, Any]


# =============================================================================
# Tool Arguments
# =============================================================================


class _Arguments(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EvalArguments(_Arguments):
    """Arguments of the eval tool."""

    mdp: Path = Field(description="MDP JSON file")
    policies: Path = Field(description="Policy JSON file (one policy or {'policies': [...]})")
    epsilon: float = Field(gt=0, lt=1, description="Accuracy for every policy")
    delta: float = Field(gt=0, lt=1, description="Failure probability")
    seed: int = Field(default=0, ge=0, lt=2**64, description="Root seed")
    algo: Literal["caesar", "mc"] = Field(default="caesar", description="Estimator")
    constants_mode: Mode = Field(default=Mode.CALIBRATED, description="Built-in constants to use")
    theory_constants: Path | None = Field(default=None, description="Constants file overriding constants_mode")
    budget_cap: int = Field(default=DEFAULT_BUDGET_CAP, ge=1, description="Global trajectory cap")
    sampling_set: Literal["targets", "deterministic"] = Field(
        default="targets", description="Mix the targets only, or the targets plus every deterministic policy"
    )
    out: Path | None = Field(default=None, description="Write the JSON report here")
    csv: Path | None = Field(default=None, description="Write the per-policy CSV summary here")
    trace: Path | None = Field(default=None, description="Write IDES diagnostic traces here")
    trace_stride: int = Field(default=100, ge=1, description="Iterations between trace rows")


class IdentifyArguments(_Arguments):
    """Arguments of the identify tool."""

    mdp: Path = Field(description="MDP JSON file")
    policies: Path = Field(description="Candidate policy JSON file")
    epsilon: float = Field(gt=0, lt=1, description="Optimality gap")
    delta: float = Field(gt=0, lt=1, description="Failure probability")
    seed: int = Field(default=0, ge=0, lt=2**64, description="Root seed")
    constants_mode: Mode = Field(default=Mode.CALIBRATED, description="Built-in constants to use")
    theory_constants: Path | None = Field(default=None, description="Constants file overriding constants_mode")
    budget_cap: int = Field(default=DEFAULT_BUDGET_CAP, ge=1, description="Trajectory cap per round")
    out: Path | None = Field(default=None, description="Write the audit trail here")


class BenchArguments(_Arguments):
    """Arguments of the bench tool."""

    config: Path = Field(description="ExperimentConfig JSON file")


class CalibrateArguments(_Arguments):
    """Arguments of the calibrate tool."""

    config: Path | None = Field(default=None, description="CalibrationConfig JSON file; defaults when omitted")
    out: Path = Field(description="Constants file to write")


class ValidateArguments(_Arguments):
    """Arguments of the validate tool."""

    mdp: Path = Field(description="MDP JSON file")
    policies: Path | None = Field(default=None, description="Optional policy file checked against the MDP")


class ToolsArguments(_Arguments):
    """The tools listing takes no arguments."""
