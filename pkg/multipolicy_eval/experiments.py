"""
Seeded experiment grids.

A grid crosses generator specs, algorithms, (epsilon, delta) pairs and
repetitions. Each cell writes its report as JSON; the aggregate is one CSV
row per cell, sorted by configuration and seed so identical configs give
identical files.
"""

import itertools
import logging
from pathlib import Path
from typing import Any, Literal

import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, field_validator

from multipolicy_eval.caesar import CaesarConfig, EvaluationReport, evaluate_policies, mc_baseline
from multipolicy_eval.config import load_constants
from multipolicy_eval.errors import MultiPolicyEvalError
from multipolicy_eval.generators import (
    gen_chain_mdp,
    gen_random_mdp,
    gen_two_layer_k_example,
    gen_unrealizable_example,
    random_policies,
)
from multipolicy_eval.models import PolicyTable, TabularMdp

logger = logging.getLogger("multipolicy_eval")

AGGREGATE_COLUMNS = [
    "family",
    "S",
    "A",
    "H",
    "K",
    "epsilon",
    "delta",
    "algo",
    "seed",
    "total_trajectories",
    "max_abs_err",
    "success",
    "status",
]
SORT_COLUMNS = ["family", "S", "A", "H", "K", "epsilon", "delta", "algo", "seed"]

Family = Literal["random", "chain", "two_layer", "unrealizable"]
Algorithm = Literal["caesar", "mc"]


class GeneratorSpec(BaseModel):
    """
    One model family instance with K target policies.

    S and H are fixed by the two-layer families (3 and 2); A defaults to K there.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    family: Family = "random"
    S: int = Field(default=3, ge=1)
    A: int = Field(default=2, ge=1)
    H: int = Field(default=2, ge=1)
    K: int = Field(default=2, ge=1)
    seed: int = Field(default=0, ge=0)
    sparsity: float = Field(default=0.0, ge=0, lt=1)
    p: float = Field(default=0.5, gt=0, lt=1)

    def build(self) -> tuple[TabularMdp, list[PolicyTable]]:
        if self.family == "two_layer":
            return gen_two_layer_k_example(self.K, self.p, max(self.A, self.K))
        if self.family == "unrealizable":
            return gen_unrealizable_example(self.K, max(self.A, self.K))
        if self.family == "chain":
            mdp = gen_chain_mdp(self.S, self.A, self.H)
        else:
            mdp = gen_random_mdp(self.S, self.A, self.H, self.sparsity, self.seed)
        return mdp, random_policies(mdp, self.K, self.seed)


class ExperimentConfig(BaseModel):
    """
    A grid of seeded runs.

    Attributes:
        generators: Model families to run.
        algorithms: Algorithms per generator.
        epsilons: Accuracy grid.
        deltas: Failure-probability grid.
        repetitions: Seeds per cell, base_seed + r.
        base_seed: First seed.
        output_dir: Root of the per-run JSON files and aggregate.csv.
        constants_file: Calibrated constants overriding the pipeline mode.
        caesar: Pipeline settings.
        workers: Parallel processes; 1 runs inline.
    """

    model_config = ConfigDict(extra="forbid")

    generators: list[GeneratorSpec] = Field(min_length=1)
    algorithms: list[Algorithm] = Field(default_factory=lambda: ["caesar", "mc"], min_length=1)
    epsilons: list[float] = Field(min_length=1)
    deltas: list[float] = Field(min_length=1)
    repetitions: int = Field(default=1, ge=1)
    base_seed: int = Field(default=0, ge=0)
    output_dir: Path = Path("results")
    constants_file: Path | None = None
    caesar: CaesarConfig = Field(default_factory=CaesarConfig)
    workers: int = Field(default=1, ge=1)

    @field_validator("epsilons", "deltas")
    @classmethod
    def _in_unit_interval(cls, values: list[float]) -> list[float]:
        if any(not 0 < value < 1 for value in values):
            raise ValueError("grid values must lie in (0, 1)")
        return values

    def resolved_caesar(self) -> CaesarConfig:
        if self.constants_file is None:
            return self.caesar
        return self.caesar.model_copy(update={"constants": load_constants(self.constants_file)})


def _run_name(spec: GeneratorSpec, algo: str, epsilon: float, delta: float, seed: int) -> str:
    return f"{spec.family}_S{spec.S}_A{spec.A}_H{spec.H}_K{spec.K}_eps{epsilon:g}_delta{delta:g}_{algo}_seed{seed}"


def run_cell(
    spec: GeneratorSpec,
    algo: Algorithm,
    epsilon: float,
    delta: float,
    seed: int,
    caesar: CaesarConfig,
    output_dir: Path,
) -> dict[str, Any]:
    """Run one cell, write its JSON report and return its aggregate row."""
    mdp, policies = spec.build()
    H, S, A = mdp.shape
    row: dict[str, Any] = {
        "family": spec.family,
        "S": S,
        "A": A,
        "H": H,
        "K": len(policies),
        "epsilon": epsilon,
        "delta": delta,
        "algo": algo,
        "seed": seed,
    }
    report: EvaluationReport | None = None
    try:
        if algo == "caesar":
            report = evaluate_policies(mdp, policies, epsilon, delta, caesar, seed)
        else:
            report = mc_baseline(mdp, policies, epsilon, delta, seed, caesar.budget_cap, caesar.oracle_limit)
    except (MultiPolicyEvalError, ValueError) as e:
        logger.warning("Cell %s failed: %s", _run_name(spec, algo, epsilon, delta, seed), e)
        partial = getattr(e, "partial", None)
        row.update(
            total_trajectories=partial.phase_counts.total if partial is not None else 0,
            max_abs_err=None,
            success=False,
            status=f"failed: {type(e).__name__}",
        )
        return row

    path = output_dir / "runs" / f"{_run_name(spec, algo, epsilon, delta, seed)}.json"
    path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
    error = report.max_abs_error
    row.update(
        total_trajectories=report.phase_counts.total,
        max_abs_err=error,
        success=None if error is None else error <= epsilon,
        status="ok",
    )
    return row


def run_experiment(cfg: ExperimentConfig) -> pd.DataFrame:
    """
    Execute the grid and write output_dir/runs/*.json and output_dir/aggregate.csv.

    Failed cells are recorded with status "failed: <error>" instead of aborting the grid.

    Returns:
        The aggregate table.
    """
    caesar = cfg.resolved_caesar()
    (cfg.output_dir / "runs").mkdir(parents=True, exist_ok=True)
    cells = list(
        itertools.product(
            cfg.generators,
            cfg.algorithms,
            cfg.epsilons,
            cfg.deltas,
            range(cfg.base_seed, cfg.base_seed + cfg.repetitions),
        )
    )
    logger.info("Running %d cells on %d workers", len(cells), cfg.workers)
    if cfg.workers == 1:
        rows = [run_cell(*cell, caesar, cfg.output_dir) for cell in cells]
    else:
        rows = Parallel(n_jobs=cfg.workers, prefer="processes")(
            delayed(run_cell)(*cell, caesar, cfg.output_dir) for cell in cells
        )
    frame = pd.DataFrame(rows, columns=AGGREGATE_COLUMNS)
    frame = frame.sort_values(SORT_COLUMNS, kind="stable").reset_index(drop=True)
    frame.to_csv(cfg.output_dir / "aggregate.csv", index=False)
    logger.info("Wrote %d rows to %s", len(frame), cfg.output_dir / "aggregate.csv")
    return frame


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    return ExperimentConfig.model_validate_json(Path(path).read_text(encoding="utf-8"))
