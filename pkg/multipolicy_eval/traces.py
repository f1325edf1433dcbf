"""
CSV diagnostic traces.

Optimisation loops append rows at a configurable stride; the recorder turns
them into a pandas DataFrame and writes the CSV layout
run_id, h, iteration, loss_estimate, grad_norm_estimate.
"""

from pathlib import Path

import pandas as pd

TRACE_COLUMNS = ["run_id", "h", "iteration", "loss_estimate", "grad_norm_estimate"]


class TraceRecorder:
    """Collects optimisation trace rows."""

    def __init__(self, stride: int = 100):
        if stride < 1:
            raise ValueError("stride must be >= 1")
        self.stride = stride
        self.rows: list[tuple[str, int, int, float, float]] = []

    def record(self, run_id: str, h: int, iteration: int, loss_estimate: float, grad_norm_estimate: float) -> None:
        self.rows.append((run_id, h, iteration, loss_estimate, grad_norm_estimate))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=TRACE_COLUMNS)

    def write_csv(self, path: str | Path) -> None:
        self.to_frame().to_csv(path, index=False)

    def records(self) -> list[dict[str, str | int | float]]:
        return [dict(zip(TRACE_COLUMNS, row, strict=True)) for row in self.rows]
