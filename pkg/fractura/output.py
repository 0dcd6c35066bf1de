"""
Run output: the per-step CSV log, legacy ASCII VTK snapshots and summary.json.
"""
import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from .arguments import RUN_LOG_HEADER
from .state import FieldState

logger = logging.getLogger(__name__)

VTK_TRIANGLE = 5


def _cell(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "%.12e" % float(value)


class RunLog:
    """
    CSV log of accepted steps. Rows are flushed as they are written so a crashed run
    keeps everything up to its last accepted step.
    """

    def __init__(self, path: Union[str, Path]) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.__file = open(self.path, "w", newline="", encoding="utf-8")
        self.__writer = csv.writer(self.__file)
        self.__writer.writerow(RUN_LOG_HEADER)
        self.rows = 0

    def write(self, row) -> None:
        if len(row) != len(RUN_LOG_HEADER):
            raise ValueError(f"expected {len(RUN_LOG_HEADER)} columns, got {len(row)}")
        self.__writer.writerow([_cell(value) for value in row])
        self.__file.flush()
        self.rows += 1

    def close(self) -> None:
        if not self.__file.closed:
            self.__file.close()

    def __enter__(self) -> "RunLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_run_log(path: Union[str, Path]):
    """
    Rows of a run log as dicts of floats (integers for step, n_elements, n_stagger).
    """
    integers = {"step", "n_elements", "n_stagger"}
    with open(path, newline="", encoding="utf-8") as handle:
        return [
            {key: int(value) if key in integers else float(value) for key, value in row.items()}
            for row in csv.DictReader(handle)
        ]


def write_vtk(state: FieldState, path: Union[str, Path], title: Optional[str] = None) -> Path:
    """
    Unstructured-grid snapshot with phi and u on the points and the element mean of H on the cells.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mesh = state.mesh
    n, m = mesh.n_vertices, mesh.n_triangles
    lines = [
        "# vtk DataFile Version 3.0",
        title or f"fractura t={state.t:.12e}",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
    ]
    lines += [f"{x:.12e} {y:.12e} 0.0" for x, y in mesh.vertices]
    lines.append(f"CELLS {m} {4 * m}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {m}")
    lines += [str(VTK_TRIANGLE)] * m
    lines += [f"POINT_DATA {n}", "SCALARS phi double 1", "LOOKUP_TABLE default"]
    lines += [f"{value:.12e}" for value in state.phi]
    lines.append("VECTORS u double")
    lines += [f"{ux:.12e} {uy:.12e} 0.0" for ux, uy in state.displacement()]
    lines += [f"CELL_DATA {m}", "SCALARS H double 1", "LOOKUP_TABLE default"]
    lines += [f"{value:.12e}" for value in state.history.mean(axis=1)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _jsonable(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, (np.floating, np.integer)):
        return _jsonable(value.item())
    if isinstance(value, dict):
        return {key: _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    return value


def write_summary(path: Union[str, Path], summary: Dict[str, Any]) -> Path:
    """
    Writes summary.json; non-finite floats become null.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


class OutputWriter:
    """
    Observer for the adaptive driver: logs every accepted step and writes a VTK snapshot
    every `cadence` steps into `directory`.
    """

    def __init__(self, directory: Union[str, Path], cadence: int = 10) -> None:
        if cadence < 1:
            raise ValueError("cadence must be at least 1")
        self.directory = Path(directory)
        self.cadence = cadence
        self.log = RunLog(self.directory / "run_log.csv")
        self.snapshots = []

    def __call__(self, record, state: FieldState) -> None:
        self.log.write(record.row())
        if record.step % self.cadence == 0:
            self.snapshot(state, record.step)

    def snapshot(self, state: FieldState, step: int) -> Path:
        path = write_vtk(state, self.directory / f"state_{step:06d}.vtk")
        self.snapshots.append(path)
        logger.debug("Wrote %s", path)
        return path

    def close(self) -> None:
        self.log.close()
