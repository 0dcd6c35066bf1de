import json
import math

import numpy as np
import pytest

from fractura.adapt import RunRecord
from fractura.arguments import RUN_LOG_HEADER
from fractura.mesh import notched_rectangle
from fractura.output import OutputWriter, RunLog, read_run_log, write_summary, write_vtk
from fractura.state import FieldState


def _record(step):
    return RunRecord(step, 1e-4 * step, 1e-4, math.nan if step < 3 else 1e-5, 64, 0.1, 2, 0.0, math.nan, math.nan)


@pytest.fixture
def state():
    mesh = notched_rectangle(2.0, 1.0, 4, 2, notch_length=0.5)
    return FieldState(mesh, t=1e-3, phi=np.linspace(0.0, 1.0, mesh.n_vertices))


def test_run_log(tmp_path):
    path = tmp_path / "log" / "run_log.csv"
    with RunLog(path) as log:
        for step in (1, 2, 3):
            log.write(_record(step).row())
        with pytest.raises(ValueError):
            log.write((1, 2.0))
    assert path.read_text().splitlines()[0] == ",".join(RUN_LOG_HEADER)
    rows = read_run_log(path)
    assert [row["step"] for row in rows] == [1, 2, 3]
    assert isinstance(rows[0]["n_elements"], int)
    assert math.isnan(rows[0]["E"]) and rows[2]["E"] == pytest.approx(1e-5)


def test_vtk_snapshot(tmp_path, state):
    """
    Legacy ASCII unstructured grid with triangle cells and the three fields.
    """
    path = write_vtk(state, tmp_path / "snap.vtk")
    lines = path.read_text().splitlines()
    mesh = state.mesh
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert lines[3] == "DATASET UNSTRUCTURED_GRID"
    assert f"POINTS {mesh.n_vertices} double" in lines
    assert f"CELLS {mesh.n_triangles} {4 * mesh.n_triangles}" in lines
    start = lines.index(f"CELL_TYPES {mesh.n_triangles}")
    assert set(lines[start + 1 : start + 1 + mesh.n_triangles]) == {"5"}
    assert "SCALARS phi double 1" in lines
    assert "VECTORS u double" in lines
    assert "SCALARS H double 1" in lines
    first_cell = lines[lines.index(f"CELLS {mesh.n_triangles} {4 * mesh.n_triangles}") + 1]
    assert first_cell == "3 " + " ".join(str(v) for v in mesh.triangles[0])


def test_summary_turns_nan_into_null(tmp_path):
    path = write_summary(tmp_path / "summary.json", {"status": "completed", "tip": math.nan, "steps": np.int64(4)})
    data = json.loads(path.read_text())
    assert data == {"status": "completed", "tip": None, "steps": 4}


def test_writer_cadence(tmp_path, state):
    writer = OutputWriter(tmp_path, cadence=2)
    for step in range(1, 6):
        writer(_record(step), state)
    writer.close()
    assert len(read_run_log(tmp_path / "run_log.csv")) == 5
    assert sorted(p.name for p in tmp_path.glob("*.vtk")) == ["state_000002.vtk", "state_000004.vtk"]
    with pytest.raises(ValueError):
        OutputWriter(tmp_path / "other", cadence=0)
