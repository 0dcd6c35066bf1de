import numpy as np
import pytest

from fractura.errors import InvalidParameter
from fractura.mesh import Marking, notched_rectangle, refine
from fractura.state import FieldState


def test_defaults_match_mesh():
    """
    A fresh state is at rest, intact and without history.
    """
    mesh = notched_rectangle(2.0, 1.0, 4, 2)
    state = FieldState(mesh)
    assert state.u.shape == (2 * mesh.n_vertices,)
    assert state.phi.shape == (mesh.n_vertices,)
    assert state.history.shape == (mesh.n_triangles, 6)
    assert np.all(state.phi == 1.0)
    assert not state.uddot.any()
    assert state.displacement().shape == (mesh.n_vertices, 2)


def test_wrong_sizes_are_rejected():
    mesh = notched_rectangle(2.0, 1.0, 4, 2)
    with pytest.raises(InvalidParameter):
        FieldState(mesh, phi=np.ones(3))
    with pytest.raises(InvalidParameter):
        FieldState(mesh, history=np.zeros((mesh.n_triangles, 3)))


def test_copy_is_independent():
    mesh = notched_rectangle(2.0, 1.0, 4, 2)
    state = FieldState(mesh, t=1.0)
    other = state.copy(t=2.0)
    other.phi[0] = 0.0
    assert state.phi[0] == 1.0
    assert other.t == 2.0 and state.t == 1.0
    assert other.mesh is state.mesh


def test_projection_onto_refined_mesh():
    """
    Affine displacements transfer exactly and the history keeps its parent's peak.
    """
    mesh = notched_rectangle(2.0, 1.0, 4, 2)
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    history = np.zeros((mesh.n_triangles, 6))
    history[0, 2] = 5.0
    state = FieldState(mesh, u=np.column_stack([x, 2 * y]).ravel(), phi=1.0 - 0.1 * x, history=history)
    fine = refine(mesh, Marking.of([0]))
    moved = state.project(fine)
    fx, fy = fine.vertices[:, 0], fine.vertices[:, 1]
    assert np.allclose(moved.displacement(), np.column_stack([fx, 2 * fy]))
    assert np.allclose(moved.phi, 1.0 - 0.1 * fx)
    children = np.nonzero(fine.parent_map == 0)[0]
    assert np.all(moved.history[children] == 5.0)
    assert moved.history.max() == 5.0
    assert moved.mesh is fine


def test_state_summary_mentions_mesh():
    mesh = notched_rectangle(2.0, 1.0, 4, 2)
    text = str(FieldState(mesh))
    assert f"{mesh.n_triangles} triangles" in text
