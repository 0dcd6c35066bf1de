import numpy as np
import pytest

from fractura.errors import InvalidParameter
from fractura.fem import load_vector, mass_matrix
from fractura.scenario import elastic_preset
from fractura.state import FieldState
from fractura.tintegrate import (
    alpha_params,
    initial_state,
    integrate_linear,
    integrate_oscillator,
    kinematic_update,
    staggered_step,
)


def test_alpha_constants_at_the_ends():
    """
    rho_inf = 1 is the trapezoidal rule; rho_inf = 0 annihilates the highest frequencies.
    """
    trapezoid = alpha_params(1.0)
    assert (trapezoid.af_c, trapezoid.am_c, trapezoid.gamma_c, trapezoid.beta_c) == pytest.approx((0.5, 0.5, 0.5, 0.25))
    assert (trapezoid.af_j, trapezoid.am_j, trapezoid.gamma_j) == pytest.approx((0.5, 0.5, 0.5))
    damped = alpha_params(0.0)
    assert (damped.af_c, damped.am_c, damped.gamma_c, damped.beta_c) == pytest.approx((1.0, 2.0, 1.5, 1.0))
    assert (damped.af_j, damped.am_j, damped.gamma_j) == pytest.approx((1.0, 1.5, 1.0))
    with pytest.raises(InvalidParameter):
        alpha_params(1.5)


def test_trapezoidal_oscillator_conserves_energy():
    _, u, v, _ = integrate_oscillator(1.0, 4.0, 1.0, 0.0, 0.05, 400, alpha_params(1.0))
    energy = 0.5 * v**2 + 2.0 * u**2
    assert np.allclose(energy, energy[0], rtol=1e-10)


def test_damped_oscillator_loses_energy():
    _, u, v, _ = integrate_oscillator(1.0, 1.0, 1.0, 0.0, 0.5, 200, alpha_params(0.0))
    assert 0.5 * (v[-1] ** 2 + u[-1] ** 2) < 0.5


def test_constant_force_static_limit():
    """
    A large step with full damping lands on the static solution force / k.
    """
    _, u, _, _ = integrate_oscillator(1.0, 1.0, 0.0, 0.0, 1e3, 30, alpha_params(0.0), force=2.0)
    assert u[-1] == pytest.approx(2.0, rel=1e-6)


def test_linear_system_matches_scalar_runs():
    """
    Uncoupled equations integrate independently.
    """
    alpha = alpha_params(0.5)
    _, u, _, _ = integrate_linear(np.diag([1.0, 2.0]), np.diag([3.0, 8.0]), [1.0, -1.0], [0.0, 0.5], 0.1, 50, alpha)
    _, u0, _, _ = integrate_oscillator(1.0, 3.0, 1.0, 0.0, 0.1, 50, alpha)
    _, u1, _, _ = integrate_oscillator(2.0, 8.0, -1.0, 0.5, 0.1, 50, alpha)
    assert np.allclose(u[:, 0], u0) and np.allclose(u[:, 1], u1)


def test_kinematic_update_advances_time():
    scenario = elastic_preset()
    mesh = scenario.build_mesh()
    state = FieldState(mesh, t=1.0)
    inc_phi = np.full(mesh.n_vertices, -0.1)
    new = kinematic_update(state, np.zeros(2 * mesh.n_vertices), inc_phi, alpha_params(0.5), 0.01)
    assert new.t == pytest.approx(1.01)
    assert np.allclose(new.phi, 0.9)
    assert np.allclose(new.phidot, -0.1 / 0.01 / alpha_params(0.5).gamma_j)
    with pytest.raises(InvalidParameter):
        kinematic_update(state, np.zeros(2 * mesh.n_vertices), inc_phi, alpha_params(0.5), 0.0)


def test_initial_state_is_in_dynamic_equilibrium():
    scenario = elastic_preset()
    mesh = scenario.build_mesh()
    bc = scenario.boundary_conditions()
    state = initial_state(mesh, scenario.material, bc)
    assert np.allclose(mass_matrix(mesh, scenario.material.rho0) @ state.uddot, load_vector(mesh, bc, scenario.material))
    assert np.all(state.phi == 1.0)


def test_staggered_step_in_the_elastic_regime():
    """
    Under a tiny load the phase field barely moves and one pass suffices.
    """
    scenario = elastic_preset()
    mesh = scenario.build_mesh()
    bc = scenario.boundary_conditions()
    state = initial_state(mesh, scenario.material, bc)
    result = staggered_step(state, 5e-5, alpha_params(0.5), scenario.material, bc)
    new, iterations, converged = result
    assert converged and iterations == 1
    assert new.t == pytest.approx(5e-5)
    assert np.abs(new.phi - 1.0).max() < 1e-6
    assert np.abs(new.u).max() > 0.0
    assert np.all(new.history >= state.history)


def test_staggered_step_rejects_bad_input():
    scenario = elastic_preset()
    mesh = scenario.build_mesh()
    state = FieldState(mesh)
    with pytest.raises(InvalidParameter):
        staggered_step(state, -1.0, alpha_params(0.5), scenario.material, scenario.boundary_conditions())
    with pytest.raises(InvalidParameter):
        staggered_step(state, 1e-5, alpha_params(0.5), scenario.material, scenario.boundary_conditions(), tol_stg=0.0)


@pytest.mark.parametrize("rho_inf", [0.0, 0.5, 1.0])
def test_kinematic_update_is_exact_for_quadratic_motion(rho_inf):
    """
    u = t^2 and phi = 1 - t keep their exact rates through one update.
    """
    mesh = elastic_preset().build_mesh()
    n = mesh.n_vertices
    t, dt = 0.3, 0.05
    state = FieldState(
        mesh,
        t,
        u=np.full(2 * n, t**2),
        udot=np.full(2 * n, 2.0 * t),
        uddot=np.full(2 * n, 2.0),
        phi=np.full(n, 1.0 - t),
        phidot=np.full(n, -1.0),
    )
    inc_u = np.full(2 * n, (t + dt) ** 2 - t**2)
    new = kinematic_update(state, inc_u, np.full(n, -dt), alpha_params(rho_inf), dt)
    assert np.allclose(new.u, (t + dt) ** 2, rtol=1e-13)
    assert np.allclose(new.udot, 2.0 * (t + dt), rtol=1e-12)
    assert np.allclose(new.uddot, 2.0, rtol=1e-10)
    assert np.allclose(new.phidot, -1.0, rtol=1e-12)


def _damaged_start(eta=None):
    scenario = elastic_preset()
    mesh = scenario.build_mesh()
    params = scenario.material if eta is None else scenario.material.with_(eta=eta)
    bc = scenario.boundary_conditions()
    state = initial_state(mesh, params, bc).copy(history=np.full((mesh.n_triangles, 6), 1e3))
    return state, params, bc


def test_stiff_viscosity_freezes_the_phase_field():
    """
    As eta grows the phase-field increment vanishes, whatever drives it.
    """
    state, params, bc = _damaged_start()
    free = staggered_step(state, 5e-5, alpha_params(0.0), params, bc).state
    state, params, bc = _damaged_start(eta=1e6)
    frozen = staggered_step(state, 5e-5, alpha_params(0.0), params, bc).state
    assert np.abs(free.phi - 1.0).max() > 0.5
    assert np.abs(frozen.phi - 1.0).max() < 1e-6


def test_staggered_iteration_contracts():
    """
    With the history fixed the phase-field update settles after one pass and the loop converges.
    """
    state, params, bc = _damaged_start()
    result = staggered_step(state, 5e-5, alpha_params(0.0), params, bc)
    assert result.converged
    assert 2 <= result.iterations <= 4
    assert result.dphi_norms[0] > 0.1
    assert max(result.dphi_norms[1:]) < 1e-8 * result.dphi_norms[0]
    assert result.du_norms[0] == 0.0
