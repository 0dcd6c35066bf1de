import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fractura import adapt
from fractura.adapt import (
    BACKWARD,
    DIVIDED,
    AdaptiveDriver,
    TimeControl,
    bdf3_third_derivative,
    local_truncation_error,
    next_dt,
    spatial_estimate,
    weighted_error,
)
from fractura.config import RunConfig
from fractura.errors import InvalidParameter, NotEnoughHistory, RunAborted
from fractura.fem import ENRICHED, DofMap, phasefield_operator
from fractura.mesh import notched_rectangle
from fractura.model import MaterialParams
from fractura.quadrature import quadrature_points
from fractura.scenario import elastic_preset
from fractura.state import FieldState
from fractura.tintegrate import alpha_params


def _cubic(t):
    return np.array([2.0 * t**3 - t**2 + 3.0, -0.5 * t**3 + t])


def _control(times, f, variant=BACKWARD):
    tc = TimeControl(variant=variant)
    for i, t in enumerate(times):
        tc.record(f(t), None if i == 0 else t - times[i - 1])
    last = times[-1] + (times[-1] - times[-2])
    return tc.with_candidate(f(last), last - times[-1])


@pytest.mark.parametrize("variant", [BACKWARD, DIVIDED])
def test_third_derivative_of_cubic_on_uniform_steps(variant):
    tc = _control([0.0, 0.1, 0.2], _cubic, variant)
    assert np.allclose(bdf3_third_derivative(tc), [12.0, -3.0], rtol=1e-8)


def test_divided_difference_on_uneven_steps():
    """
    Six times the third divided difference recovers u''' of a cubic for any step sequence.
    """
    tc = TimeControl(variant=DIVIDED)
    times = [0.0, 0.1, 0.25, 0.3]
    for i, t in enumerate(times):
        tc.record(_cubic(t), None if i == 0 else t - times[i - 1])
    tc = tc.with_candidate(_cubic(0.5), 0.2)
    assert np.allclose(bdf3_third_derivative(tc), [12.0, -3.0], rtol=1e-8)
    tau = local_truncation_error(tc)
    assert np.allclose(tau, 0.2**2 * (0.05 + 0.15) / 6.0 * np.array([12.0, -3.0]), rtol=1e-8)


def test_backward_estimate_annihilates_linear_motion():
    def linear(t):
        return np.array([3.0 * t - 1.0, 0.5 * t])

    tc = TimeControl()
    times = [0.0, 0.1, 0.25]
    for i, t in enumerate(times):
        tc.record(linear(t), None if i == 0 else t - times[i - 1])
    tc = tc.with_candidate(linear(0.32), 0.07)
    assert np.allclose(local_truncation_error(tc), 0.0, atol=1e-13)


steps = st.floats(1e-3, 1.0)
values = st.floats(-1e3, 1e3)


def _random_control(dts, us, variant):
    tc = TimeControl(variant=variant)
    tc.record([us[0]])
    tc.record([us[1]], dts[0])
    tc.record([us[2]], dts[1])
    return tc.with_candidate([us[3]], dts[2])


@settings(max_examples=200, deadline=None)
@given(st.tuples(steps, steps, steps), st.tuples(values, values, values, values), st.sampled_from([BACKWARD, DIVIDED]))
def test_truncation_error_is_scaled_third_derivative(dts, us, variant):
    """
    tau = dt_{n+1}^2 (dt_n + dt_{n-1}) / 6 * u''' for both estimates on any history.
    """
    tc = _random_control(dts, us, variant)
    tau = local_truncation_error(tc)
    expected = dts[2] ** 2 * (dts[1] + dts[0]) / 6.0 * bdf3_third_derivative(tc)
    assert tau == pytest.approx(expected, rel=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-3, 1.0), st.floats(0.5, 2.0), st.tuples(values, values, values))
def test_quadratics_have_no_truncation_error(dt, ratio, coefficients):
    """
    Both estimates annihilate a quadratic on geometrically growing steps, where the backward
    bracket is exact; six times the divided difference annihilates it on any steps.
    """
    c0, c1, c2 = coefficients
    dts = (dt, dt * ratio, dt * ratio**2)
    times = np.concatenate([[0.0], np.cumsum(dts)])
    us = [c0 + c1 * t + c2 * t**2 for t in times]
    scale = max(abs(c0), abs(c1), abs(c2), 1.0)
    for variant in (BACKWARD, DIVIDED):
        tau = local_truncation_error(_random_control(dts, us, variant))
        assert abs(tau[0]) <= 1e-9 * scale * max(times[-1], 1.0) ** 2
    uneven = (dt, 0.3 * dt, dt * ratio)
    times = np.concatenate([[0.0], np.cumsum(uneven)])
    us = [c0 + c1 * t + c2 * t**2 for t in times]
    tau = local_truncation_error(_random_control(uneven, us, DIVIDED))
    assert abs(tau[0]) <= 1e-9 * scale * max(times[-1], 1.0) ** 2


def test_truncation_needs_four_snapshots():
    tc = TimeControl()
    tc.record([0.0])
    tc.record([1.0], 0.1)
    with pytest.raises(NotEnoughHistory):
        local_truncation_error(tc.with_candidate([2.0], 0.1))


def test_control_keeps_short_history():
    tc = TimeControl(tol_max=1e-3)
    assert tc.tol_min == pytest.approx(1e-5)
    for k in range(6):
        tc.record([float(k)], None if k == 0 else 0.1 * k)
    assert [u[0] for u in tc.snapshots] == [3.0, 4.0, 5.0]
    assert tc.steps == pytest.approx([0.4, 0.5])
    trial = tc.with_candidate([6.0], 0.6)
    assert len(trial.snapshots) == 4 and len(tc.snapshots) == 3
    assert (trial.dt_nm1, trial.dt_n, trial.dt_np1) == pytest.approx((0.4, 0.5, 0.6))
    assert tc.clip(10.0, 1.0) == 2.0
    with pytest.raises(InvalidParameter):
        TimeControl(tol_max=1e-3, tol_min=1e-2)


def test_weighted_error():
    assert weighted_error([1e-4], [0.0], rho_abs=1e-4, rho_rel=0.0) == pytest.approx(1.0)
    assert weighted_error([0.0, 0.0], [1.0, 2.0]) == 0.0
    assert weighted_error([1e-4, 0.0], [0.0, 0.0], rho_abs=1e-4, rho_rel=0.0) == pytest.approx(math.sqrt(0.5))
    with pytest.raises(InvalidParameter):
        weighted_error([1.0], [1.0, 2.0])


def test_next_dt():
    assert next_dt(1e-3, 0.1, 1e-3) == pytest.approx(0.09)
    assert next_dt(0.0, 0.1, 1e-3) == pytest.approx(0.2)
    assert next_dt(4e-3, 0.1, 1e-3, rho_tol=1.0) == pytest.approx(0.05)
    with pytest.raises(InvalidParameter):
        next_dt(float("nan"), 0.1, 1e-3)
    with pytest.raises(InvalidParameter):
        next_dt(1e-3, 0.0, 1e-3)


@settings(max_examples=500, deadline=None)
@given(st.floats(1e-12, 1e3), st.floats(1e-9, 1.0), st.floats(1e-6, 1e-1), st.floats(0.1, 1.0))
def test_next_dt_matches_scalar_law(E, dt, tol, rho_tol):
    reference = rho_tol * math.sqrt(tol / E) * dt
    assert next_dt(E, dt, tol, rho_tol) == reference


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-8, 1.0), st.floats(1e-8, 1.0))
def test_larger_error_gives_smaller_step(e1, e2):
    small, large = sorted((e1, e2))
    assert next_dt(large, 1e-3, 1e-3) <= next_dt(small, 1e-3, 1e-3)


@pytest.fixture
def material():
    return MaterialParams.from_engineering(208e6, 0.3, rho0=2400.0, gc=0.5, ell=0.05)


def test_intact_state_has_no_spatial_error(material):
    mesh = notched_rectangle(2.0, 1.0, 8, 4, notch_length=0.5)
    state = FieldState(mesh)
    estimate = spatial_estimate(state, state.copy(t=1e-4), 1e-4, alpha_params(0.5), material)
    assert estimate.norm <= 1e-8 * estimate.reference_norm
    assert estimate.contributions.shape == (mesh.n_triangles,)


def test_spatial_estimate_of_a_driven_step(material):
    """
    Uneven history leaves a residual outside the P1 range; its element parts add up to the total.
    """
    mesh = notched_rectangle(2.0, 1.0, 8, 4, notch_length=0.5)
    state = FieldState(mesh)
    centroids = mesh.centroids()
    history = np.repeat(1e3 * (1.0 + centroids[:, 0] ** 2)[:, None], 6, axis=1)
    candidate = state.copy(history=history)
    alpha = alpha_params(0.5)
    kkt = spatial_estimate(state, candidate, 1e-4, alpha, material, method="kkt")
    schur = spatial_estimate(state, candidate, 1e-4, alpha, material, method="schur")
    assert kkt.norm > 0.0
    assert np.all(kkt.contributions >= 0.0)
    assert kkt.contributions.sum() == pytest.approx(kkt.norm**2, rel=1e-9)
    assert schur.norm == pytest.approx(kkt.norm, rel=1e-6)
    with pytest.raises(InvalidParameter):
        spatial_estimate(state, FieldState(notched_rectangle(2.0, 1.0, 8, 4)), 1e-4, alpha, material)


def test_elastic_run_keeps_its_mesh():
    """
    Without damage nothing is refined, and E is unknown until four snapshots exist.
    """
    driver = AdaptiveDriver(elastic_preset(), RunConfig(scenario="elastic", max_steps=6))
    result = driver.run()
    assert len(result.records) == 6
    assert math.isnan(result.records[0].E) and math.isnan(result.records[1].E)
    assert all(not math.isnan(r.E) for r in result.records[2:])
    assert {r.n_elements for r in result.records} == {result.state.mesh.n_triangles}
    assert result.refinements == 0 and result.rejections == 0
    assert np.abs(result.state.phi - 1.0).max() < 1e-6
    times = [r.t for r in result.records]
    assert times == sorted(times)
    dt0 = elastic_preset().dt0
    assert [r.dt / dt0 for r in result.records] == pytest.approx([1.0, 1.0, 1.0, 1.0, 2.0, 4.0])


def test_unconverged_stagger_halves_the_step(monkeypatch):
    real = adapt.staggered_step
    calls = []

    def flaky(*args, **kwargs):
        result = real(*args, **kwargs)
        calls.append(result)
        if len(calls) == 1:
            result.converged = False
        return result

    monkeypatch.setattr(adapt, "staggered_step", flaky)
    scenario = elastic_preset()
    result = AdaptiveDriver(scenario, RunConfig(scenario="elastic", max_steps=1)).run()
    assert result.rejections == 1
    assert result.records[0].dt == pytest.approx(scenario.dt0 / 2.0)


def test_run_aborts_below_the_step_floor(monkeypatch):
    real = adapt.staggered_step

    def stuck(*args, **kwargs):
        result = real(*args, **kwargs)
        result.converged = False
        return result

    monkeypatch.setattr(adapt, "staggered_step", stuck)
    driver = AdaptiveDriver(elastic_preset(), RunConfig(scenario="elastic", dt_min=1e-5))
    with pytest.raises(RunAborted) as caught:
        driver.run()
    assert caught.value.record is None
    assert caught.value.state is not None


def test_adaptive_steps_respect_the_tolerance():
    """
    Once the controller is active no accepted step carries E above tol_max.
    """
    config = RunConfig(scenario="elastic", max_steps=12)
    driver = AdaptiveDriver(elastic_preset(), config)
    result = driver.run()
    active = result.records[config.startup_steps :]
    assert len(active) == 12 - config.startup_steps
    assert all(r.E <= driver.control.tol_max for r in active)


def _driven_step(mesh, material):
    state = FieldState(mesh)
    x = quadrature_points(mesh.vertices, mesh.triangles)[..., 0]
    return state, state.copy(history=1e3 * (1.0 + x**2))


def test_error_representation_is_orthogonal_to_trial_space(material):
    """
    The saddle-point constraint leaves the representation orthogonal to every P1 column of the operator.
    """
    mesh = notched_rectangle(2.0, 1.0, 8, 4, notch_length=0.5)
    state, candidate = _driven_step(mesh, material)
    alpha = alpha_params(0.5)
    estimate = spatial_estimate(state, candidate, 1e-4, alpha, material)
    matrix, _ = phasefield_operator(
        mesh, candidate.history, material, alpha, 1e-4, state, enriched=True, phi_iterate=candidate.phi
    )
    test = DofMap.for_mesh(mesh, ENRICHED).free
    columns = matrix[test][:, test[test < mesh.n_vertices]]
    residual = columns.T @ estimate.eps_h[test]
    scale = abs(columns).sum(axis=0).max() * np.abs(estimate.eps_h).max()
    assert np.abs(estimate.eps_h).max() > 0.0
    assert np.abs(residual).max() <= 1e-9 * scale


def test_spatial_estimate_shrinks_under_refinement(material):
    """
    Halving the cells of a smoothly driven step lowers the estimate at every level.
    """
    norms = []
    for n in (4, 8, 16):
        state, candidate = _driven_step(notched_rectangle(2.0, 1.0, n, n // 2), material)
        norms.append(spatial_estimate(state, candidate, 1e-4, alpha_params(0.5), material).norm)
    assert norms[0] > norms[1] > norms[2] > 0.0
