"""
Staggered generalized-alpha time stepping.

The second-order (momentum) and first-order (phase-field) subsystems share one
spectral radius rho_inf. One time step alternates a momentum solve with the phase
field frozen and a phase-field solve driven by the refreshed history field, until
both iterates stop changing.
"""
import logging
from dataclasses import dataclass, field
from typing import Iterator, List, Tuple

import numpy as np

from .errors import InvalidParameter
from .fem import (
    BoundaryConditions,
    assemble_momentum,
    assemble_phasefield,
    initial_acceleration,
    l2_norm,
    tensile_energy_at_points,
)
from .linalg import DEFAULT_RTOL
from .model import MaterialParams, update_history
from .state import FieldState

logger = logging.getLogger(__name__)

NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class AlphaParams:
    af_c: float
    am_c: float
    gamma_c: float
    beta_c: float
    af_j: float
    am_j: float
    gamma_j: float
    rho_inf: float


def alpha_params(rho_inf: float) -> AlphaParams:
    """
    Generalized-alpha constants for spectral radius rho_inf in [0, 1].
    """
    if not 0.0 <= rho_inf <= 1.0:
        raise InvalidParameter("rho_inf must lie in [0, 1]", {"rho_inf": rho_inf})
    af_c = 1.0 / (1.0 + rho_inf)
    am_c = (2.0 - rho_inf) / (1.0 + rho_inf)
    af_j = 1.0 / (1.0 + rho_inf)
    am_j = 0.5 * (3.0 - rho_inf) / (1.0 + rho_inf)
    return AlphaParams(
        af_c=af_c,
        am_c=am_c,
        gamma_c=0.5 + am_c - af_c,
        beta_c=0.25 * (1.0 + am_c - af_c) ** 2,
        af_j=af_j,
        am_j=am_j,
        gamma_j=0.5 + am_j - af_j,
        rho_inf=rho_inf,
    )


def _second_order_update(u, v, a, du, alpha: AlphaParams, dt: float):
    da = (du - dt * v - 0.5 * dt**2 * a) / (alpha.beta_c * dt**2)
    return u + du, v + dt * (a + alpha.gamma_c * da), a + da


def kinematic_update(
    state: FieldState,
    inc_u,
    inc_phi,
    alpha: AlphaParams,
    dt: float,
    history=None,
) -> FieldState:
    """
    Advance `state` by dt given the solved increments of u and phi.
    """
    if dt <= 0.0:
        raise InvalidParameter("time step must be positive", {"dt": dt})
    u, udot, uddot = _second_order_update(state.u, state.udot, state.uddot, np.asarray(inc_u), alpha, dt)
    inc_phi = np.asarray(inc_phi, dtype=float)
    inc_rate = (inc_phi / dt - state.phidot) / alpha.gamma_j
    return FieldState(
        state.mesh,
        state.t + dt,
        u=u,
        udot=udot,
        uddot=uddot,
        phi=state.phi + inc_phi,
        phidot=state.phidot + inc_rate,
        history=state.history if history is None else history,
    )


@dataclass
class StaggeredResult:
    """
    Outcome of one staggered step. Unpacks as (state, iterations, converged).
    """

    state: FieldState
    iterations: int
    converged: bool
    du_norms: List[float] = field(default_factory=list)
    dphi_norms: List[float] = field(default_factory=list)

    def __iter__(self) -> Iterator:
        return iter((self.state, self.iterations, self.converged))


def _relative_change(mesh, new, old) -> float:
    return l2_norm(mesh, new - old) / max(l2_norm(mesh, new), NORM_FLOOR)


def staggered_step(
    state: FieldState,
    dt: float,
    alpha: AlphaParams,
    params: MaterialParams,
    bc: BoundaryConditions,
    tol_stg: float = 1e-5,
    max_iter: int = 50,
    solver: str = "direct",
    rtol: float = DEFAULT_RTOL,
) -> StaggeredResult:
    """
    Picard iteration between the momentum and phase-field increment systems on state.mesh.

    The history field is recomputed from the committed H_n and the newest displacement
    before every phase-field solve. The displacement change of the first pass counts
    as zero, so an undamaged step converges after one pass.
    """
    if tol_stg <= 0.0 or max_iter < 1:
        raise InvalidParameter("need tol_stg > 0 and max_iter >= 1", {"tol_stg": tol_stg, "max_iter": max_iter})
    if dt <= 0.0:
        raise InvalidParameter("time step must be positive", {"dt": dt})
    mesh = state.mesh
    u_k, phi_k = state.u, state.phi
    history = state.history
    result = StaggeredResult(state, 0, False)
    for k in range(1, max_iter + 1):
        momentum = assemble_momentum(mesh, phi_k, params, alpha, dt, state, bc, reference_u=u_k)
        u_next = state.u + momentum.solve(solver, rtol)
        history = update_history(state.history, tensile_energy_at_points(mesh, u_next, params))
        phase = assemble_phasefield(mesh, history, params, alpha, dt, state, bc=bc, phi_iterate=phi_k)
        phi_next = state.phi + phase.solve(solver, rtol)

        du = 0.0 if k == 1 else _relative_change(mesh, u_next, u_k)
        dphi = _relative_change(mesh, phi_next, phi_k)
        result.du_norms.append(du)
        result.dphi_norms.append(dphi)
        logger.debug("stagger %d: |du| = %.3e, |dphi| = %.3e", k, du, dphi)
        u_k, phi_k = u_next, phi_next
        result.iterations = k
        if max(du, dphi) < tol_stg:
            result.converged = True
            break
    else:
        logger.warning("Staggered loop did not converge in %d iterations (dt = %.3e)", max_iter, dt)

    result.state = kinematic_update(state, u_k - state.u, phi_k - state.phi, alpha, dt, history)
    return result


def initial_state(
    mesh,
    params: MaterialParams,
    bc: BoundaryConditions,
    phi0=None,
    t0: float = 0.0,
    solver: str = "direct",
) -> FieldState:
    """
    State at rest at t0 with the acceleration that balances the applied loads.
    Vertices held by the phase-field boundary condition start at its value.
    """
    phi = np.ones(mesh.n_vertices) if phi0 is None else np.array(phi0, dtype=float)
    phi[bc.phase_vertices(mesh)] = bc.phase_value
    u = np.zeros(2 * mesh.n_vertices)
    uddot = initial_acceleration(mesh, u, phi, params, bc, solver)
    return FieldState(mesh, t0, u=u, uddot=uddot, phi=phi)


def integrate_linear(
    mass,
    stiffness,
    u0,
    v0,
    dt: float,
    n_steps: int,
    alpha: AlphaParams,
    force=None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Generalized-alpha integration of the dense linear system M u'' + K u = f, using the
    same increment form as the momentum solve. Returns (t, u, v, a) with a leading time
    axis of length n_steps + 1.
    """
    mass = np.atleast_2d(np.asarray(mass, dtype=float))
    stiffness = np.atleast_2d(np.asarray(stiffness, dtype=float))
    if dt <= 0.0 or n_steps < 0:
        raise InvalidParameter("need dt > 0 and n_steps >= 0", {"dt": dt, "n_steps": n_steps})
    if np.any(np.linalg.eigvalsh(mass) <= 0.0):
        raise InvalidParameter("mass matrix must be positive definite")
    n = mass.shape[0]
    force = np.zeros(n) if force is None else np.broadcast_to(np.asarray(force, dtype=float), (n,))
    am, af, beta = alpha.am_c, alpha.af_c, alpha.beta_c
    u = np.empty((n_steps + 1, n))
    v = np.empty((n_steps + 1, n))
    a = np.empty((n_steps + 1, n))
    u[0] = np.broadcast_to(u0, (n,))
    v[0] = np.broadcast_to(v0, (n,))
    a[0] = np.linalg.solve(mass, force - stiffness @ u[0])
    lhs = mass + beta * dt**2 * af / am * stiffness
    for k in range(n_steps):
        inertia = mass @ ((am / (2.0 * beta) - 1.0) * a[k] + am / (beta * dt) * v[k])
        rhs = beta * dt**2 / am * (force - stiffness @ u[k] + inertia)
        u[k + 1], v[k + 1], a[k + 1] = _second_order_update(u[k], v[k], a[k], np.linalg.solve(lhs, rhs), alpha, dt)
    return dt * np.arange(n_steps + 1), u, v, a


def integrate_oscillator(
    m: float,
    k: float,
    u0: float,
    v0: float,
    dt: float,
    n_steps: int,
    alpha: AlphaParams,
    force: float = 0.0,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Scalar m u'' + k u = force. Returns (t, u, v, a), each of length n_steps + 1.
    """
    if m <= 0.0:
        raise InvalidParameter("mass must be positive", {"m": m})
    t, u, v, a = integrate_linear([[m]], [[k]], u0, v0, dt, n_steps, alpha, force)
    return t, u[:, 0], v[:, 0], a[:, 0]
