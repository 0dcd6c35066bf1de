"""
Self-checks with known answers: the time integrator's order and high-frequency
damping, and the steady one-dimensional phase-field profile.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
import scipy.linalg

from .errors import InvalidParameter
from .fem import BoundaryConditions, assemble_phasefield
from .mesh import TriMesh, notched_rectangle
from .model import MaterialParams, dissipation
from .scenario import DENSITY, POISSON, YOUNGS
from .state import FieldState
from .tintegrate import AlphaParams, alpha_params, integrate_linear, integrate_oscillator

logger = logging.getLogger(__name__)


@dataclass
class ConvergenceRow:
    rho_inf: float
    steps: int
    dt: float
    error: float
    order: float


def convergence_study(rho_values: Sequence[float], steps: Sequence[int]) -> List[ConvergenceRow]:
    """
    Integrates u'' = -u, u(0) = 1, u'(0) = 0 over one period with each number of steps and
    reports the largest error in u over the period and the observed order against the previous
    row. At t = 2 pi itself the phase error enters only quadratically, so the end value alone
    would overstate the order.
    """
    steps = sorted(steps)
    if not steps or steps[0] < 1:
        raise InvalidParameter("step counts must be positive", {"steps": steps})
    rows = []
    period = 2.0 * math.pi
    for rho in rho_values:
        alpha = alpha_params(rho)
        previous = None
        for n in steps:
            dt = period / n
            t, u, _, _ = integrate_oscillator(1.0, 1.0, 1.0, 0.0, dt, n, alpha)
            error = float(np.max(np.abs(u - np.cos(t))))
            order = float("nan")
            if previous is not None and error > 0.0 and previous.error > 0.0:
                order = math.log(previous.error / error) / math.log(previous.dt / dt)
            row = ConvergenceRow(rho, n, dt, error, order)
            rows.append(row)
            previous = row
    return rows


def spectral_radius(omega_dt: float, alpha: AlphaParams) -> float:
    """
    Spectral radius of the one-step map of u'' + omega^2 u = 0 in (u, dt u', dt^2 u'').
    """
    if omega_dt < 0.0:
        raise InvalidParameter("omega dt must be non-negative", {"omega_dt": omega_dt})
    am, af, beta, gamma = alpha.am_c, alpha.af_c, alpha.beta_c, alpha.gamma_c
    k = omega_dt**2
    amplification = np.empty((3, 3))
    for column, (u, v, a) in enumerate(np.eye(3)):
        du = beta / am * (-k * u + (am / (2.0 * beta) - 1.0) * a + am / beta * v) / (1.0 + beta * af / am * k)
        da = (du - v - 0.5 * a) / beta
        amplification[:, column] = (u + du, v + a + gamma * da, a + da)
    return float(np.max(np.abs(np.linalg.eigvals(amplification))))


@dataclass
class DampingReport:
    rho_inf: float
    stiff_ratio: float
    soft_error: float
    omega_dt: float


def two_mass_damping(
    rho_inf: float,
    stiffness_ratio: float = 1e8,
    n_steps: int = 40,
    steps_per_period: int = 40,
) -> DampingReport:
    """
    Two unit masses, one soft spring to ground and a much stiffer one between them. Both
    modes start with unit amplitude. Returns the stiff mode's amplitude after n_steps (which
    tends to rho_inf ** n_steps up to a polynomial factor) and the soft mode's error
    against its exact solution.
    """
    if stiffness_ratio <= 1.0 or n_steps < 1 or steps_per_period < 1:
        raise InvalidParameter("need stiffness_ratio > 1 and positive step counts")
    k_soft, k_stiff = 1.0, stiffness_ratio
    mass = np.eye(2)
    stiffness = np.array([[k_soft + k_stiff, -k_stiff], [-k_stiff, k_stiff]])
    omega2, modes = scipy.linalg.eigh(stiffness, mass)
    omega = np.sqrt(omega2)
    dt = 2.0 * math.pi / omega[0] / steps_per_period
    t, u, v, _ = integrate_linear(mass, stiffness, modes @ np.ones(2), np.zeros(2), dt, n_steps, alpha_params(rho_inf))
    q = u[-1] @ mass @ modes
    qdot = v[-1] @ mass @ modes
    stiff = math.hypot(q[1], qdot[1] / omega[1])
    soft = abs(q[0] - math.cos(omega[0] * t[-1]))
    return DampingReport(rho_inf, stiff, soft, float(omega[1] * dt))


@dataclass
class ProfileReport:
    ell: float
    gc: float
    h: float
    max_error: float
    l2_error: float
    dissipation_ratio: float


def profile_mesh(ell: float, cells_per_ell: int, half_width: float = 10.0) -> TriMesh:
    """
    Strip [-half_width ell, half_width ell] x [0, h] with h = ell / cells_per_ell and a
    vertex column at x = 0.
    """
    if ell <= 0.0 or cells_per_ell < 1:
        raise InvalidParameter("need ell > 0 and cells_per_ell >= 1", {"ell": ell, "cells": cells_per_ell})
    h = ell / cells_per_ell
    nx = 2 * int(round(half_width * cells_per_ell))
    return notched_rectangle(2.0 * half_width * ell, h, nx, 1, origin=(-half_width * ell, 0.0))


def steady_profile(ell: float = 0.01, gc: float = 0.5, cells_per_ell: int = 10) -> ProfileReport:
    """
    Holds phi = 0 on the line x = 0 of an unloaded strip and takes one phase-field step with
    rho_inf = 0 and no viscosity, which lands on the steady solution phi - ell^2 phi'' = 1.
    Compares with 1 - exp(-|x| / ell) and the dissipated energy per unit crack length with Gc.
    """
    mesh = profile_mesh(ell, cells_per_ell)
    h = ell / cells_per_ell
    params = MaterialParams.from_engineering(YOUNGS, POISSON, rho0=DENSITY, gc=gc, ell=ell, eta=0.0)
    bc = BoundaryConditions(phase_fixed=lambda vertices: np.abs(vertices[:, 0]) < 1e-6 * h)
    state = FieldState(mesh)
    system = assemble_phasefield(mesh, state.history, params, alpha_params(0.0), 1.0, state, bc=bc)
    phi = state.phi + system.solve()

    x = mesh.vertices[:, 0]
    exact = 1.0 - np.exp(-np.abs(x) / ell)
    max_error = float(np.max(np.abs(phi - exact)))
    l2_error = float(np.linalg.norm(phi - exact) / np.linalg.norm(exact))
    height = float(np.ptp(mesh.vertices[:, 1]))
    ratio = dissipation(mesh, phi, params) / (gc * height)
    logger.info("Profile: max error %.3e, energy ratio %.6f", max_error, ratio)
    return ProfileReport(ell, gc, h, max_error, l2_error, ratio)
