"""
Space-and-time adaptivity.

Time: the third derivative of the displacement is estimated from the last four
solutions by a backward difference, turned into a local truncation error, weighted
into a scalar E and fed to the square-root step-size law.

Space: the residual of the phase-field increment system is represented in the
bubble-enriched space by residual minimization; the element-local norms of that
representation drive marking and bisection.
"""
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from .config import RunConfig, effective_tolerances
from .errors import (
    FracturaError,
    InvalidParameter,
    NotEnoughHistory,
    RefinementFloorReached,
    RunAborted,
)
from .fem import (
    ENRICHED,
    BoundaryConditions,
    DofMap,
    QNorm,
    element_gram,
    phasefield_operator,
    qnorm_gram,
)
from .linalg import solve_saddle
from .mesh import TriMesh, mark_by_fraction, project, refine
from .model import MaterialParams, dissipation, phase_overshoot
from .scenario import CrackTipTracker, Scenario
from .state import FieldState
from .tintegrate import AlphaParams, alpha_params, initial_state, staggered_step

logger = logging.getLogger(__name__)

BACKWARD = "backward"
DIVIDED = "divided"


@dataclass
class TimeControl:
    """
    Step-size controller state. `snapshots` holds the most recent displacements,
    oldest first, and `steps[i]` is the time step between snapshots i and i + 1.
    With a candidate appended they read u_{n-2}, u_{n-1}, u_n, u_{n+1} and
    dt_{n-1}, dt_n, dt_{n+1}.
    """

    tol_max: float = 1e-3
    tol_min: Optional[float] = None
    rho_abs: float = 1e-4
    rho_rel: float = 1e-4
    rho_tol: float = 0.9
    growth_cap: float = 2.0
    dt_max: float = math.inf
    dt_min: float = 1e-12
    variant: str = BACKWARD
    snapshots: List[np.ndarray] = field(default_factory=list)
    steps: List[float] = field(default_factory=list)

    def __post_init__(self):
        if self.tol_min is None:
            self.tol_min = self.tol_max / 100.0
        if not 0.0 < self.tol_min < self.tol_max:
            raise InvalidParameter("need 0 < tol_min < tol_max", {"tol_min": self.tol_min, "tol_max": self.tol_max})
        if not 0.0 < self.rho_tol <= 1.0:
            raise InvalidParameter("rho_tol must lie in (0, 1]", {"rho_tol": self.rho_tol})
        if self.variant not in (BACKWARD, DIVIDED):
            raise InvalidParameter(f"unknown BDF3 variant '{self.variant}'")
        if any(dt <= 0.0 for dt in self.steps):
            raise InvalidParameter("time steps must be positive")

    @property
    def tol(self) -> float:
        return self.tol_max

    @property
    def dt_np1(self) -> float:
        return self.steps[-1]

    @property
    def dt_n(self) -> float:
        return self.steps[-2]

    @property
    def dt_nm1(self) -> float:
        return self.steps[-3]

    def record(self, u, dt: Optional[float] = None) -> None:
        """
        Remember an accepted displacement and the step that produced it.
        """
        self.snapshots = (self.snapshots + [np.array(u, dtype=float)])[-3:]
        if dt is not None:
            self.steps = (self.steps + [float(dt)])[-2:]

    def with_candidate(self, u_np1, dt_np1: float) -> "TimeControl":
        return replace(
            self,
            snapshots=self.snapshots[-3:] + [np.asarray(u_np1, dtype=float)],
            steps=self.steps[-2:] + [float(dt_np1)],
        )

    def project(self, old: TriMesh, new: TriMesh) -> None:
        self.snapshots = [project(u.reshape(-1, 2), old, new).ravel() for u in self.snapshots]

    def clip(self, dt_new: float, dt_old: float) -> float:
        return min(dt_new, self.growth_cap * dt_old, self.dt_max)

    def _require(self) -> None:
        if len(self.snapshots) < 4 or len(self.steps) < 3:
            raise NotEnoughHistory(
                "four displacement snapshots and three steps are needed",
                {"snapshots": len(self.snapshots), "steps": len(self.steps)},
            )


def _bracket(tc: TimeControl) -> np.ndarray:
    u_nm2, u_nm1, u_n, u_np1 = tc.snapshots[-4:]
    h1, h0, hm = tc.dt_np1, tc.dt_n, tc.dt_nm1
    return (u_np1 - u_n) / h1 - (1.0 + h1 / h0) * (u_n - u_nm1) / h0 + h1 / (h0 * hm) * (u_nm1 - u_nm2)


def bdf3_third_derivative(tc: TimeControl, variant: Optional[str] = None) -> np.ndarray:
    """
    Third time derivative of u at t_{n+1}.

    "backward": [ (u_{n+1} - u_n)/dt_{n+1} - (1 + dt_{n+1}/dt_n)(u_n - u_{n-1})/dt_n
                 + dt_{n+1}/(dt_n dt_{n-1}) (u_{n-1} - u_{n-2}) ] / dt_{n+1}^2,
    exact on cubics for uniform steps.
    "divided": six times the third divided difference, exact on cubics for any steps.
    """
    tc._require()
    variant = variant or tc.variant
    if variant == BACKWARD:
        return _bracket(tc) / tc.dt_np1**2
    if variant != DIVIDED:
        raise InvalidParameter(f"unknown BDF3 variant '{variant}'")
    u = tc.snapshots[-4:]
    t = np.concatenate([[0.0], np.cumsum([tc.dt_nm1, tc.dt_n, tc.dt_np1])])
    first = [(u[i + 1] - u[i]) / (t[i + 1] - t[i]) for i in range(3)]
    second = [(first[i + 1] - first[i]) / (t[i + 2] - t[i]) for i in range(2)]
    return 6.0 * (second[1] - second[0]) / (t[3] - t[0])


def local_truncation_error(tc: TimeControl, variant: Optional[str] = None) -> np.ndarray:
    """
    tau = dt_{n+1}^2 (dt_n + dt_{n-1}) / 6 * u''', which for the backward estimate reduces to
    (dt_n + dt_{n-1}) / 6 times its bracket.
    """
    tc._require()
    variant = variant or tc.variant
    if variant == BACKWARD:
        return (tc.dt_n + tc.dt_nm1) / 6.0 * _bracket(tc)
    return tc.dt_np1**2 * (tc.dt_n + tc.dt_nm1) / 6.0 * bdf3_third_derivative(tc, variant)


def weighted_error(tau, u_np1, rho_abs: float = 1e-4, rho_rel: float = 1e-4) -> float:
    """
    E = sqrt(mean((tau_i / (rho_abs + rho_rel max(|u_i|, |u_i| + |tau_i|)))^2)).
    Components with tau_i = 0 contribute zero even when their weight vanishes.
    """
    tau = np.asarray(tau, dtype=float)
    u_np1 = np.asarray(u_np1, dtype=float)
    if tau.size == 0 or tau.shape != u_np1.shape:
        raise InvalidParameter("tau and u must be non-empty and of equal length")
    if rho_abs < 0.0 or rho_rel < 0.0 or rho_abs + rho_rel == 0.0:
        raise InvalidParameter("rho_abs and rho_rel must be non-negative and not both zero")
    scale = rho_abs + rho_rel * np.maximum(np.abs(u_np1), np.abs(u_np1) + np.abs(tau))
    ratio = np.divide(tau, scale, out=np.zeros_like(tau), where=scale > 0.0)
    return float(np.sqrt(np.mean(ratio**2)))


def next_dt(E: float, dt: float, tol: float, rho_tol: float = 0.9, growth_cap: float = 2.0) -> float:
    """
    rho_tol sqrt(tol / E) dt; a zero error returns growth_cap * dt.
    """
    if dt <= 0.0 or tol <= 0.0 or E < 0.0 or math.isnan(E):
        raise InvalidParameter("need dt > 0, tol > 0 and E >= 0", {"E": E, "dt": dt, "tol": tol})
    if E == 0.0:
        return dt * growth_cap
    return rho_tol * math.sqrt(tol / E) * dt


@dataclass
class SpatialEstimate:
    """
    eps_h : coefficients of the error representation in the enriched space (vertices, then bubbles)
    contributions : per-element squared norms, summing to norm**2
    reference_norm : norm of the new phase field, the scale of the relative mesh tolerance
    """

    eps_h: np.ndarray
    contributions: np.ndarray
    norm: float
    phi_h: np.ndarray
    reference_norm: float


def spatial_estimate(
    state: FieldState,
    candidate: FieldState,
    dt: float,
    alpha: AlphaParams,
    params: MaterialParams,
    bc: Optional[BoundaryConditions] = None,
    method: str = "kkt",
) -> SpatialEstimate:
    """
    Residual-minimization error estimate of the phase-field step from `state` to `candidate`.

    Solves [[G, B], [B^T, 0]] [eps; phi] = [r; 0] with G the time-augmented Gram matrix on
    P1 + bubbles, B the phase-field operator restricted to P1 trial columns and r its
    right-hand side, all on the unconstrained dofs.
    """
    mesh = candidate.mesh
    if state.mesh is not mesh:
        raise InvalidParameter("estimate needs both states on the same mesh")
    n = mesh.n_vertices
    matrix, rhs = phasefield_operator(
        mesh, candidate.history, params, alpha, dt, state, enriched=True, phi_iterate=candidate.phi
    )
    bc = bc or BoundaryConditions()
    fixed = bc.phase_vertices(mesh)
    test = DofMap.for_mesh(mesh, ENRICHED, fixed).free
    trial = test[test < n]
    if fixed.size:
        rhs = rhs - matrix[:, fixed] @ (bc.phase_value - state.phi[fixed])
    qn = QNorm.for_step(params, alpha, dt)
    gram = qnorm_gram(mesh, qn, enriched=True)
    rows = matrix[test]
    eps_free, phi_free = solve_saddle(gram[test][:, test], rows[:, trial], rhs[test], method=method)

    eps = np.zeros(n + mesh.n_triangles)
    eps[test] = eps_free
    phi_h = np.zeros(n)
    phi_h[trial] = phi_free
    dofs = DofMap.for_mesh(mesh, ENRICHED).element_dofs(mesh.triangles)
    local = eps[dofs]
    contributions = np.einsum("ei,eij,ej->e", local, element_gram(mesh, qn, enriched=True), local)
    contributions = np.maximum(contributions, 0.0)
    p1_gram = qnorm_gram(mesh, qn)
    reference = float(np.sqrt(max(candidate.phi @ (p1_gram @ candidate.phi), 0.0)))
    return SpatialEstimate(eps, contributions, float(np.sqrt(contributions.sum())), phi_h, reference)


@dataclass
class RunRecord:
    step: int
    t: float
    dt: float
    E: float
    n_elements: int
    h_min: float
    n_stagger: int
    dissipation: float
    crack_tip_x: float
    crack_tip_speed: float

    def row(self) -> Sequence:
        return (
            self.step,
            self.t,
            self.dt,
            self.E,
            self.n_elements,
            self.h_min,
            self.n_stagger,
            self.dissipation,
            self.crack_tip_x,
            self.crack_tip_speed,
        )


@dataclass
class RunResult:
    records: List[RunRecord]
    state: FieldState
    rejections: int
    refinements: int
    wall_time: float
    status: str = "completed"


Observer = Callable[[RunRecord, FieldState], None]


class AdaptiveDriver:
    """
    Outer time loop with an inner mesh loop around the staggered solve.

    A step is first checked against the time tolerance; an accepted step is then
    checked in space, and if the mesh is refined the same step is redone on the new
    mesh from the projected previous state.
    """

    def __init__(self, scenario: Scenario, config: RunConfig, observers: Sequence[Observer] = ()) -> None:
        self.scenario = scenario
        self.config = config
        self.observers = list(observers)
        self.params = scenario.material
        self.bc = scenario.boundary_conditions()
        self.alpha = alpha_params(config.rho_inf)
        tol_max, tol_min = effective_tolerances(config, scenario)
        self.control = TimeControl(
            tol_max=tol_max,
            tol_min=tol_min,
            rho_abs=config.rho_abs,
            rho_rel=config.rho_rel,
            rho_tol=config.rho_tol,
            growth_cap=config.growth_cap,
            dt_max=config.dt_max_factor * scenario.dt0,
            dt_min=config.dt_min,
            variant=config.bdf3_variant,
        )
        self.h_min = scenario.refinement_floor if config.h_min is None else config.h_min
        self.tracker = CrackTipTracker()
        self.records: List[RunRecord] = []
        self.rejections = 0
        self.refinements = 0

    def _start(self) -> FieldState:
        mesh = self.scenario.build_mesh()
        state = initial_state(mesh, self.params, self.bc, self.scenario.initial_phi(mesh), solver=self.config.solver)
        self.control.record(state.u)
        logger.info("Initial mesh: %d vertices, %d triangles", mesh.n_vertices, mesh.n_triangles)
        return state

    def _stagger(self, state: FieldState, dt: float):
        return staggered_step(
            state,
            dt,
            self.alpha,
            self.params,
            self.bc,
            tol_stg=self.config.tol_stg,
            max_iter=self.config.max_stagger,
            solver=self.config.solver,
            rtol=self.config.solver_rtol,
        )

    def _shrink(self, dt: float, reason: str, factor: Optional[float] = None) -> float:
        self.rejections += 1
        new = dt * 0.5 if factor is None else factor
        logger.info("Rejected dt = %.3e (%s); retrying with %.3e", dt, reason, new)
        if new < self.control.dt_min:
            raise FracturaError("time step fell below the floor", {"dt": new, "dt_min": self.control.dt_min})
        return new

    def _time_error(self, candidate: FieldState, dt: float) -> float:
        try:
            tau = local_truncation_error(self.control.with_candidate(candidate.u, dt))
        except NotEnoughHistory:
            return float("nan")
        return weighted_error(tau, candidate.u, self.control.rho_abs, self.control.rho_rel)

    def _refined_mesh(self, state: FieldState, candidate: FieldState, dt: float) -> Optional[TriMesh]:
        estimate = spatial_estimate(state, candidate, dt, self.alpha, self.params, self.bc, self.config.saddle_solver)
        limit = self.config.tol_mesh * max(estimate.reference_norm, 1e-300)
        logger.debug("Spatial error %.3e (limit %.3e)", estimate.norm, limit)
        if estimate.norm < limit:
            return None
        marking = mark_by_fraction(estimate.contributions, self.config.chi)
        if not len(marking):
            return None
        try:
            mesh = refine(state.mesh, marking, self.h_min)
        except RefinementFloorReached as err:
            logger.warning("%s", err.info)
            return None
        logger.info("Refined %d marked elements: %d -> %d", len(marking), state.mesh.n_triangles, mesh.n_triangles)
        return mesh

    def step(self, state: FieldState, dt: float):
        """
        Advance one accepted step. Returns (new state, dt used, E, stagger count, next dt).
        """
        config, control = self.config, self.control
        accepted = len(self.records)
        adaptive_time = config.time_adaptivity and accepted >= config.startup_steps
        mesh_iterations = 0
        while True:
            result = self._stagger(state, dt)
            if not result.converged:
                dt = self._shrink(dt, "staggered loop did not converge")
                continue
            candidate = result.state
            E = self._time_error(candidate, dt)
            if config.baseline_iteration_count:
                if adaptive_time and result.iterations > config.iteration_threshold:
                    dt = self._shrink(dt, f"{result.iterations} staggered iterations")
                    continue
            elif adaptive_time and E > control.tol_max:
                dt = self._shrink(dt, f"E = {E:.3e}", control.clip(next_dt(E, dt, control.tol, control.rho_tol), dt))
                continue
            if config.mesh_adaptivity and mesh_iterations < config.max_mesh_iterations:
                mesh = self._refined_mesh(state, candidate, dt)
                if mesh is not None:
                    control.project(state.mesh, mesh)
                    state = state.project(mesh)
                    mesh_iterations += 1
                    self.refinements += 1
                    continue
            break

        dt_next = dt
        if adaptive_time and config.baseline_iteration_count:
            if result.iterations <= config.iteration_threshold // 2:
                dt_next = control.clip(1.5 * dt, dt)
        elif adaptive_time and not math.isnan(E) and E < control.tol_min:
            dt_next = control.clip(next_dt(E, dt, control.tol, control.rho_tol, control.growth_cap), dt)
        return candidate, dt, E, result.iterations, dt_next

    def run(self) -> RunResult:
        started = time.perf_counter()
        config = self.config
        t_final = self.scenario.t_final
        state = self._start()
        previous = dissipation(state.mesh, state.phi, self.params)
        dt = self.scenario.dt0
        try:
            while state.t < t_final * (1.0 - 1e-12):
                if config.max_steps is not None and len(self.records) >= config.max_steps:
                    break
                dt_try = min(dt, t_final - state.t)
                state, dt_used, E, iterations, dt = self.step(state, dt_try)
                if state.mesh.ancestor is not None:
                    # later steps only project from the newest mesh
                    state = state.copy(mesh=state.mesh.detached())
                self.control.record(state.u, dt_used)
                self._accept(state, dt_used, E, iterations, previous)
                previous = self.records[-1].dissipation
        except FracturaError as err:
            last = self.records[-1] if self.records else None
            raise RunAborted(err.info or err.title, record=last, state=state, cause=err) from err
        return RunResult(self.records, state, self.rejections, self.refinements, time.perf_counter() - started)

    def _accept(self, state: FieldState, dt: float, E: float, iterations: int, previous: float) -> None:
        mesh = state.mesh
        energy = dissipation(mesh, state.phi, self.params)
        if energy < previous - 1e-10 * abs(previous):
            logger.warning("Dissipation decreased from %.6e to %.6e", previous, energy)
        overshoot = phase_overshoot(state.phi)
        if overshoot > 1e-8:
            logger.warning("Phase field leaves [0, 1] by %.3e", overshoot)
        tip_x, known = self.scenario.crack_tip(mesh, state.phi)
        speed = self.tracker.update(state.t, tip_x, known)
        record = RunRecord(
            step=len(self.records) + 1,
            t=state.t,
            dt=dt,
            E=E,
            n_elements=mesh.n_triangles,
            h_min=mesh.min_element_size(),
            n_stagger=iterations,
            dissipation=energy,
            crack_tip_x=tip_x,
            crack_tip_speed=speed,
        )
        self.records.append(record)
        logger.info(
            "Step %d: t = %.6e, dt = %.3e, E = %.3e, elements = %d", record.step, record.t, dt, E, record.n_elements
        )
        for observer in self.observers:
            observer(record, state)


def adaptive_driver(scenario: Scenario, config: RunConfig, observers: Sequence[Observer] = ()) -> RunResult:
    return AdaptiveDriver(scenario, config, observers).run()
