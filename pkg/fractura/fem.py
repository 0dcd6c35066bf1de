"""
P1 finite elements with optional cubic-bubble enrichment and the assembly of every
operator the time stepper and the estimator need.

Displacement dofs are interleaved (2 v, 2 v + 1). Phase-field dofs are vertex
indices, followed in the enriched space by one bubble dof per triangle.
Element kernels are vectorized over triangles; with FRACTURA_THREADS > 1 they are
evaluated in element chunks on a thread pool and concatenated in chunk order, so the
assembled matrices do not depend on the thread count.
"""
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .arguments import ENV_THREADS
from .errors import InvalidParameter
from .linalg import DEFAULT_RTOL, SparseSym, solve_spd
from .model import TENSION_ONLY, MaterialParams, tensile_energy, tensile_secant
from .quadrature import (
    N_POINTS,
    WEIGHTS,
    bubble,
    enriched_gradients,
    enriched_values,
    p1_values,
    triangle_geometry,
)

logger = logging.getLogger(__name__)

VECTOR = "vector"
SCALAR = "scalar"
ENRICHED = "enriched"
CHUNK = 4096


def worker_count() -> int:
    raw = os.environ.get(ENV_THREADS, "1").strip() or "1"
    try:
        workers = int(raw)
    except ValueError:
        raise InvalidParameter(f"{ENV_THREADS} must be a positive integer", {"value": raw})
    if workers < 1:
        raise InvalidParameter(f"{ENV_THREADS} must be a positive integer", {"value": raw})
    return workers


def _chunked(n: int, kernel: Callable[[slice], np.ndarray]) -> np.ndarray:
    workers = worker_count()
    if workers == 1 or n <= CHUNK:
        return kernel(slice(0, n))
    slices = [slice(start, min(start + CHUNK, n)) for start in range(0, n, CHUNK)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(kernel, slices))
    return np.concatenate(parts)


@dataclass(frozen=True)
class DofMap:
    """
    Degree-of-freedom layout of one field on one mesh.
    """

    kind: str
    n_vertices: int
    n_elements: int
    constrained: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        if self.kind not in (VECTOR, SCALAR, ENRICHED):
            raise InvalidParameter(f"unknown field kind '{self.kind}'")
        constrained = np.unique(np.asarray(self.constrained, dtype=np.int64))
        if constrained.size and (constrained[0] < 0 or constrained[-1] >= self.n_dofs):
            raise InvalidParameter("constrained dof out of range")
        object.__setattr__(self, "constrained", constrained)

    @classmethod
    def for_mesh(cls, mesh, kind: str, constrained=()) -> "DofMap":
        return cls(kind, mesh.n_vertices, mesh.n_triangles, np.asarray(constrained, dtype=np.int64))

    @property
    def n_dofs(self) -> int:
        if self.kind == VECTOR:
            return 2 * self.n_vertices
        if self.kind == ENRICHED:
            return self.n_vertices + self.n_elements
        return self.n_vertices

    @property
    def free(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.constrained] = False
        return np.nonzero(mask)[0]

    def node_dofs(self, vertex: int) -> Tuple[int, ...]:
        if self.kind == VECTOR:
            return (2 * vertex, 2 * vertex + 1)
        return (vertex,)

    def bubble_dof(self, element: int) -> int:
        if self.kind != ENRICHED:
            raise InvalidParameter("only the enriched space has bubble dofs")
        return self.n_vertices + element

    def element_dofs(self, triangles: np.ndarray) -> np.ndarray:
        if self.kind == VECTOR:
            return np.stack([2 * triangles, 2 * triangles + 1], axis=2).reshape(len(triangles), 6)
        if self.kind == ENRICHED:
            return np.column_stack([triangles, self.n_vertices + np.arange(len(triangles))])
        return np.asarray(triangles)


@dataclass(frozen=True)
class BoundaryConditions:
    """
    traction : boundary tag -> traction vector (Pa, i.e. N/m per unit thickness per metre of edge)
    clamped : boundary tag -> clamped displacement components (0 = x, 1 = y)
    phase_fixed : vertices (N, 2) -> bool mask of vertices where phi is held at `phase_value`
    """

    traction: Mapping[str, Tuple[float, float]] = field(default_factory=dict)
    clamped: Mapping[str, Tuple[int, ...]] = field(default_factory=dict)
    phase_fixed: Optional[Callable[[np.ndarray], np.ndarray]] = None
    phase_value: float = 0.0

    def displacement_dofs(self, mesh) -> np.ndarray:
        dofs = []
        for tag, components in self.clamped.items():
            for v in mesh.boundary_vertices(tag):
                dofs.extend(2 * int(v) + int(c) for c in components)
        return np.unique(np.array(dofs, dtype=np.int64))

    def phase_vertices(self, mesh) -> np.ndarray:
        if self.phase_fixed is None:
            return np.zeros(0, dtype=np.int64)
        return np.nonzero(np.asarray(self.phase_fixed(mesh.vertices), dtype=bool))[0]


@dataclass
class AssembledSystem:
    """
    Linear system on the free dofs of `dofmap`, with the constrained values of the unknown.
    """

    matrix: SparseSym
    rhs: np.ndarray
    dofmap: DofMap
    constrained_values: np.ndarray

    @classmethod
    def eliminate(cls, full: sp.csr_matrix, rhs: np.ndarray, dofmap: DofMap, values=None) -> "AssembledSystem":
        c = dofmap.constrained
        values = np.zeros(len(c)) if values is None else np.asarray(values, dtype=float)
        free = dofmap.free
        rows = full[free]
        reduced = rhs[free] - rows[:, c] @ values if len(c) else rhs[free].copy()
        return cls(SparseSym.from_matrix(rows[:, free], rtol=1e-10), reduced, dofmap, values)

    def solve(self, method: str = "direct", rtol: float = DEFAULT_RTOL) -> np.ndarray:
        x = np.empty(self.dofmap.n_dofs)
        x[self.dofmap.constrained] = self.constrained_values
        x[self.dofmap.free] = solve_spd(self.matrix, self.rhs, rtol=rtol, method=method)
        return x


@dataclass(frozen=True)
class QNorm:
    """
    Time-augmented phase-field norm
    |q|^2 = eta |q|^2 + time_factor ((1 + ell / Gc) |q|^2 + ell^2 |grad q|^2).
    """

    ell: float
    gc: float
    eta: float
    time_factor: float

    def __post_init__(self):
        if self.ell <= 0.0 or self.gc <= 0.0 or self.eta < 0.0 or self.time_factor < 0.0:
            raise InvalidParameter("invalid norm parameters")
        if self.eta == 0.0 and self.time_factor == 0.0:
            raise InvalidParameter("norm degenerates: eta and time factor are both zero")

    @classmethod
    def for_step(cls, params: MaterialParams, alpha, dt: float) -> "QNorm":
        return cls(params.ell, params.gc, params.eta, alpha.af_j * dt * alpha.gamma_j / alpha.am_j)

    @property
    def mass_coefficient(self) -> float:
        return self.eta + self.time_factor * (1.0 + self.ell / self.gc)

    @property
    def stiffness_coefficient(self) -> float:
        return self.time_factor * self.ell**2


def bubble_value(bary) -> float:
    """
    27 l1 l2 l3 at barycentric coordinates (l1, l2, l3).
    """
    bary = np.asarray(bary, dtype=float)
    if np.any(bary < -1e-14) or abs(bary.sum() - 1.0) > 1e-12:
        raise InvalidParameter("barycentric coordinates must be non-negative and sum to one")
    return float(bubble(bary))


def _to_csr(element_matrices: np.ndarray, dofs: np.ndarray, n: int) -> sp.csr_matrix:
    k = dofs.shape[1]
    rows = np.repeat(dofs, k, axis=1).ravel()
    cols = np.tile(dofs, (1, k)).ravel()
    return sp.coo_matrix((element_matrices.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _to_vector(element_vectors: np.ndarray, dofs: np.ndarray, n: int) -> np.ndarray:
    return np.bincount(dofs.ravel(), weights=element_vectors.ravel(), minlength=n)


def strain_operator(grads: np.ndarray) -> np.ndarray:
    """
    Voigt strain-displacement matrices, shape (M, 3, 6).
    """
    b = np.zeros((grads.shape[0], 3, 6))
    b[:, 0, 0::2] = grads[:, :, 0]
    b[:, 1, 1::2] = grads[:, :, 1]
    b[:, 2, 0::2] = grads[:, :, 1]
    b[:, 2, 1::2] = grads[:, :, 0]
    return b


def element_strains(mesh, u) -> np.ndarray:
    """
    Constant Voigt strain of every triangle, shape (M, 3).
    """
    _, grads = triangle_geometry(mesh.vertices, mesh.triangles)
    dofs = DofMap.for_mesh(mesh, VECTOR).element_dofs(mesh.triangles)
    return np.einsum("eij,ej->ei", strain_operator(grads), np.asarray(u)[dofs])


def tensile_energy_at_points(mesh, u, params: MaterialParams) -> np.ndarray:
    """
    psi_plus at the quadrature points, shape (M, 6).
    """
    psi = tensile_energy(element_strains(mesh, u), params.lam_2d, params.mu)
    return np.repeat(psi[:, None], N_POINTS, axis=1)


def at_points(mesh, phi) -> np.ndarray:
    """
    P1 field evaluated at the quadrature points, shape (M, 6).
    """
    return np.asarray(phi)[mesh.triangles] @ p1_values().T


def effective_degradation(phi_points: np.ndarray, params: MaterialParams) -> np.ndarray:
    g = params.degradation(phi_points)[0]
    return (1.0 - params.k_res) * g + params.k_res


def lumped_mass(mesh) -> np.ndarray:
    return np.bincount(mesh.triangles.ravel(), weights=np.repeat(mesh.areas / 3.0, 3), minlength=mesh.n_vertices)


def l2_norm(mesh, values) -> float:
    """
    Lumped-mass discrete L2 norm of a nodal scalar (N,) or interleaved vector (2N,) field.
    """
    values = np.asarray(values, dtype=float).reshape(mesh.n_vertices, -1)
    return float(np.sqrt(np.sum(lumped_mass(mesh)[:, None] * values**2)))


def scalar_element_matrices(mesh, enriched: bool = False, weight: Optional[np.ndarray] = None):
    """
    Element mass (optionally weighted by per-point values of shape (M, 6)) and stiffness
    matrices of the P1 or P1 + bubble space, each of shape (M, k, k).
    """
    areas, grads = triangle_geometry(mesh.vertices, mesh.triangles)
    values = enriched_values() if enriched else p1_values()

    def mass_kernel(s: slice) -> np.ndarray:
        w = np.ones((areas[s].size, N_POINTS)) if weight is None else weight[s]
        return np.einsum("q,eq,qi,qj->eij", WEIGHTS, w, values, values) * areas[s, None, None]

    def stiffness_kernel(s: slice) -> np.ndarray:
        if enriched:
            g = enriched_gradients(grads[s])
            return np.einsum("q,eqid,eqjd->eij", WEIGHTS, g, g) * areas[s, None, None]
        return np.einsum("eid,ejd->eij", grads[s], grads[s]) * areas[s, None, None]

    n = mesh.n_triangles
    return _chunked(n, mass_kernel), _chunked(n, stiffness_kernel)


def scalar_matrices(mesh, enriched: bool = False, weight: Optional[np.ndarray] = None):
    """
    Global (mass, stiffness) CSR matrices of the scalar space.
    """
    dofmap = DofMap.for_mesh(mesh, ENRICHED if enriched else SCALAR)
    dofs = dofmap.element_dofs(mesh.triangles)
    mass, stiffness = scalar_element_matrices(mesh, enriched, weight)
    return _to_csr(mass, dofs, dofmap.n_dofs), _to_csr(stiffness, dofs, dofmap.n_dofs)


def mass_matrix(mesh, rho0: float) -> sp.csr_matrix:
    """
    Consistent rho0-mass matrix of the interleaved displacement space.
    """
    scalar_mass, _ = scalar_matrices(mesh)
    return sp.kron(rho0 * scalar_mass, sp.eye(2), format="csr")


def stiffness_matrix(mesh, phi, params: MaterialParams, reference_u=None) -> sp.csr_matrix:
    """
    Degraded elasticity stiffness. Under the full split every element carries the
    quadrature mean of g_eff(phi) times D; under tension_only the tensile part D+ is taken
    in the principal frame of `reference_u` and only it is degraded.
    """
    areas, grads = triangle_geometry(mesh.vertices, mesh.triangles)
    b = strain_operator(grads)
    factor = effective_degradation(at_points(mesh, phi), params) @ WEIGHTS
    d = params.elasticity_matrix()
    if params.stress_split == TENSION_ONLY:
        ref = np.zeros(2 * mesh.n_vertices) if reference_u is None else reference_u
        d_plus = tensile_secant(element_strains(mesh, ref), params.lam_2d, params.mu)
        d_elem = factor[:, None, None] * d_plus + (d[None] - d_plus)
    else:
        d_elem = factor[:, None, None] * d[None]

    def kernel(s: slice) -> np.ndarray:
        return np.einsum("eki,ekl,elj->eij", b[s], d_elem[s], b[s]) * areas[s, None, None]

    dofs = DofMap.for_mesh(mesh, VECTOR).element_dofs(mesh.triangles)
    return _to_csr(_chunked(mesh.n_triangles, kernel), dofs, 2 * mesh.n_vertices)


def load_vector(mesh, bc: BoundaryConditions, params: MaterialParams) -> np.ndarray:
    """
    Consistent nodal forces of the boundary tractions and the body force rho0 g.
    """
    f = np.zeros(2 * mesh.n_vertices)
    for tag, traction in bc.traction.items():
        edges = mesh.tagged_edges(tag)
        if edges.size == 0:
            logger.warning("No boundary edges tagged '%s'; traction ignored", tag)
            continue
        length = np.linalg.norm(mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]], axis=1)
        for comp in range(2):
            share = 0.5 * length * traction[comp]
            f[comp::2] += np.bincount(edges.ravel(), weights=np.repeat(share, 2), minlength=mesh.n_vertices)
    gx, gy = params.body_force
    if gx or gy:
        nodal = params.rho0 * np.bincount(
            mesh.triangles.ravel(), weights=np.repeat(mesh.areas / 3.0, 3), minlength=mesh.n_vertices
        )
        f[0::2] += gx * nodal
        f[1::2] += gy * nodal
    return f


def initial_acceleration(mesh, u, phi, params: MaterialParams, bc: BoundaryConditions, method: str = "direct"):
    """
    Solve M a0 = f - K(phi) u0 so the first step starts in dynamic equilibrium.
    """
    dofmap = DofMap.for_mesh(mesh, VECTOR, bc.displacement_dofs(mesh))
    rhs = load_vector(mesh, bc, params) - stiffness_matrix(mesh, phi, params, u) @ u
    return AssembledSystem.eliminate(mass_matrix(mesh, params.rho0), rhs, dofmap).solve(method)


def assemble_momentum(
    mesh,
    phi,
    params: MaterialParams,
    alpha,
    dt: float,
    state,
    bc: BoundaryConditions,
    reference_u=None,
) -> AssembledSystem:
    """
    System for the displacement increment u_{n+1} - u_n:
    (M + c K(phi)) du = (beta dt^2 / am) [f - K u_n + M ((am / 2 beta - 1) a_n + am / (beta dt) v_n)]
    with c = beta dt^2 af / am.
    """
    if dt <= 0.0:
        raise InvalidParameter("time step must be positive", {"dt": dt})
    am, af, beta = alpha.am_c, alpha.af_c, alpha.beta_c
    mass = mass_matrix(mesh, params.rho0)
    stiffness = stiffness_matrix(mesh, phi, params, state.u if reference_u is None else reference_u)
    inertia = (am / (2.0 * beta) - 1.0) * state.uddot + am / (beta * dt) * state.udot
    rhs = (beta * dt**2 / am) * (load_vector(mesh, bc, params) - stiffness @ state.u + mass @ inertia)
    matrix = (mass + (beta * dt**2 * af / am) * stiffness).tocsr()
    dofmap = DofMap.for_mesh(mesh, VECTOR, bc.displacement_dofs(mesh))
    return AssembledSystem.eliminate(matrix, rhs, dofmap)


def _extend(mesh, values, enriched: bool) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return np.concatenate([values, np.zeros(mesh.n_triangles)]) if enriched else values


def phasefield_operator(
    mesh,
    history: np.ndarray,
    params: MaterialParams,
    alpha,
    dt: float,
    state,
    enriched: bool = False,
    phi_iterate=None,
) -> Tuple[sp.csr_matrix, np.ndarray]:
    """
    Full (unconstrained) matrix and right-hand side of the phase-field increment system.

    The reaction term is linearized about phi_n + af (phi_iterate - phi_n); for the quadratic
    degradation this is exact and the weight reduces to 2 ell H / Gc + 1.
    """
    if dt <= 0.0:
        raise InvalidParameter("time step must be positive", {"dt": dt})
    am, af, gamma = alpha.am_j, alpha.af_j, alpha.gamma_j
    ell, gc, eta = params.ell, params.gc, params.eta
    phi_n = np.asarray(state.phi, dtype=float)
    phi_k = phi_n if phi_iterate is None else np.asarray(phi_iterate, dtype=float)
    phi_lin = phi_n + af * (phi_k - phi_n)
    lin_points = at_points(mesh, phi_lin)
    _, dg, ddg = params.degradation(lin_points)
    drive = ell * np.asarray(history) / gc
    weight = drive * ddg + 1.0
    reaction = drive * dg + lin_points

    mass, stiffness = scalar_matrices(mesh, enriched)
    weighted_mass, _ = scalar_matrices(mesh, enriched, weight)
    tangent = ell**2 * stiffness + weighted_mass

    areas = mesh.areas
    values = enriched_values() if enriched else p1_values()
    dofmap = DofMap.for_mesh(mesh, ENRICHED if enriched else SCALAR)
    dofs = dofmap.element_dofs(mesh.triangles)
    local = np.einsum("q,eq,qi->ei", WEIGHTS, reaction, values) * areas[:, None]
    reaction_vector = _to_vector(local, dofs, dofmap.n_dofs)

    ones = _extend(mesh, np.ones(mesh.n_vertices), enriched)
    lin = _extend(mesh, phi_lin, enriched)
    shift = _extend(mesh, phi_k - phi_n, enriched)
    rate = _extend(mesh, state.phidot, enriched)
    residual = (
        mass @ ones
        - ell**2 * (stiffness @ lin)
        - reaction_vector
        + af * (tangent @ shift)
        + eta * (am / gamma - 1.0) * (mass @ rate)
    )
    matrix = (eta * mass + (gamma * dt * af / am) * tangent).tocsr()
    return matrix, (gamma * dt / am) * residual


def assemble_phasefield(
    mesh,
    history,
    params: MaterialParams,
    alpha,
    dt: float,
    state,
    enriched: bool = False,
    bc: Optional[BoundaryConditions] = None,
    phi_iterate=None,
) -> AssembledSystem:
    """
    System for the phase-field increment phi_{n+1} - phi_n:
    (eta M + c [ell^2 S + M_w]) dphi = c' [(q, 1) - b(q; phi_n) + eta (am / gamma - 1)(q, phidot_n)]
    with c = gamma dt af / am and c' = gamma dt / am.
    """
    history = np.asarray(history, dtype=float)
    matrix, rhs = phasefield_operator(mesh, history, params, alpha, dt, state, enriched, phi_iterate)
    fixed = (bc or BoundaryConditions()).phase_vertices(mesh)
    dofmap = DofMap.for_mesh(mesh, ENRICHED if enriched else SCALAR, fixed)
    values = (bc.phase_value if bc is not None else 0.0) - np.asarray(state.phi)[fixed]
    return AssembledSystem.eliminate(matrix, rhs, dofmap, values)


def element_gram(mesh, qn: QNorm, enriched: bool = False) -> np.ndarray:
    mass, stiffness = scalar_element_matrices(mesh, enriched)
    return qn.mass_coefficient * mass + qn.stiffness_coefficient * stiffness


def qnorm_gram(mesh, qn: QNorm, enriched: bool = False) -> sp.csr_matrix:
    """
    Gram matrix of the time-augmented phase-field inner product.
    """
    dofmap = DofMap.for_mesh(mesh, ENRICHED if enriched else SCALAR)
    return _to_csr(element_gram(mesh, qn, enriched), dofmap.element_dofs(mesh.triangles), dofmap.n_dofs)


def evaluate(mesh, values, elements: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """
    Interpolate a nodal field at points given by containing element and barycentric coordinates.
    """
    values = np.asarray(values)
    return np.einsum("pi,pi...->p...", bary, values[mesh.triangles[elements]])


def barycentric(mesh, elements: np.ndarray, points: np.ndarray) -> np.ndarray:
    """
    Barycentric coordinates of `points` with respect to triangles `elements`.
    """
    p = mesh.vertices[mesh.triangles[elements]]
    t = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # (P, 2, 2)
    l12 = np.linalg.solve(t, (points - p[:, 0])[..., None])[..., 0]
    return np.column_stack([1.0 - l12.sum(axis=1), l12])
