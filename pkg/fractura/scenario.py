"""
Built-in problems: the notched plate under opposite tractions on its top and bottom
faces, at several scales, plus the post-processing that belongs to it (crack tip,
tip speed, symmetry about the notch line).
"""
import logging
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import InvalidParameter
from .fem import BoundaryConditions, at_points, barycentric, evaluate
from .mesh import TriMesh, notched_rectangle, read_mesh
from .model import CUBIC, Degradation, MaterialParams
from .quadrature import WEIGHTS, quadrature_points

logger = logging.getLogger(__name__)

SLIT = "slit"
BAND = "band"

YOUNGS = 208e6
POISSON = 0.3
GC = 0.5
DENSITY = 2400.0
DATA = Path(__file__).parent / "data"
CUBIC_MESH = DATA / "cubic_plate.mesh"


@dataclass(frozen=True)
class Scenario:
    """
    Rectangle [0, width] x [-height/2, height/2] with a horizontal notch on the mid line,
    pulled apart by a step traction of `traction` N/m on the top and bottom faces.
    """

    name: str
    material: MaterialParams
    width: float = 2.0
    height: float = 1.0
    notch_length: float = 0.5
    notch_side: str = "left"
    notch_mode: str = SLIT
    traction: float = 1e4
    nx: int = 64
    ny: int = 32
    mesh_file: Optional[str] = None
    t_final: float = 25e-3
    dt0: float = 5e-5
    tol_max: float = 5e-3
    h_min: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.notch_length < self.width:
            raise InvalidParameter("notch length must be below the plate width", {"notch": self.notch_length})
        if self.t_final <= 0.0 or self.dt0 <= 0.0:
            raise InvalidParameter("t_final and dt0 must be positive", {"t_final": self.t_final, "dt0": self.dt0})
        if self.notch_mode not in (SLIT, BAND):
            raise InvalidParameter(f"unknown notch mode '{self.notch_mode}'")
        if self.notch_side not in ("left", "right"):
            raise InvalidParameter(f"unknown notch side '{self.notch_side}'")

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)

    @property
    def refinement_floor(self) -> float:
        return self.material.ell / 5.0 if self.h_min is None else self.h_min

    @property
    def notch_tip(self) -> Tuple[float, float]:
        x = self.notch_length if self.notch_side == "left" else self.width - self.notch_length
        return x, 0.0

    @property
    def direction(self) -> int:
        return 1 if self.notch_side == "left" else -1

    def build_mesh(self) -> TriMesh:
        if self.mesh_file is not None:
            path = Path(self.mesh_file)
            if not path.exists():
                raise FileNotFoundError(f"mesh file not found: {path}")
            return read_mesh(path)
        slit = self.notch_length if self.notch_mode == SLIT else 0.0
        return notched_rectangle(self.width, self.height, self.nx, self.ny, slit, self.notch_side)

    def boundary_conditions(self) -> BoundaryConditions:
        return BoundaryConditions(traction={"top": (0.0, self.traction), "bottom": (0.0, -self.traction)})

    def initial_phi(self, mesh: TriMesh) -> np.ndarray:
        """
        One everywhere, except a phi = 0 band of half-width ell along the notch in band mode.
        """
        phi = np.ones(mesh.n_vertices)
        if self.notch_mode == BAND and self.notch_length > 0.0:
            x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
            tip_x, _ = self.notch_tip
            along = x <= tip_x if self.direction > 0 else x >= tip_x
            phi[along & (np.abs(y) <= self.material.ell)] = 0.0
        return phi

    def crack_tip(self, mesh: TriMesh, phi) -> Tuple[float, bool]:
        return crack_tip(mesh, phi, self.notch_tip, self.direction, seed_radius=2.0 * self.material.ell)


def _plate_material(ell: float, degradation: Degradation = Degradation()) -> MaterialParams:
    return MaterialParams.from_engineering(YOUNGS, POISSON, rho0=DENSITY, gc=GC, ell=ell, degradation=degradation)


def branching_preset(scale: str = "desk") -> Scenario:
    """
    Notched-plate branching benchmark. "desk" runs on a 4,096-element start mesh with
    ell = 10 mm; "paper" uses ell = 5 mm on a 262,144-element uniform mesh.
    """
    if scale == "desk":
        return Scenario("desk", _plate_material(0.01), nx=64, ny=32, tol_max=5e-3)
    if scale == "paper":
        return Scenario("paper", _plate_material(0.005), nx=512, ny=256, tol_max=1e-3)
    raise InvalidParameter(f"unknown scale '{scale}'", {"choices": "desk, paper"})


def cubic_preset(mesh_file: Optional[str] = None, shape: float = 1e-4) -> Scenario:
    """
    Branching geometry under 8 kN/m with the cubic degradation, started from the
    unstructured 2,464-element mesh shipped with the package unless `mesh_file` is given.
    """
    material = _plate_material(0.01, Degradation(CUBIC, shape))
    mesh_file = str(CUBIC_MESH) if mesh_file is None else mesh_file
    return Scenario("cubic", material, traction=8e3, mesh_file=mesh_file, tol_max=5e-3)


def elastic_preset() -> Scenario:
    """
    Coarse plate with a load far too small to nucleate damage.
    """
    return Scenario("elastic", _plate_material(0.05), traction=1.0, nx=16, ny=8, t_final=2e-2, tol_max=5e-3)


PRESETS: Dict[str, Callable[[], Scenario]] = {
    "desk": lambda: branching_preset("desk"),
    "paper": lambda: branching_preset("paper"),
    "cubic": cubic_preset,
    "elastic": elastic_preset,
}


def preset(name: str) -> Scenario:
    try:
        return PRESETS[name]()
    except KeyError:
        raise InvalidParameter(f"unknown scenario '{name}'", {"choices": ", ".join(PRESETS)})


def crack_tip(
    mesh: TriMesh,
    phi,
    notch_tip: Tuple[float, float],
    direction: int = 1,
    threshold: float = 0.5,
    seed_radius: float = 0.0,
) -> Tuple[float, bool]:
    """
    Furthest point (along `direction`) of the damaged region phi <= threshold that is
    connected through mesh edges to the notch. Seeds are damaged vertices on the notch
    side of the tip or within `seed_radius` of it.
    """
    phi = np.asarray(phi)
    damaged = phi <= threshold
    if not np.any(damaged):
        return float("nan"), False
    edges = mesh.edges
    keep = damaged[edges[:, 0]] & damaged[edges[:, 1]]
    e = edges[keep]
    n = mesh.n_vertices
    graph = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)

    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    tip_x, tip_y = notch_tip
    scale = max(mesh.min_element_size(), 1e-12)
    on_notch = (direction * (tip_x - x) >= -1e-9) & (np.abs(y - tip_y) <= scale)
    near_tip = np.hypot(x - tip_x, y - tip_y) <= max(seed_radius, scale)
    seeds = np.nonzero(damaged & (on_notch | near_tip))[0]
    if seeds.size == 0:
        return float("nan"), False
    region = np.isin(labels, np.unique(labels[seeds])) & damaged
    reach = direction * x[region]
    return float(direction * reach.max()), True


class CrackTipTracker:
    """
    Follows the crack tip over accepted steps; the speed is a finite difference over
    the last `window` known tip positions.
    """

    def __init__(self, window: int = 5) -> None:
        if window < 1:
            raise InvalidParameter("window must be at least 1", {"window": window})
        self.window = window
        self.__points = deque(maxlen=window + 1)

    def update(self, t: float, x: float, known: bool) -> float:
        if not known:
            return float("nan")
        self.__points.append((t, x))
        if len(self.__points) < 2:
            return float("nan")
        (t0, x0), (t1, x1) = self.__points[0], self.__points[-1]
        return abs(x1 - x0) / (t1 - t0) if t1 > t0 else float("nan")


def locate(mesh: TriMesh, points: np.ndarray, candidates: int = 12) -> Tuple[np.ndarray, np.ndarray]:
    """
    Containing triangle and barycentric coordinates of each point. Points outside every
    candidate take the candidate they are least outside of.
    """
    points = np.atleast_2d(points)
    tree = cKDTree(mesh.centroids())
    k = min(candidates, mesh.n_triangles)
    _, idx = tree.query(points, k=k)
    idx = np.asarray(idx).reshape(len(points), k)
    best = np.full(len(points), -1)
    best_score = np.full(len(points), -np.inf)
    best_bary = np.zeros((len(points), 3))
    for j in range(k):
        bary = barycentric(mesh, idx[:, j], points)
        score = bary.min(axis=1)
        better = score > best_score + 1e-14
        best[better] = idx[better, j]
        best_score[better] = score[better]
        best_bary[better] = bary[better]
    return best, best_bary


def symmetry_metric(mesh: TriMesh, phi, axis_y: float = 0.0) -> float:
    """
    A = int |phi(x, y) - phi(x, 2 axis_y - y)| dA / int (1 - phi) dA, in [0, 2].
    Zero for an undamaged field.
    """
    phi = np.asarray(phi, dtype=float)
    points = quadrature_points(mesh.vertices, mesh.triangles)  # (M, 6, 2)
    flat = points.reshape(-1, 2)
    here = at_points(mesh, phi).ravel()
    mirrored = flat * np.array([1.0, -1.0]) + np.array([0.0, 2.0 * axis_y])
    owner, bary = locate(mesh, mirrored)
    there = evaluate(mesh, phi, owner, bary)
    weights = (WEIGHTS[None, :] * mesh.areas[:, None]).ravel()
    damage = float(np.sum(weights * (1.0 - here)))
    if damage <= 0.0:
        return 0.0
    return float(np.sum(weights * np.abs(here - there)) / damage)
