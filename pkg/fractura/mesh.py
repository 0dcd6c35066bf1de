"""
Conforming triangle meshes, newest-vertex bisection and field transfer.

A mesh is immutable: `refine` returns a new `TriMesh` that remembers
the mesh it was refined from, which vertices it created and which old triangle
each new triangle came from. `project` walks that genealogy to move nodal and
quadrature-point data onto the refined mesh.

Text format read by `read_mesh` / written by `write_mesh`::

    # comments start with '#'
    vertices N
    x y                 (N lines, metres)
    triangles M
    i j k               (M lines, zero-based vertex indices)
    boundary K
    i j tag             (K lines, tag is a bare word such as top or notch_upper)

Triangles are reoriented counter-clockwise on load.
"""
import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Callable, Dict, FrozenSet, Iterable, Optional, Tuple, Union

import numpy as np

from .errors import InvalidParameter, MeshFormatError, ProjectionTopologyMismatch, RefinementFloorReached
from .quadrature import signed_areas

logger = logging.getLogger(__name__)

Edge = Tuple[int, int]
LOCAL_EDGES = np.array([[0, 1], [1, 2], [2, 0]])


def edge_key(a: int, b: int) -> Edge:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class Marking:
    """
    Set of triangle indices selected for refinement.
    """

    marked: FrozenSet[int] = frozenset()

    @classmethod
    def of(cls, indices: Iterable[int]) -> "Marking":
        return cls(frozenset(int(i) for i in indices))

    def __len__(self) -> int:
        return len(self.marked)

    def as_array(self) -> np.ndarray:
        return np.array(sorted(self.marked), dtype=np.int64)


@dataclass(frozen=True, eq=False)
class TriMesh:
    """
    Conforming 2D triangulation.

    vertices : (N, 2) coordinates in metres
    triangles : (M, 3) counter-clockwise vertex indices
    boundary_edges : sorted vertex pair -> tag
    parent_map : (M,) index of the triangle of the previous mesh this one came from (-1 at the root)
    refinement_edge : (M,) local index k of the refinement edge (t[k], t[k+1])
    vertex_parents : (K, 2) endpoints of the bisected edges that created the last K vertices
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: Dict[Edge, str]
    parent_map: np.ndarray
    refinement_edge: np.ndarray
    vertex_parents: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    generation: int = 0
    ancestor: Optional["TriMesh"] = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("vertices", "triangles", "parent_map", "refinement_edge", "vertex_parents"):
            getattr(self, name).setflags(write=False)

    @classmethod
    def build(
        cls,
        vertices,
        triangles,
        boundary_edges: Optional[Dict[Edge, str]] = None,
        refinement_edge: Optional[np.ndarray] = None,
    ) -> "TriMesh":
        """
        Build a root mesh: triangles are turned counter-clockwise and, unless
        given, the refinement edge of each triangle is its longest edge.
        """
        vertices = np.array(vertices, dtype=float).reshape(-1, 2)
        triangles = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise InvalidParameter("triangle references a missing vertex")
        area = signed_areas(vertices, triangles)
        flip = area < 0
        triangles[flip] = triangles[flip][:, [0, 2, 1]]
        if np.any(np.abs(area) <= 0.0):
            raise InvalidParameter("degenerate triangle", {"count": int(np.sum(area == 0.0))})
        if refinement_edge is None:
            refinement_edge = _longest_local_edge(vertices, triangles)
        boundary = {edge_key(int(a), int(b)): tag for (a, b), tag in (boundary_edges or {}).items()}
        return cls(
            vertices=vertices,
            triangles=triangles,
            boundary_edges=boundary,
            parent_map=np.full(len(triangles), -1, dtype=np.int64),
            refinement_edge=np.asarray(refinement_edge, dtype=np.int64),
        )

    def detached(self) -> "TriMesh":
        """
        The same mesh without its refinement history. Fields can no longer be
        projected onto it from older meshes, and the older meshes can be freed.
        """
        return replace(self, ancestor=None)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.triangles)

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    @cached_property
    def _edge_structure(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        local = np.sort(self.triangles[:, LOCAL_EDGES].reshape(-1, 2), axis=1)
        edges, inverse, counts = np.unique(local, axis=0, return_inverse=True, return_counts=True)
        return edges, np.asarray(inverse).reshape(-1, 3), counts

    @property
    def edges(self) -> np.ndarray:
        """
        Unique edges as sorted vertex pairs, shape (E, 2).
        """
        return self._edge_structure[0]

    @property
    def triangle_edges(self) -> np.ndarray:
        """
        Edge index of local edge k = (t[k], t[k+1]) for every triangle, shape (M, 3).
        """
        return self._edge_structure[1]

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def diameters(self) -> np.ndarray:
        """
        Longest edge of every triangle.
        """
        return self.edge_lengths[self.triangle_edges].max(axis=1)

    def min_element_size(self) -> float:
        return float(self.diameters.min())

    def max_element_size(self) -> float:
        return float(self.diameters.max())

    def is_conforming(self) -> bool:
        """
        Edge-incidence audit: interior edges have two triangles, every edge with a
        single triangle is a tagged boundary edge and all areas are positive.
        """
        edges, _, counts = self._edge_structure
        if np.any(counts > 2) or np.any(self.areas <= 0.0):
            return False
        lonely = edges[counts == 1]
        return all((int(a), int(b)) in self.boundary_edges for a, b in lonely)

    def boundary_vertices(self, tag: str) -> np.ndarray:
        nodes = {v for edge, t in self.boundary_edges.items() if t == tag for v in edge}
        return np.array(sorted(nodes), dtype=np.int64)

    def boundary_tags(self) -> FrozenSet[str]:
        return frozenset(self.boundary_edges.values())

    def tagged_edges(self, tag: str) -> np.ndarray:
        pairs = [edge for edge, t in self.boundary_edges.items() if t == tag]
        return np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)


def _longest_local_edge(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = vertices[triangles]
    lengths = np.stack(
        [np.linalg.norm(p[:, (k + 1) % 3] - p[:, k], axis=1) for k in range(3)], axis=1
    )
    # ties resolve to the lowest local index, which keeps structured meshes compatible
    return np.argmax(lengths - 1e-12 * lengths.max() * np.arange(3), axis=1)


def mark_by_fraction(errors, chi: float) -> Marking:
    """
    Mark every element whose error reaches chi times the largest error.
    An all-zero error vector yields an empty marking.
    """
    errors = np.asarray(errors, dtype=float)
    if not 0.0 <= chi <= 1.0:
        raise InvalidParameter("chi must lie in [0, 1]", {"chi": chi})
    if errors.size == 0 or np.any(errors < 0.0):
        raise InvalidParameter("errors must be a non-empty non-negative vector")
    top = errors.max()
    if top <= 0.0:
        return Marking()
    return Marking.of(np.nonzero(errors >= chi * top)[0])


def refine(mesh: TriMesh, marking: Marking, h_min: Optional[float] = None) -> TriMesh:
    """
    Newest-vertex bisection of the marked triangles with conformity closure.

    Marked triangles whose children would fall below `h_min` are dropped from the
    marking; if nothing is left, RefinementFloorReached is raised.
    """
    marked = marking.as_array()
    if marked.size == 0:
        return mesh
    if marked.min() < 0 or marked.max() >= mesh.n_triangles:
        raise InvalidParameter("marking refers to a missing triangle")
    if h_min is not None:
        keep = mesh.diameters[marked] / np.sqrt(2.0) >= h_min
        if not np.any(keep):
            raise RefinementFloorReached(
                "all marked elements are at the size floor", {"h_min": h_min, "marked": marked.size}
            )
        if not np.all(keep):
            logger.debug("Skipping %d marked elements at the size floor", int(np.sum(~keep)))
        marked = marked[keep]

    tri_edges = mesh.triangle_edges
    ref = mesh.refinement_edge
    rows = np.arange(mesh.n_triangles)
    edge_marked = np.zeros(len(mesh.edges), dtype=bool)
    edge_marked[tri_edges[marked, ref[marked]]] = True
    # closure: a triangle with any marked edge must also bisect its refinement edge
    while True:
        pending = edge_marked[tri_edges].any(axis=1) & ~edge_marked[tri_edges[rows, ref]]
        if not np.any(pending):
            break
        edge_marked[tri_edges[pending, ref[pending]]] = True

    split_edges = mesh.edges[edge_marked]
    n_old = mesh.n_vertices
    midpoints = 0.5 * (mesh.vertices[split_edges[:, 0]] + mesh.vertices[split_edges[:, 1]])
    new_ids = n_old + np.arange(len(split_edges))
    keys = split_edges[:, 0] * n_old + split_edges[:, 1]  # sorted, since edges are unique-sorted

    tri = mesh.triangles.copy()
    refedge = ref.copy()
    origin = rows.copy()
    while True:
        a = tri[np.arange(len(tri)), refedge]
        b = tri[np.arange(len(tri)), (refedge + 1) % 3]
        c = tri[np.arange(len(tri)), (refedge + 2) % 3]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        wanted = lo * n_old + hi
        inside = (lo < n_old) & (hi < n_old)
        pos = np.searchsorted(keys, np.where(inside, wanted, -1))
        pos = np.minimum(pos, len(keys) - 1)
        split = inside & (keys[pos] == wanted)
        if not np.any(split):
            break
        m = new_ids[pos[split]]
        child1 = np.stack([a[split], m, c[split]], axis=1)
        child2 = np.stack([m, b[split], c[split]], axis=1)
        keep = ~split
        tri = np.concatenate([tri[keep], child1, child2])
        refedge = np.concatenate(
            [refedge[keep], np.full(len(m), 2, dtype=np.int64), np.full(len(m), 1, dtype=np.int64)]
        )
        origin = np.concatenate([origin[keep], origin[split], origin[split]])

    boundary: Dict[Edge, str] = {}
    split_lookup = {(int(p), int(q)): int(v) for (p, q), v in zip(split_edges, new_ids)}
    for (p, q), tag in mesh.boundary_edges.items():
        mid = split_lookup.get((p, q))
        if mid is None:
            boundary[(p, q)] = tag
        else:
            boundary[edge_key(p, mid)] = tag
            boundary[edge_key(mid, q)] = tag

    refined = TriMesh(
        vertices=np.concatenate([mesh.vertices, midpoints]),
        triangles=tri,
        boundary_edges=boundary,
        parent_map=origin,
        refinement_edge=refedge,
        vertex_parents=split_edges.astype(np.int64),
        generation=mesh.generation + 1,
        ancestor=mesh,
    )
    logger.debug(
        "Refined %d marked triangles: %d -> %d elements",
        marked.size,
        mesh.n_triangles,
        refined.n_triangles,
    )
    return refined


def refine_uniform(mesh: TriMesh, times: int = 1) -> TriMesh:
    for _ in range(times):
        mesh = refine(mesh, Marking.of(range(mesh.n_triangles)))
    return mesh


def _lineage(old: TriMesh, new: TriMesh):
    chain = []
    current = new
    while current is not None and current is not old:
        chain.append(current)
        current = current.ancestor
    if current is None:
        raise ProjectionTopologyMismatch(
            "target mesh does not descend from the source mesh",
            {"source generation": old.generation, "target generation": new.generation},
        )
    return list(reversed(chain))


def project(values, old: TriMesh, new: TriMesh, kind: str = "nodal") -> np.ndarray:
    """
    Transfer data from `old` to its refinement descendant `new`.

    kind="nodal": P1 interpolation, exact for affine fields. The first axis indexes vertices.
    kind="quadrature": per-element data (first axis indexes triangles); every child takes the
    largest value of its parent, so a history field never decreases under transfer.
    """
    values = np.asarray(values)
    if kind not in ("nodal", "quadrature"):
        raise InvalidParameter(f"unknown projection kind '{kind}'")
    for mesh in _lineage(old, new):
        if kind == "nodal":
            n_prev = mesh.n_vertices - len(mesh.vertex_parents)
            if values.shape[0] != n_prev:
                raise ProjectionTopologyMismatch("nodal field does not match the source mesh")
            vp = mesh.vertex_parents
            values = np.concatenate([values, 0.5 * (values[vp[:, 0]] + values[vp[:, 1]])])
        else:
            parent_values = values[mesh.parent_map]
            if parent_values.ndim > 1:
                peak = parent_values.max(axis=tuple(range(1, parent_values.ndim)), keepdims=True)
                values = np.broadcast_to(peak, parent_values.shape).copy()
            else:
                values = parent_values.copy()
    return values.copy()


def notched_rectangle(
    width: float,
    height: float,
    nx: int,
    ny: int,
    notch_length: float = 0.0,
    notch_side: str = "left",
    origin: Tuple[float, float] = (0.0, None),
) -> TriMesh:
    """
    Structured triangulation of [x0, x0+width] x [y0, y0+height] with nx by ny cells,
    each cut along a diagonal. Diagonals are mirrored about the mid-height line so the
    mesh is symmetric under y -> -y around it. A non-zero `notch_length` opens a slit of
    duplicated vertices along that line, starting from `notch_side`.
    y0 defaults to -height/2.
    """
    if nx < 1 or ny < 1:
        raise InvalidParameter("nx and ny must be positive", {"nx": nx, "ny": ny})
    if not 0.0 <= notch_length < width:
        raise InvalidParameter("notch length must lie in [0, width)", {"notch_length": notch_length})
    x0 = origin[0]
    y0 = -0.5 * height if origin[1] is None else origin[1]
    xs = x0 + width * np.arange(nx + 1) / nx
    ys = y0 + height * np.arange(ny + 1) / ny
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    mid_row = ny // 2
    slit_cols = 0
    if notch_length > 0.0:
        if ny % 2:
            raise InvalidParameter("a notch needs an even number of rows", {"ny": ny})
        slit_cols = notch_length * nx / width
        if abs(slit_cols - round(slit_cols)) > 1e-9:
            raise InvalidParameter("notch tip must fall on a grid column", {"notch_length": notch_length})
        slit_cols = int(round(slit_cols))
    if notch_side not in ("left", "right"):
        raise InvalidParameter("notch side must be left or right", {"notch_side": notch_side})
    slit_range = range(0, slit_cols) if notch_side == "left" else range(nx - slit_cols + 1, nx + 1)

    duplicate: Dict[int, int] = {}
    extra = []
    for i in slit_range:
        duplicate[vid(i, mid_row)] = len(vertices) + len(extra)
        extra.append(vertices[vid(i, mid_row)])
    if extra:
        vertices = np.concatenate([vertices, np.array(extra)])

    triangles = []
    for j in range(ny):
        lower_half = j < mid_row
        for i in range(nx):
            v00, v10, v01, v11 = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
            if lower_half and j + 1 == mid_row:
                # cells under the slit use the duplicated copies of the slit vertices
                v01 = duplicate.get(v01, v01)
                v11 = duplicate.get(v11, v11)
            if lower_half:
                triangles.append((v00, v10, v01))
                triangles.append((v10, v11, v01))
            else:
                triangles.append((v00, v10, v11))
                triangles.append((v00, v11, v01))
    triangles = np.array(triangles, dtype=np.int64)

    y_mid = ys[mid_row]
    tol = 1e-9 * max(width, height)

    def classify(p, q, above):
        mx, my = 0.5 * (p + q)
        if abs(my - y0) < tol and abs(p[1] - q[1]) < tol:
            return "bottom"
        if abs(my - (y0 + height)) < tol and abs(p[1] - q[1]) < tol:
            return "top"
        if abs(mx - x0) < tol and abs(p[0] - q[0]) < tol:
            return "left"
        if abs(mx - (x0 + width)) < tol and abs(p[0] - q[0]) < tol:
            return "right"
        if abs(my - y_mid) < tol:
            return "notch_upper" if above else "notch_lower"
        return "free"

    boundary = _tag_lonely_edges(vertices, triangles, classify)
    return TriMesh.build(vertices, triangles, boundary)


def _tag_lonely_edges(vertices, triangles, classify: Callable) -> Dict[Edge, str]:
    local = np.sort(triangles[:, LOCAL_EDGES].reshape(-1, 2), axis=1)
    owner = np.repeat(np.arange(len(triangles)), 3)
    edges, index, counts = np.unique(local, axis=0, return_index=True, return_counts=True)
    centroids = vertices[triangles].mean(axis=1)
    boundary = {}
    for (p, q), first, count in zip(edges, index, counts):
        if count != 1:
            continue
        above = centroids[owner[first], 1] > 0.5 * (vertices[p, 1] + vertices[q, 1])
        boundary[(int(p), int(q))] = classify(vertices[p], vertices[q], above)
    return boundary


def read_mesh(path: Union[str, Path]) -> TriMesh:
    """
    Read a mesh in the fractura text format (see the module docstring).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mesh file not found: {path}")
    sections = {"vertices": [], "triangles": [], "boundary": []}
    expected = {}
    current = None
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] in sections:
                if len(parts) != 2 or not parts[1].isdigit():
                    raise MeshFormatError(f"bad section header '{line}'", line=lineno)
                current = parts[0]
                expected[current] = int(parts[1])
                continue
            if current is None:
                raise MeshFormatError("data before any section header", line=lineno)
            try:
                if current == "vertices":
                    x, y = parts
                    sections[current].append((float(x), float(y)))
                elif current == "triangles":
                    i, j, k = parts
                    sections[current].append((int(i), int(j), int(k)))
                else:
                    i, j, tag = parts
                    sections[current].append((int(i), int(j), tag))
            except ValueError:
                raise MeshFormatError(f"cannot parse {current} entry '{line}'", line=lineno)
    for name, count in expected.items():
        if len(sections[name]) != count:
            raise MeshFormatError(
                f"section '{name}' announces {count} entries but holds {len(sections[name])}"
            )
    if not sections["vertices"] or not sections["triangles"]:
        raise MeshFormatError("mesh needs vertices and triangles")
    boundary = {edge_key(i, j): tag for i, j, tag in sections["boundary"]}
    mesh = TriMesh.build(sections["vertices"], sections["triangles"], boundary)
    logger.info("Read mesh %s: %d vertices, %d triangles", path, mesh.n_vertices, mesh.n_triangles)
    return mesh


def write_mesh(mesh: TriMesh, path: Union[str, Path]) -> None:
    lines = [f"vertices {mesh.n_vertices}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"triangles {mesh.n_triangles}")
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    lines.append(f"boundary {len(mesh.boundary_edges)}")
    lines += [f"{i} {j} {tag}" for (i, j), tag in sorted(mesh.boundary_edges.items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
