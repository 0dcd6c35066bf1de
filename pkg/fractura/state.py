"""
    This file contains the FieldState class, which holds the solution of one
    time level on one mesh.
"""
import numpy as np

from .errors import InvalidParameter
from .mesh import TriMesh, project
from .quadrature import N_POINTS


class FieldState:
    """
    Nodal fields (u, u', u'', phi, phi') and the history H at the quadrature
    points, at time t on `mesh`. Displacement vectors are interleaved (2N,),
    phase-field vectors are (N,), H is (M, 6).
    """

    __slots__ = ("mesh", "t", "u", "udot", "uddot", "phi", "phidot", "history")

    def __init__(
        self,
        mesh: TriMesh,
        t: float = 0.0,
        u=None,
        udot=None,
        uddot=None,
        phi=None,
        phidot=None,
        history=None,
    ) -> None:
        n, m = mesh.n_vertices, mesh.n_triangles
        self.mesh = mesh
        self.t = float(t)
        self.u = np.zeros(2 * n) if u is None else np.array(u, dtype=float)
        self.udot = np.zeros(2 * n) if udot is None else np.array(udot, dtype=float)
        self.uddot = np.zeros(2 * n) if uddot is None else np.array(uddot, dtype=float)
        self.phi = np.ones(n) if phi is None else np.array(phi, dtype=float)
        self.phidot = np.zeros(n) if phidot is None else np.array(phidot, dtype=float)
        self.history = np.zeros((m, N_POINTS)) if history is None else np.array(history, dtype=float)
        self.check()

    def check(self) -> None:
        """
        Raise InvalidParameter when a vector does not match the mesh.
        """
        n, m = self.mesh.n_vertices, self.mesh.n_triangles
        expected = {
            "u": (2 * n,),
            "udot": (2 * n,),
            "uddot": (2 * n,),
            "phi": (n,),
            "phidot": (n,),
            "history": (m, N_POINTS),
        }
        wrong = {name: getattr(self, name).shape for name, shape in expected.items() if getattr(self, name).shape != shape}
        if wrong:
            raise InvalidParameter("field sizes do not match the mesh", wrong)

    def copy(self, **changes) -> "FieldState":
        """
        Returns a copy of this state with some fields replaced.
        Arrays are copied, so the original is never modified.
        """
        fields = {name: getattr(self, name) for name in self.__slots__}
        fields.update(changes)
        return FieldState(**fields)

    def project(self, mesh: TriMesh) -> "FieldState":
        """
        Transfers every field onto a refinement descendant of the current mesh.
        """
        if mesh is self.mesh:
            return self.copy()

        def vector(values):
            return project(values.reshape(-1, 2), self.mesh, mesh).ravel()

        return FieldState(
            mesh,
            self.t,
            u=vector(self.u),
            udot=vector(self.udot),
            uddot=vector(self.uddot),
            phi=project(self.phi, self.mesh, mesh),
            phidot=project(self.phidot, self.mesh, mesh),
            history=project(self.history, self.mesh, mesh, kind="quadrature"),
        )

    def displacement(self) -> np.ndarray:
        return self.u.reshape(-1, 2)

    def __str__(self) -> str:
        res = [
            f"State at t = {self.t:.6e} s: ",
            f"\t<mesh>: {self.mesh.n_vertices} vertices, {self.mesh.n_triangles} triangles",
            f"\tmax |u|: {np.abs(self.u).max(initial=0.0):.3e}",
            f"\tphi range: [{self.phi.min(initial=1.0):.4f}, {self.phi.max(initial=1.0):.4f}]",
            f"\tmax H: {self.history.max(initial=0.0):.3e}",
        ]
        return "\n".join(res)

