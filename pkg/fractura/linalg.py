"""
Sparse symmetric storage and the linear solves used by the time stepper and the estimator.
"""
import logging
from functools import cached_property
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import EstimatorFailure, InvalidParameter, SolveFailure

logger = logging.getLogger(__name__)

DEFAULT_RTOL = 1e-10
SOLVERS = ("direct", "cg")
SADDLE_SOLVERS = ("kkt", "schur")


class SparseSym:
    """
    Symmetric sparse matrix kept as its lower triangle (diagonal included) in CSR form.
    """

    def __init__(self, lower: sp.spmatrix) -> None:
        lower = sp.tril(sp.csr_matrix(lower, dtype=float)).tocsr()
        lower.sum_duplicates()
        lower.eliminate_zeros()
        if lower.shape[0] != lower.shape[1]:
            raise InvalidParameter("symmetric matrix must be square", {"shape": lower.shape})
        self.lower = lower

    @classmethod
    def from_matrix(cls, matrix, check: bool = True, rtol: float = 1e-12) -> "SparseSym":
        matrix = sp.csr_matrix(matrix, dtype=float)
        if check:
            asym = abs(matrix - matrix.T).max() if matrix.nnz else 0.0
            scale = abs(matrix).max() if matrix.nnz else 0.0
            if asym > rtol * max(scale, 1e-300):
                raise InvalidParameter("matrix is not symmetric", {"asymmetry": asym, "scale": scale})
        return cls(matrix)

    @classmethod
    def from_coo(cls, rows, cols, values, n: int) -> "SparseSym":
        matrix = sp.coo_matrix((values, (rows, cols)), shape=(n, n)).tocsr()
        return cls.from_matrix(matrix)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.lower.shape

    @property
    def dimension(self) -> int:
        return self.lower.shape[0]

    @cached_property
    def full(self) -> sp.csr_matrix:
        strict = sp.tril(self.lower, k=-1)
        return (self.lower + strict.T).tocsr()

    def diagonal(self) -> np.ndarray:
        return self.lower.diagonal()

    def __matmul__(self, x):
        return self.full @ x

    def toarray(self) -> np.ndarray:
        return self.full.toarray()


def _as_csr(a) -> sp.csr_matrix:
    if isinstance(a, SparseSym):
        return a.full
    return sp.csr_matrix(a, dtype=float)


def solve_spd(a, b, rtol: float = DEFAULT_RTOL, method: str = "direct", maxiter: Optional[int] = None) -> np.ndarray:
    """
    Solve A x = b for symmetric positive definite A.

    method="direct" factorizes with SuperLU, method="cg" runs Jacobi-preconditioned
    conjugate gradients. Either way the result satisfies |Ax - b| <= rtol |b| or
    SolveFailure is raised with the achieved relative residual.
    """
    if method not in SOLVERS:
        raise InvalidParameter(f"unknown solver '{method}'", {"choices": ", ".join(SOLVERS)})
    matrix = _as_csr(a)
    b = np.asarray(b, dtype=float)
    norm_b = np.linalg.norm(b)
    if norm_b == 0.0:
        return np.zeros_like(b)
    if method == "direct":
        try:
            x = spla.splu(matrix.tocsc()).solve(b)
        except RuntimeError as err:
            raise SolveFailure(f"factorization failed: {err}", context={"n": matrix.shape[0]})
    else:
        diag = matrix.diagonal()
        if np.any(diag <= 0.0):
            raise SolveFailure("matrix has a non-positive diagonal", context={"n": matrix.shape[0]})
        jacobi = sp.diags(1.0 / diag)
        x, info = spla.cg(matrix, b, rtol=rtol, atol=0.0, maxiter=maxiter or 10 * matrix.shape[0], M=jacobi)
        if info != 0:
            residual = np.linalg.norm(matrix @ x - b) / norm_b
            raise SolveFailure("conjugate gradients did not converge", residual, {"iterations": info})
    if not np.all(np.isfinite(x)):
        raise SolveFailure("solution is not finite", context={"n": matrix.shape[0]})
    residual = np.linalg.norm(matrix @ x - b) / norm_b
    # CG tracks a recursive residual; LU is only checked for a nearly singular factor
    limit = 10.0 * rtol if method == "cg" else max(rtol, 1e-6)
    if residual > limit:
        raise SolveFailure("residual above tolerance", residual)
    logger.debug("solve_spd(%s): n=%d residual=%.3e", method, matrix.shape[0], residual)
    return x


def solve_saddle(gram, b, g, method: str = "kkt", rtol: float = DEFAULT_RTOL) -> Tuple[np.ndarray, np.ndarray]:
    """
    Solve [[G, B], [B^T, 0]] [eps; phi] = [g; 0] for SPD G and full-column-rank B.

    method="kkt" factorizes the whole block system, method="schur" eliminates eps with
    a factorization of G and runs CG on B^T G^-1 B.
    """
    if method not in SADDLE_SOLVERS:
        raise InvalidParameter(f"unknown saddle solver '{method}'", {"choices": ", ".join(SADDLE_SOLVERS)})
    gram = _as_csr(gram)
    b = sp.csr_matrix(b, dtype=float)
    g = np.asarray(g, dtype=float)
    n, m = b.shape
    if gram.shape != (n, n) or g.shape != (n,):
        raise InvalidParameter("saddle blocks have inconsistent shapes", {"G": gram.shape, "B": b.shape})
    if m > n:
        raise EstimatorFailure("constraint block has more columns than rows", {"rows": n, "cols": m})
    if not np.any(g):
        return np.zeros(n), np.zeros(m)

    if method == "kkt":
        kkt = sp.bmat([[gram, b], [b.T, None]], format="csc")
        try:
            sol = spla.splu(kkt).solve(np.concatenate([g, np.zeros(m)]))
        except RuntimeError as err:
            raise EstimatorFailure(f"saddle system is singular: {err}", {"n": n, "m": m})
        eps, phi = sol[:n], sol[n:]
    else:
        try:
            g_factor = spla.splu(gram.tocsc())
        except RuntimeError as err:
            raise EstimatorFailure(f"Gram matrix is singular: {err}", {"n": n})
        schur = spla.LinearOperator((m, m), matvec=lambda y: b.T @ g_factor.solve(b @ y), dtype=float)
        rhs = b.T @ g_factor.solve(g)
        phi, info = spla.cg(schur, rhs, rtol=rtol, atol=0.0, maxiter=10 * max(m, 1))
        if info != 0:
            raise EstimatorFailure("Schur complement iteration did not converge", {"iterations": info})
        eps = g_factor.solve(g - b @ phi)

    if not (np.all(np.isfinite(eps)) and np.all(np.isfinite(phi))):
        raise EstimatorFailure("saddle solution is not finite", {"n": n, "m": m})
    scale = np.linalg.norm(g)
    primal = np.linalg.norm(gram @ eps + b @ phi - g) / scale
    if primal > 1e-6:
        raise EstimatorFailure("saddle system is rank deficient", {"residual": primal})
    return eps, phi
