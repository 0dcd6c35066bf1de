import numpy as np
import pytest
import scipy.sparse as sp

from fractura.errors import EstimatorFailure, InvalidParameter, SolveFailure
from fractura.linalg import SparseSym, solve_saddle, solve_spd


def _laplacian(n):
    return sp.diags([-np.ones(n - 1), 2.0 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


def test_lower_storage_restores_full_matrix():
    a = _laplacian(6)
    sym = SparseSym.from_matrix(a)
    assert sym.lower.nnz == 11
    assert np.allclose(sym.toarray(), a.toarray())
    assert np.allclose(sym.diagonal(), 2.0)
    x = np.arange(6.0)
    assert np.allclose(sym @ x, a @ x)


def test_asymmetric_matrix_is_rejected():
    with pytest.raises(InvalidParameter):
        SparseSym.from_matrix(np.array([[1.0, 2.0], [0.0, 1.0]]))


@pytest.mark.parametrize("method", ["direct", "cg"])
def test_solve_spd(method):
    a = _laplacian(50)
    b = np.linspace(0.0, 1.0, 50)
    x = solve_spd(SparseSym.from_matrix(a), b, method=method)
    assert np.linalg.norm(a @ x - b) <= 1e-8 * np.linalg.norm(b)


def test_solvers_agree():
    a = _laplacian(30) + sp.eye(30)
    b = np.sin(np.arange(30.0))
    assert np.allclose(solve_spd(a, b, method="direct"), solve_spd(a, b, method="cg"), atol=1e-8)


def test_zero_rhs_gives_zero():
    assert np.all(solve_spd(_laplacian(4), np.zeros(4)) == 0.0)


def test_solve_failures():
    with pytest.raises(SolveFailure):
        solve_spd(sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.0]])), np.ones(2))
    with pytest.raises(SolveFailure):
        solve_spd(sp.csr_matrix(np.array([[1.0, 0.0], [0.0, -1.0]])), np.ones(2), method="cg")
    with pytest.raises(InvalidParameter):
        solve_spd(_laplacian(3), np.ones(3), method="magic")


def _saddle_problem():
    rng = np.random.default_rng(3)
    n, m = 8, 3
    q = rng.normal(size=(n, n))
    gram = sp.csr_matrix(q @ q.T + n * np.eye(n))
    b = sp.csr_matrix(rng.normal(size=(n, m)))
    g = rng.normal(size=n)
    return gram, b, g


@pytest.mark.parametrize("method", ["kkt", "schur"])
def test_saddle_solution(method):
    """
    The solution satisfies both block rows: G eps + B phi = g and B^T eps = 0.
    """
    gram, b, g = _saddle_problem()
    eps, phi = solve_saddle(gram, b, g, method=method)
    assert np.allclose(gram @ eps + b @ phi, g, atol=1e-8)
    assert np.allclose(b.T @ eps, 0.0, atol=1e-8)


def test_saddle_paths_agree():
    gram, b, g = _saddle_problem()
    eps_kkt, phi_kkt = solve_saddle(gram, b, g, method="kkt")
    eps_schur, phi_schur = solve_saddle(gram, b, g, method="schur")
    assert np.allclose(eps_kkt, eps_schur, atol=1e-7)
    assert np.allclose(phi_kkt, phi_schur, atol=1e-7)


def test_saddle_edge_cases():
    gram, b, g = _saddle_problem()
    eps, phi = solve_saddle(gram, b, np.zeros(len(g)))
    assert not eps.any() and not phi.any()
    with pytest.raises(EstimatorFailure):
        solve_saddle(sp.eye(2), sp.csr_matrix(np.ones((2, 3))), np.ones(2))
