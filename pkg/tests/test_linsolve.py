import numpy as np
import pytest
import scipy.sparse as sp

from rotafem import umfpack
from rotafem.forms import ProblemParams, assemble, build_layout
from rotafem.linsolve import (ResidualError, SingularMatrixError, SolverError,
                              backward_residual, solve, solve_saddle, solve_sparse,
                              discontinuous_blocks, dof_groups)
from rotafem.mesh import build_unit_square
from rotafem.verify import case_square

BACKENDS = ["superlu"] + (["umfpack"] if umfpack.available() else [])


@pytest.mark.parametrize("backend", BACKENDS)
def test_identity(backend):
    b = np.arange(7.0) - 3
    x, res = solve_sparse(sp.identity(7, format="csr"), b, backend=backend)
    assert np.array_equal(x, b)
    assert res == 0


@pytest.mark.parametrize("backend", BACKENDS)
def test_two_by_two(backend):
    A = sp.csr_matrix([[2.0, 1.0], [1.0, 2.0]])
    x, _ = solve_sparse(A, [3.0, 3.0], backend=backend)
    assert np.allclose(x, [1.0, 1.0], rtol=0, atol=1e-15)


@pytest.mark.parametrize("backend", BACKENDS)
def test_singular_reported(backend):
    A = sp.csr_matrix([[1.0, 2.0, 0], [2.0, 4.0, 0], [0, 0, 1.0]])
    with pytest.raises(SolverError):
        solve_sparse(A, [1.0, 1.0, 1.0], backend=backend)


def test_singular_error_carries_dof():
    err = SingularMatrixError(5, 1e-20)
    assert "5" in str(err)
    assert isinstance(ResidualError(1e-3), SolverError)


def _system(kind, k, params=None):
    case = case_square(kind, params or ProblemParams())
    mesh = build_unit_square(4, "horizontal" if kind == "interface" else None)
    layout = build_layout(mesh, kind, k)
    return assemble(kind, mesh, layout, case.params, case.data)


@pytest.mark.parametrize("kind", ["elasticity", "biot", "interface"])
def test_backends_agree(kind):
    system = _system(kind, 1)
    ref = solve(system, backend="superlu").vector
    for backend in BACKENDS[1:] + ["saddle"]:
        x = solve(system, backend=backend).vector
        assert np.abs(x - ref).max() <= 1e-9 * np.abs(ref).max()


@pytest.mark.parametrize("E,nu,kappa", [(1.0, 0.25, 1.0), (1e5, 0.499, 1e-12)])
def test_backward_residual_bound(E, nu, kappa):
    params = ProblemParams(E=E, nu=nu, kappa=kappa)
    for kind in ("elasticity", "biot", "interface"):
        system = _system(kind, 1, params)
        sol = solve(system)
        assert sol.residual <= 1e-10
        assert backward_residual(system.matrix, sol.vector, system.rhs) <= 1e-10


def test_saddle_with_groups_matches():
    system = _system("biot", 0)
    x1, r1 = solve_saddle(system.matrix, system.rhs, discontinuous_blocks(system.layout))
    x2, r2 = solve_saddle(system.matrix, system.rhs, discontinuous_blocks(system.layout),
                          dof_groups(system.layout))
    assert max(r1, r2) <= 1e-10
    assert np.allclose(x1, x2, rtol=1e-9, atol=1e-14)


def test_deterministic():
    system = _system("interface", 1)
    a = solve(system).vector
    b = solve(system).vector
    assert np.array_equal(a, b)


def test_solution_fields():
    system = _system("biot", 0)
    sol = solve(system)
    assert set(sol.fields) == {"u", "omega", "phi", "p"}
    assert sum(len(v) for v in sol.fields.values()) == len(sol.vector)
    assert sol.kind == "biot"


def test_unknown_backend():
    with pytest.raises(ValueError):
        solve_sparse(sp.identity(2), np.ones(2), backend="mumps")
