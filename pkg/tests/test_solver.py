import numpy as np
import pytest
import scipy.sparse as sp

from wulff_flow.errors import IndefiniteDetected, NotConverged
from wulff_flow.solver import SolverConfig, solve_block, solve_spd


def test_identity():
    b = np.array([1.0, -2.0, 3.0])
    r = solve_spd(sp.identity(3, format="csr"), b)
    np.testing.assert_array_equal(r.x, b)
    assert r.iterations <= 1


def test_two_by_two():
    r = solve_spd(sp.csr_matrix([[2.0, 1.0], [1.0, 2.0]]), np.array([1.0, 0.0]))
    np.testing.assert_allclose(r.x, [2 / 3, -1 / 3], atol=1e-12)


def test_mass_matrix_constant(sphere2):
    from wulff_flow.assembly import assemble_plain_mass
    M = assemble_plain_mass(sphere2)
    r = solve_spd(M, M @ np.ones(sphere2.n_nodes))
    assert np.abs(r.x - 1).max() <= 1e-10


def test_residual_bound_random_block():
    rng = np.random.default_rng(0)
    Q = rng.standard_normal((10, 10))
    S = sp.csr_matrix(Q @ Q.T + 10 * np.eye(10))
    B = rng.standard_normal((10, 4))
    cfg = SolverConfig(tol=1e-10)
    X, res = solve_block(S, B, cfg)
    for j in range(4):
        assert np.linalg.norm(S @ X[:, j] - B[:, j]) <= 1e-10 * np.linalg.norm(B[:, j])


def test_block_equal_and_zero_columns():
    S = sp.diags([np.arange(1.0, 6.0), 0.1 * np.ones(4), 0.1 * np.ones(4)], [0, 1, -1])
    b = np.arange(5.0)
    X, _ = solve_block(S.tocsr(), np.column_stack([b, b, b, b]))
    for j in range(1, 4):
        assert np.array_equal(X[:, j], X[:, 0])
    Z, _ = solve_block(S.tocsr(), np.zeros((5, 4)))
    assert np.all(Z == 0)


def test_dense_cholesky_agrees():
    rng = np.random.default_rng(1)
    Q = rng.standard_normal((8, 8))
    S = sp.csr_matrix(Q @ Q.T + np.eye(8))
    b = rng.standard_normal(8)
    a = solve_spd(S, b, SolverConfig()).x
    c = solve_spd(S, b, SolverConfig(method="dense_cholesky")).x
    np.testing.assert_allclose(a, c, rtol=1e-8)


def test_indefinite_detected():
    with pytest.raises(IndefiniteDetected):
        solve_spd(sp.csr_matrix(np.diag([1.0, -1.0])), np.array([1.0, 1.0]),
                  SolverConfig(preconditioner="none"))


def test_not_converged_carries_iterate():
    n = 200
    S = sp.diags(np.linspace(1, 1e6, n)).tocsr()
    with pytest.raises(NotConverged) as info:
        solve_spd(S, np.ones(n), SolverConfig(preconditioner="none", max_iter=3))
    assert info.value.x is not None and info.value.residual > 0


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol=1e-2)
    with pytest.raises(ValueError):
        SolverConfig(method="gmres")
    with pytest.raises(ValueError):
        SolverConfig(preconditioner="ilu")


def test_ellipsoid_system_converges():
    from wulff_flow.assembly import assemble_system
    from wulff_flow.exact import SelfSimilarEllipsoid
    from wulff_flow.mesh import generate_levelset_mesh
    sol = SelfSimilarEllipsoid(0.5)
    m = generate_levelset_mesh(sol.levelset(0.0), 4, 2)
    nu, V = sol.normal_and_velocity(m.nodes, 0.0)
    s = assemble_system(m, nu, V, sol.density(), sol.kinetic())
    S = (1.5 / 1e-3) * s.M + s.A
    X, res = solve_block(S, np.column_stack([s.f1, s.f2]))
    assert max(r.iterations for r in res) <= 500
