from fractions import Fraction as F

import numpy as np
import pytest

from wulff_flow.anisotropy import ConstantOne, Isotropic, hexagonal
from wulff_flow.bdf import (FlowState, bdf_coefficients, bootstrap, extrapolate, initial_state,
                            n_steps, run_flow, step)
from wulff_flow.errors import (DegenerateElement, IncompleteHistory, OutOfGuardRegion,
                               UnsupportedOrder)
from wulff_flow.mesh import generate_levelset_mesh, sphere_levelset
from wulff_flow.solver import solve_block


def test_bdf_tables():
    assert bdf_coefficients(1).delta_exact == (F(1), F(-1))
    assert bdf_coefficients(1).gamma_exact == (F(1),)
    assert bdf_coefficients(2).delta_exact == (F(3, 2), F(-2), F(1, 2))
    assert bdf_coefficients(2).gamma_exact == (F(2), F(-1))
    assert bdf_coefficients(3).delta_exact == (F(11, 6), F(-3), F(3, 2), F(-1, 3))
    assert bdf_coefficients(3).gamma_exact == (F(3), F(-3), F(1))


@pytest.mark.parametrize("q", range(1, 6))
def test_generating_function_identities(q):
    s = bdf_coefficients(q)
    assert sum(s.delta_exact) == 0
    assert sum(s.gamma_exact) == 1
    # consistency of order q: sum_j delta_j (-j)^m = m * [m == 1] for m = 0..q
    for m in range(q + 1):
        assert sum(d * F(-j) ** m for j, d in enumerate(s.delta_exact)) == (1 if m == 1 else 0)


def test_unsupported_order():
    for q in (0, 6):
        with pytest.raises(UnsupportedOrder):
            bdf_coefficients(q)


@pytest.fixture(scope="module")
def sphere():
    return generate_levelset_mesh(sphere_levelset(), 2, 2)


def make_state(mesh, xs, us, tau=1e-3):
    st = initial_state(mesh, us[-1][:, :3], us[-1][:, 3], tau)
    st.xs.clear(), st.us.clear()
    for x, u in zip(xs, us):          # newest first
        st.xs.append(x)
        st.us.append(u)
    return st


def test_extrapolation(sphere):
    a = sphere.nodes
    u = np.zeros((sphere.n_nodes, 4))
    st = make_state(sphere, [2 * a, a], [u, u])
    x, _ = extrapolate(st, bdf_coefficients(2))
    np.testing.assert_allclose(x, 3 * a)
    x1, _ = extrapolate(st, bdf_coefficients(1))
    assert np.array_equal(x1, 2 * a)
    st3 = make_state(sphere, [a, a, a], [u, u, u])
    np.testing.assert_allclose(extrapolate(st3, bdf_coefficients(3))[0], a, atol=1e-15)
    with pytest.raises(IncompleteHistory):
        extrapolate(st, bdf_coefficients(3))


def test_one_step_sphere_radius():
    m = generate_levelset_mesh(sphere_levelset(), 3, 2)
    tau = 1e-3
    st = initial_state(m, m.nodes, np.full(m.n_nodes, -2.0), tau)
    step(st, bdf_coefficients(1), Isotropic(), ConstantOne())
    r = np.linalg.norm(st.x, axis=1).mean()
    assert abs(r - np.sqrt(1 - 4 * tau)) <= 5e-4
    assert st.n == 1 and len(st.xs) == 2


def test_constant_state_is_equilibrium(sphere):
    nu = np.tile([0.0, 0.0, 1.0], (sphere.n_nodes, 1))
    st = initial_state(sphere, nu, np.zeros(sphere.n_nodes), 1e-3)
    step(st, bdf_coefficients(1), Isotropic(), ConstantOne())
    step(st, bdf_coefficients(2), Isotropic(), ConstantOne())
    np.testing.assert_allclose(st.x, sphere.nodes, atol=1e-13)
    np.testing.assert_allclose(st.normal, nu, atol=1e-9)
    np.testing.assert_allclose(st.V, 0.0, atol=1e-9)


def test_increment_scales_with_tau(sphere):
    ratios = []
    for tau in (1e-3, 1e-4):
        inc = []
        for t in (tau, 2 * tau):
            st = initial_state(sphere, sphere.nodes, np.full(sphere.n_nodes, -2.0), t)
            step(st, bdf_coefficients(1), Isotropic(), ConstantOne())
            inc.append(np.linalg.norm(st.x - sphere.nodes))
        ratios.append(inc[1] / inc[0])
    assert abs(ratios[1] - 2) < abs(ratios[0] - 2) + 1e-12
    assert abs(ratios[1] - 2) < 1e-2


@pytest.mark.parametrize("q", [1, 2, 5])
def test_bootstrap_orders(sphere, q):
    st = initial_state(sphere, sphere.nodes, np.full(sphere.n_nodes, -2.0), 1e-3)
    seen = []
    bootstrap(st, q, Isotropic(), ConstantOne(), on_step=lambda s, info: seen.append(s.n))
    assert seen == list(range(1, q))
    assert len(st.xs) == q


def test_block_columns_share_matrix(sphere):
    """Re-solving one column alone reproduces the block solve bitwise."""
    from wulff_flow.assembly import assemble_system
    s = assemble_system(sphere, sphere.nodes, np.full(sphere.n_nodes, -2.0), Isotropic(), ConstantOne())
    S = 1500.0 * s.M + s.A
    B = np.column_stack([s.f1, s.f2])
    X, _ = solve_block(S, B)
    for j in range(4):
        Xj, _ = solve_block(S, B[:, [j]])
        assert np.array_equal(Xj[:, 0], X[:, j])


def test_permutation_equivariance(sphere):
    rng = np.random.default_rng(3)
    perm = rng.permutation(sphere.n_nodes)
    inv = np.argsort(perm)
    from wulff_flow.mesh import SurfaceMesh
    pm = SurfaceMesh(sphere.nodes[perm], inv[sphere.elements], sphere.reference)
    V = np.full(sphere.n_nodes, -2.0)
    a = initial_state(sphere, sphere.nodes, V, 1e-3)
    b = initial_state(pm, pm.nodes, V[perm], 1e-3)
    step(a, bdf_coefficients(1), Isotropic(), ConstantOne())
    step(b, bdf_coefficients(1), Isotropic(), ConstantOne())
    # CG inner products depend on the node order, so agreement is to solver tolerance
    np.testing.assert_allclose(b.x, a.x[perm], atol=1e-12)


def test_run_zero_time(sphere):
    res = run_flow(sphere, sphere.nodes, np.full(sphere.n_nodes, -2.0), Isotropic(), ConstantOne(), T=0.0)
    assert res.completed and len(res.log) == 1
    assert res.log[0].energy == pytest.approx(sphere.area())


def test_n_steps():
    assert n_steps(0.24, 1e-3) == 240
    assert n_steps(0.1, 1e-3) == 100
    assert n_steps(0.0, 1e-3) == 0
    assert n_steps(0.0105, 1e-3) == 11


def test_run_sphere_radius_and_energy(sphere):
    res = run_flow(sphere, sphere.nodes, np.full(sphere.n_nodes, -2.0), Isotropic(), ConstantOne(),
                   q=2, tau=2e-3, T=0.05)
    assert res.completed and len(res.log) == 26
    r = np.linalg.norm(res.state.x, axis=1).mean()
    assert abs(r - np.sqrt(1 - 4 * 0.05)) < 5e-3
    e = [l.energy for l in res.log]
    assert all(b <= a * (1 + 1e-10) for a, b in zip(e, e[1:]))


def test_guard_abort_reports_step(sphere):
    nu = sphere.nodes * 0.45
    res = run_flow(sphere, nu, np.full(sphere.n_nodes, -2.0), Isotropic(), ConstantOne(), T=0.01)
    assert not res.completed and "step 1" in res.error
    with pytest.raises(OutOfGuardRegion):
        run_flow(sphere, nu, np.full(sphere.n_nodes, -2.0), Isotropic(), ConstantOne(), T=0.01,
                 raise_errors=True)


def test_degeneration_guard(sphere):
    # element areas of the shrinking sphere scale like 1 - 4t, so a 0.9 threshold trips at t > 0.025
    res = run_flow(sphere, sphere.nodes, np.full(sphere.n_nodes, -2.0), Isotropic(), ConstantOne(),
                   q=1, tau=1e-2, T=0.1, det_ratio_guard=0.9)
    assert not res.completed and "area ratio" in res.error
    assert res.log[-1].min_detJ_ratio < 0.9 <= res.log[-2].min_detJ_ratio
    with pytest.raises(DegenerateElement):
        run_flow(sphere, sphere.nodes, np.full(sphere.n_nodes, -2.0), Isotropic(), ConstantOne(),
                 q=1, tau=1e-2, T=0.1, det_ratio_guard=0.9, raise_errors=True)


def test_normalize_flag(sphere):
    res = run_flow(sphere, sphere.nodes, np.full(sphere.n_nodes, -2.0), hexagonal(0.1), ConstantOne(),
                   q=2, tau=1e-3, T=0.005, normalize=True)
    np.testing.assert_allclose(np.linalg.norm(res.state.normal, axis=1), 1.0, atol=1e-14)
