import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wulff_flow.anisotropy import (REGISTERED_KEYS, AsymmetricPower, ConstantOne, Ellipsoidal,
                                   InverseGamma, Isotropic, check_guard, cubic, density_from_key,
                                   dual_evaluate, evaluate, frank_and_wulff, geodesic_grid,
                                   gradient, hessian, hexagonal, hexagonal_rotations, kinetic,
                                   kinetic_from_key, kinetic_gradient, scaled, tangential_rayleigh,
                                   verify_density)
from wulff_flow.errors import NonFinite, OutOfGuardRegion, ZeroDirection

ELL = np.diag([1.0, 0.25, 0.25])


def unit(n, seed=1):
    v = np.random.default_rng(seed).standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1)[:, None]


@pytest.fixture(params=REGISTERED_KEYS)
def density(request):
    return density_from_key(request.param)


# --- evaluate / gradient / hessian examples ------------------------------

def test_isotropic_value():
    assert evaluate(Isotropic(), np.array([3.0, 4.0, 0.0])) == pytest.approx(5.0, abs=1e-15)


def test_ellipsoidal_value():
    assert evaluate(Ellipsoidal(ELL), np.array([0.0, 1.0, 0.0])) == pytest.approx(0.5, abs=1e-15)


def test_asymmetric_value_negative_axis():
    assert evaluate(AsymmetricPower(4), np.array([-1.0, 0.0, 0.0])) == pytest.approx(1.0, abs=1e-15)
    # sign(0) = +1 branch
    assert evaluate(AsymmetricPower(4), np.array([1.0, 0.0, 0.0])) == pytest.approx(10 ** 0.25)


def test_ellipsoidal_gradient():
    w = np.array([1.0, 1.0, 0.0])
    d = Ellipsoidal(ELL)
    g = gradient(d, w)
    np.testing.assert_allclose(g, [2 / np.sqrt(5), 0.5 / np.sqrt(5), 0.0], atol=1e-15)
    assert g @ w == pytest.approx(np.sqrt(1.25), abs=1e-15)
    assert evaluate(d, w) == pytest.approx(np.sqrt(1.25), abs=1e-15)


def test_isotropic_gradient():
    np.testing.assert_allclose(gradient(Isotropic(), np.array([0.0, 0.0, 2.0])), [0, 0, 1])


def test_gradient_zero_homogeneous(density):
    w = unit(20, 3)
    np.testing.assert_allclose(density.gradient(2 * w), density.gradient(w), rtol=1e-12, atol=1e-14)


def test_isotropic_hessian_plain_and_stabilized():
    w = np.array([0.0, 0.0, 1.0])
    np.testing.assert_allclose(hessian(Isotropic(), w), np.diag([1.0, 1.0, 0.0]), atol=1e-15)
    np.testing.assert_allclose(hessian(Isotropic(), w, stabilized=True), np.eye(3), atol=1e-15)


def test_ellipsoidal_euler_hessian():
    w = unit(200)
    H = Ellipsoidal(ELL).hessian(w)
    assert np.abs(np.einsum("nij,nj->ni", H, w)).max() <= 1e-12


def test_stabilized_is_plain_plus_outer(density):
    w = unit(50, 4) * 1.3
    plain = density.hessian(w)
    stab = density.hessian(w, stabilized=True)
    assert np.array_equal(stab, plain + w[:, :, None] * w[:, None, :])


def test_zero_direction_raises(density):
    with pytest.raises(ZeroDirection):
        density.value(np.zeros(3))
    with pytest.raises(ZeroDirection):
        density.hessian(np.zeros((2, 3)))


def test_non_finite_reported_with_direction():
    d = Isotropic()
    with pytest.raises(NonFinite):
        d.value(np.array([np.inf, 0.0, 0.0]))


def test_cubic_extreme_direction_no_overflow():
    d = cubic(0.01, 30)
    w = np.array([[1e150, 1e-150, 0.0], [1.0, 1.0, 1.0]])
    vals = d.value(w)
    assert np.all(np.isfinite(vals))


# --- invariants over the registered densities -----------------------------

def test_homogeneity(density):
    rng = np.random.default_rng(7)
    w = rng.standard_normal((1000, 3))
    lam = np.exp(rng.uniform(-3, 3, 1000))
    g = density.value(w)
    assert np.max(np.abs(density.value(lam[:, None] * w) - lam * g) / g) <= 1e-10


def test_euler_identities(density):
    w = unit(1000, 8)
    g, dg, ddg = density.all(w)
    assert np.max(np.abs(np.sum(dg * w, axis=1) - g)) <= 1e-10
    assert np.max(np.linalg.norm(np.einsum("nij,nj->ni", ddg, w), axis=1)) <= 1e-9
    assert np.max(np.abs(ddg - np.swapaxes(ddg, 1, 2))) <= 1e-12


def test_positive_values(density):
    assert np.all(density.value(unit(1000, 9)) > 0)


def test_strong_convexity(density):
    c0 = tangential_rayleigh(density, unit(1000, 10)).min()
    if density.strongly_convex:
        assert c0 > 0
    else:
        assert c0 > -1e-12


def test_asymmetric_hessian_degenerates_on_axes():
    c = tangential_rayleigh(AsymmetricPower(4), np.array([[0.0, 0.0, 1.0]]))
    assert abs(c[0]) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 1e-3),
       st.floats(0.01, 100))
def test_property_homogeneity_hexagonal(w, lam):
    d = hexagonal(0.1)
    w = np.array(w)
    assert d.value(lam * w) == pytest.approx(lam * d.value(w), rel=1e-10)


# --- verify_density ------------------------------------------------------

def test_verify_isotropic():
    rep = verify_density(Isotropic(), 500)
    assert rep.euler_gradient <= 1e-12 and rep.euler_hessian <= 1e-12
    assert rep.min_rayleigh == pytest.approx(1.0, abs=1e-12)


def test_verify_ellipsoidal_fd():
    rep = verify_density(Ellipsoidal(ELL), 500, fd_step=1e-6)
    assert rep.fd_hessian <= 1e-5 and rep.fd_gradient <= 1e-5


def test_verify_hexagonal_rayleigh():
    assert verify_density(hexagonal(0.1), 500).min_rayleigh > 0


def test_verify_argument_validation():
    with pytest.raises(ValueError):
        verify_density(Isotropic(), 50)
    with pytest.raises(ValueError):
        verify_density(Isotropic(), 500, fd_step=1e-2)


def test_hexagonal_rotations_orthogonal():
    for R in hexagonal_rotations():
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-15)
        assert np.linalg.det(R) == pytest.approx(1.0)


def test_hexagonal_sixfold_symmetry():
    d = hexagonal(0.1)
    c, s = np.cos(np.pi / 3), np.sin(np.pi / 3)
    Rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    w = unit(100, 11)
    np.testing.assert_allclose(d.value(w @ Rz.T), d.value(w), rtol=1e-12)


# --- kinetic coefficients ------------------------------------------------

def test_constant_one():
    b, db = ConstantOne()(np.array([0.3, 0.4, 0.5]) * 1.5)
    assert b == 1.0 and np.all(db == 0)


def test_inverse_gamma_values():
    assert kinetic(InverseGamma(Isotropic()), np.array([0.0, 1.0, 0.0])) == pytest.approx(1.0)
    assert kinetic(InverseGamma(Ellipsoidal(ELL)), np.array([0.0, 1.0, 0.0])) == pytest.approx(2.0)


def test_inverse_gamma_gradient_matches_fd():
    k = InverseGamma(Ellipsoidal(ELL))
    w = np.array([0.3, -0.6, 0.7])
    h = 1e-6
    fd = [(kinetic(k, w + h * e) - kinetic(k, w - h * e)) / (2 * h) for e in np.eye(3)]
    np.testing.assert_allclose(kinetic_gradient(k, w), fd, rtol=1e-7)


def test_guard_region():
    k = InverseGamma(Isotropic())
    with pytest.raises(OutOfGuardRegion):
        k(np.array([0.0, 0.0, 0.4]))
    with pytest.raises(OutOfGuardRegion):
        check_guard(np.array([[0, 0, 1.0], [0, 0, 2.5]]))
    k(np.array([0.0, 0.0, 2.0]))   # boundary is inside


def test_kinetic_bounds():
    c2, c3 = InverseGamma(Ellipsoidal(ELL)).bounds()
    assert c2 == pytest.approx(0.5, rel=1e-2) and c3 == pytest.approx(4.0, rel=1e-2)
    assert 0 < c2 <= c3


def test_kinetic_key():
    assert isinstance(kinetic_from_key("one", Isotropic()), ConstantOne)
    assert isinstance(kinetic_from_key("inverse_gamma", Isotropic()), InverseGamma)
    with pytest.raises(ValueError):
        kinetic_from_key("bogus", Isotropic())


def test_density_keys():
    for key in REGISTERED_KEYS + ("asym:6", "cubic:0.1,30"):
        assert density_from_key(key).value(np.array([1.0, 2.0, 3.0])) > 0
    for bad in ("nope", "ellipsoidal:1,2", "cubic:0.1", "ellipsoidal:1,-1,1"):
        with pytest.raises(ValueError):
            density_from_key(bad)


def test_scaled_density():
    d = scaled(Ellipsoidal(ELL), 2.0)
    w = unit(10)
    np.testing.assert_allclose(d.value(w), 2 * Ellipsoidal(ELL).value(w))


# --- dual density and shapes ----------------------------------------------

def test_dual_isotropic():
    assert dual_evaluate(Isotropic(), np.array([0.0, 3.0, 0.0])) == pytest.approx(3.0, abs=1e-12)


def test_dual_ellipsoidal():
    assert dual_evaluate(Ellipsoidal(ELL), np.array([0.0, 1.0, 0.0])) == pytest.approx(2.0, abs=1e-6)


def test_dual_closed_form_at_64():
    d = Ellipsoidal(ELL)
    Ginv = np.linalg.inv(ELL)
    for q in unit(10, 12):
        assert dual_evaluate(d, q, 64) == pytest.approx(np.sqrt(q @ Ginv @ q), rel=1e-5)


def test_dual_homogeneous(density):
    q = np.array([0.2, -0.5, 0.8])
    assert dual_evaluate(density, 2 * q) == pytest.approx(2 * dual_evaluate(density, q), abs=1e-12)


def test_dual_monotone_in_grid():
    d = cubic(0.1, 30)
    q = np.array([0.3, 0.5, 0.81])
    vals = [dual_evaluate(d, q, n) for n in (16, 32, 64)]
    assert vals[0] <= vals[1] + 1e-12 and vals[1] <= vals[2] + 1e-12


def test_dual_rejects():
    with pytest.raises(ZeroDirection):
        dual_evaluate(Isotropic(), np.zeros(3))
    with pytest.raises(ValueError):
        dual_evaluate(Isotropic(), np.ones(3), 8)


def test_geodesic_grid_is_closed_sphere():
    pts, tris = geodesic_grid(4)
    np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-15)
    assert len(pts) - 3 * len(tris) // 2 + len(tris) == 2


def test_frank_and_wulff_isotropic():
    frank, wulff, _ = frank_and_wulff(Isotropic(), 8, 16)
    assert np.abs(np.linalg.norm(frank, axis=1) - 1).max() <= 1e-10
    assert np.abs(np.linalg.norm(wulff, axis=1) - 1).max() <= 1e-10
