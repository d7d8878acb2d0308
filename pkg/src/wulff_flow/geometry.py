"""Discrete geometric quantities of finite element fields on a surface mesh."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import splu

from .anisotropy import AnisotropyDensity, check_guard
from .errors import SizeMismatch, ZeroNormal
from .mesh import LevelSet, SurfaceMesh


@dataclass
class FEFunction:
    """Nodal coefficients ``(N, m)`` (or ``(N,)`` for scalars) on a mesh."""

    mesh: SurfaceMesh
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, float)
        if self.coefficients.shape[0] != self.mesh.n_nodes:
            raise SizeMismatch(f"{self.coefficients.shape[0]} coefficients for "
                               f"{self.mesh.n_nodes} nodes")

    @property
    def components(self):
        return 1 if self.coefficients.ndim == 1 else self.coefficients.shape[1]


def _coeffs(u):
    return u.coefficients if isinstance(u, FEFunction) else np.asarray(u, float)


@dataclass
class GeometricSample:
    """Fields at all quadrature points, arrays shaped ``(E, Q, ...)``.

    ``grad_nu[..., a, l]`` is the ``a``-th component of the surface gradient
    of ``nu_l``, i.e. columns are component gradients.
    """

    nu: np.ndarray
    grad_nu: np.ndarray
    V: np.ndarray | None
    grad_V: np.ndarray | None
    normal: np.ndarray

    @property
    def A(self):
        g = self.grad_nu
        return 0.5 * (g + np.swapaxes(g, -1, -2))


def interpolate(mesh: SurfaceMesh, u):
    """Values of a nodal field at the quadrature points."""
    u = _coeffs(u)
    return np.moveaxis(np.tensordot(mesh.reference.phi, u[mesh.elements], axes=(1, 1)), 0, 1)


def surface_gradient(mesh: SurfaceMesh, u):
    """Elementwise tangential gradient at quadrature points; ``(E, Q, 3)`` or ``(E, Q, 3, m)``."""
    u = _coeffs(u)
    g = mesh.geometry.grad
    gT = np.swapaxes(g, -1, -2)                       # (E, Q, 3, n)
    if u.ndim == 1:
        return (gT @ u[mesh.elements][:, None, :, None])[..., 0]
    return gT @ u[mesh.elements][:, None]


def sample_fields(mesh: SurfaceMesh, nu_h, V_h=None) -> GeometricSample:
    nu = _coeffs(nu_h)
    if nu.shape != (mesh.n_nodes, 3):
        raise SizeMismatch(f"normal field shape {nu.shape} for {mesh.n_nodes} nodes")
    V = grad_V = None
    if V_h is not None:
        Vc = _coeffs(V_h)
        if Vc.shape != (mesh.n_nodes,):
            raise SizeMismatch(f"velocity field shape {Vc.shape} for {mesh.n_nodes} nodes")
        V = interpolate(mesh, Vc)
        grad_V = surface_gradient(mesh, Vc)
    return GeometricSample(interpolate(mesh, nu), surface_gradient(mesh, nu), V, grad_V,
                           mesh.geometry.normal)


def weingarten_energy_density(sample: GeometricSample, density: AnisotropyDensity, hessian=None):
    """``A_h : gamma''(nu_h) A_h`` with the unstabilised Hessian."""
    if hessian is None:
        check_guard(sample.nu)
        hessian = density.hessian(sample.nu)
    A = sample.A
    return np.sum(A * (hessian @ A), axis=(-2, -1))


def interpolated_normal_field(mesh: SurfaceMesh, levelset: LevelSet | None = None):
    """Nodal unit normals: exact ``grad d / |grad d|`` if a level set is known, else area-weighted averages."""
    levelset = levelset if levelset is not None else mesh.levelset
    if levelset is not None:
        g = levelset.gradient(mesh.nodes)
        n = np.linalg.norm(g, axis=1)
        if np.any(n < 1e-8):
            raise ZeroNormal("level-set gradient vanishes at a node")
        return g / n[:, None]
    ref = mesh.reference
    X = mesh.nodes[mesh.elements]
    _, dphi_nodes = _basis_at_nodes(ref)
    J = np.einsum("eni,kna->ekia", X, dphi_nodes)
    cr = np.cross(J[..., 0], J[..., 1])     # |cr| = local area density, so this is area weighted
    acc = np.zeros((mesh.n_nodes, 3))
    np.add.at(acc, mesh.elements.ravel(), cr.reshape(-1, 3))
    n = np.linalg.norm(acc, axis=1)
    if np.any(n < 1e-8):
        raise ZeroNormal(f"averaged normal vanishes at node {int(np.argmin(n))}")
    return acc / n[:, None]


def _basis_at_nodes(ref):
    from .mesh import lagrange_basis
    return lagrange_basis(ref.degree, ref.nodes)


def analytic_anisotropic_mean_curvature(levelset: LevelSet, density: AnisotropyDensity, x):
    """``H_gamma = tr(gamma''(grad d) D^2 d)`` at points of the zero set.

    Follows from extending the normal by ``grad d / |grad d|``: the
    Cahn-Hoffman field is then ``gamma'(grad d)`` and ``gamma''(grad d)``
    annihilates the normal direction.
    """
    g = levelset.gradient(x)
    return np.einsum("...ab,...ba->...", density.hessian(g), levelset.hessian(x))


def mass_matrix_plain(mesh):
    from .assembly import assemble_plain_mass
    return assemble_plain_mass(mesh)


def l2_project(mesh: SurfaceMesh, values_qp):
    """Consistent L2 projection of quadrature-point data onto the nodal space."""
    from .assembly import load_vector
    M = mass_matrix_plain(mesh).tocsc()
    return splu(M).solve(load_vector(mesh, values_qp))


def discrete_anisotropic_mean_curvature(mesh: SurfaceMesh, nu_h, density: AnisotropyDensity,
                                        levelset: LevelSet | None = None, use_levelset: bool = True):
    """Nodal ``H_gamma``.

    With a level set (given or attached to the mesh) this is the nodal
    interpolant of the analytic value; otherwise the L2 projection of the
    elementwise surface divergence of the interpolated Cahn-Hoffman field.
    """
    levelset = levelset if levelset is not None else mesh.levelset
    if use_levelset and levelset is not None and levelset.hessian is not None:
        return analytic_anisotropic_mean_curvature(levelset, density, mesh.nodes)
    nu = _coeffs(nu_h)
    check_guard(nu)
    ch = density.gradient(nu)                                # nodal Cahn-Hoffman vectors
    div = np.einsum("eqna,ena->eq", mesh.geometry.grad, ch[mesh.elements])
    return l2_project(mesh, div)


def anisotropic_energy(mesh: SurfaceMesh, density: AnisotropyDensity) -> float:
    """``int gamma(nu_geo)`` over the discrete surface, using the geometric normal."""
    g = mesh.geometry
    return float(np.sum(g.dA * density.value(g.normal)))
