"""Assembly of the solution-dependent mass and stiffness matrices and load vectors.

Local element contributions are scattered into a CSR pattern that is built
once per connectivity, so repeated assembly is a single ``np.bincount`` in
fixed element order (bit-reproducible).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .anisotropy import AnisotropyDensity, KineticCoefficient, check_guard
from .errors import OutOfGuardRegion, SizeMismatch
from .geometry import GeometricSample, sample_fields, weingarten_energy_density
from .mesh import SurfaceMesh


@dataclass
class _Pattern:
    indptr: np.ndarray
    indices: np.ndarray
    scatter: np.ndarray     # (E * n * n,) position of each local entry in the CSR data array
    shape: tuple


def _pattern(mesh: SurfaceMesh) -> _Pattern:
    topo = mesh.topology
    if "pattern" not in topo:
        e = mesh.elements
        n = e.shape[1]
        rows = np.repeat(e, n, axis=1).ravel()
        cols = np.tile(e, (1, n)).ravel()
        N = mesh.n_nodes
        key = rows.astype(np.int64) * N + cols
        uniq, inv = np.unique(key, return_inverse=True)
        r, c = np.divmod(uniq, N)
        indptr = np.zeros(N + 1, dtype=np.int64)
        np.add.at(indptr, r + 1, 1)
        topo["pattern"] = _Pattern(np.cumsum(indptr), c, inv.ravel(), (N, N))
    return topo["pattern"]


def scatter_matrix(mesh: SurfaceMesh, local) -> sp.csr_matrix:
    """Sum local ``(E, n, n)`` blocks into a global CSR matrix."""
    p = _pattern(mesh)
    data = np.bincount(p.scatter, weights=np.ravel(local), minlength=len(p.indices))
    return sp.csr_matrix((data, p.indices, p.indptr), shape=p.shape)


def scatter_vector(mesh: SurfaceMesh, local):
    """Sum local ``(E, n)`` or ``(E, n, m)`` contributions into nodal arrays."""
    local = np.asarray(local)
    idx = mesh.elements.ravel()
    if local.ndim == 2:
        return np.bincount(idx, weights=local.ravel(), minlength=mesh.n_nodes)
    flat = local.reshape(-1, local.shape[-1])
    return np.stack([np.bincount(idx, weights=flat[:, m], minlength=mesh.n_nodes)
                     for m in range(flat.shape[1])], axis=1)


def load_vector(mesh: SurfaceMesh, values_qp):
    """``int f phi_j`` for ``f`` given at quadrature points ``(E, Q)``."""
    g = mesh.geometry
    return scatter_vector(mesh, (g.dA * values_qp) @ mesh.reference.phi)


def _local_mass(mesh, weight_qp):
    phi = mesh.reference.phi
    n = phi.shape[1]
    pp = (phi[:, :, None] * phi[:, None, :]).reshape(len(phi), n * n)
    w = np.broadcast_to(mesh.geometry.dA * weight_qp, mesh.geometry.dA.shape)
    return (w @ pp).reshape(-1, n, n)


def _local_stiffness(mesh, H):
    g = mesh.geometry
    E, Q, n, _ = g.grad.shape
    gT = np.swapaxes(g.grad, -1, -2)                  # (E, Q, 3, n)
    HG = gT if H is None else H @ gT
    left = (g.grad * g.dA[..., None, None]).transpose(0, 2, 1, 3).reshape(E, n, Q * 3)
    return left @ HG.reshape(E, Q * 3, n)


def _guarded_nu(mesh, sample):
    try:
        check_guard(sample.nu)
    except OutOfGuardRegion as exc:
        e = exc.element[0] if isinstance(exc.element, tuple) else exc.element
        raise OutOfGuardRegion(f"element {e}: {exc}", element=e) from None


def assemble_plain_mass(mesh: SurfaceMesh) -> sp.csr_matrix:
    return scatter_matrix(mesh, _local_mass(mesh, 1.0))


def h1_stiffness(mesh: SurfaceMesh) -> sp.csr_matrix:
    """``int grad phi_i . grad phi_j`` (Laplace-Beltrami stiffness)."""
    return scatter_matrix(mesh, _local_stiffness(mesh, None))


def assemble_mass(mesh: SurfaceMesh, nu_h, kinetic: KineticCoefficient) -> sp.csr_matrix:
    """``int beta(nu_h) phi_i phi_j``."""
    s = sample_fields(mesh, nu_h)
    _guarded_nu(mesh, s)
    beta, _ = kinetic(s.nu, check=False)
    return scatter_matrix(mesh, _local_mass(mesh, beta))


def assemble_stiffness(mesh: SurfaceMesh, nu_h, density: AnisotropyDensity,
                       stabilized: bool = False) -> sp.csr_matrix:
    """``int gamma''(nu_h) grad phi_i . grad phi_j``; optionally with ``+ nu_h nu_h^T``."""
    s = sample_fields(mesh, nu_h)
    _guarded_nu(mesh, s)
    return scatter_matrix(mesh, _local_stiffness(mesh, density.hessian(s.nu, stabilized=stabilized)))


def assemble_normal_projector_form(mesh: SurfaceMesh, nu_h) -> sp.csr_matrix:
    """``int (nu_h nu_h^T) grad phi_i . grad phi_j``, the stabilisation increment alone."""
    s = sample_fields(mesh, nu_h)
    H = s.nu[..., :, None] * s.nu[..., None, :]
    return scatter_matrix(mesh, _local_stiffness(mesh, H))


def _rhs_local(mesh, s: GeometricSample, ddg, beta_grad):
    phi = mesh.reference.phi
    dA = mesh.geometry.dA
    A2 = weingarten_energy_density(s, None, hessian=ddg)
    grad_beta = (s.grad_nu @ beta_grad[..., None])[..., 0]   # grad_Gamma (beta(nu_h))
    g1 = A2[..., None] * s.nu + s.V[..., None] * grad_beta
    g2 = A2 * s.V + s.V * np.sum(s.grad_V * beta_grad, axis=-1)
    f1 = phi.T @ (dA[..., None] * g1)
    f2 = (dA * g2) @ phi
    return f1, f2


def assemble_rhs(mesh: SurfaceMesh, nu_h, V_h, density: AnisotropyDensity,
                 kinetic: KineticCoefficient):
    """Load vectors ``f1`` (nodal 3-vectors, shape ``(N, 3)``) and ``f2`` (``(N,)``)."""
    s = sample_fields(mesh, nu_h, V_h)
    _guarded_nu(mesh, s)
    _, dbeta = kinetic(s.nu, check=False)
    f1, f2 = _rhs_local(mesh, s, density.hessian(s.nu), dbeta)
    return scatter_vector(mesh, f1), scatter_vector(mesh, f2)


@dataclass
class AssembledSystem:
    M: sp.csr_matrix
    A: sp.csr_matrix
    f1: np.ndarray
    f2: np.ndarray
    min_sqrt_det: np.ndarray   # per element, for degeneration monitoring


def assemble_system(mesh: SurfaceMesh, nu_h, V_h, density: AnisotropyDensity,
                    kinetic: KineticCoefficient, stabilized: bool = False) -> AssembledSystem:
    """``M``, ``A`` and ``f`` from one pass over the quadrature points.

    The stabilisation only enters ``A``; the Weingarten term in ``f`` always
    uses the plain Hessian.
    """
    s = sample_fields(mesh, nu_h, V_h)
    _guarded_nu(mesh, s)
    beta, dbeta = kinetic(s.nu, check=False)
    ddg = density.hessian(s.nu)
    H = ddg + s.nu[..., :, None] * s.nu[..., None, :] if stabilized else ddg
    f1, f2 = _rhs_local(mesh, s, ddg, dbeta)
    return AssembledSystem(scatter_matrix(mesh, _local_mass(mesh, beta)),
                           scatter_matrix(mesh, _local_stiffness(mesh, H)),
                           scatter_vector(mesh, f1), scatter_vector(mesh, f2),
                           mesh.geometry.sqrt_det.min(axis=1))


def nodal_velocity(V, n):
    """``(V_j n_j)_j`` nodewise, without normalisation."""
    V = np.asarray(V, float)
    n = np.asarray(n, float)
    if n.shape != V.shape + (3,):
        raise SizeMismatch(f"V has shape {V.shape}, n has shape {n.shape}")
    return V[:, None] * n


def write_matrix_market(path, matrix):
    from scipy.io import mmwrite
    mmwrite(str(path), sp.coo_matrix(matrix))

