"""One-homogeneous anisotropic energy densities and kinetic coefficients.

Every density acts on arrays of directions with trailing dimension 3 and
returns ``gamma`` (shape ``(...)``), its gradient (``(..., 3)``) and its
Hessian (``(..., 3, 3)``).  Derivatives are closed-form; finite differences
appear only in :func:`verify_density`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonFinite, OutOfGuardRegion, ZeroDirection

GUARD_LO = 0.5
GUARD_HI = 2.0


def _as_directions(w):
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != 3:
        raise ValueError(f"expected trailing dimension 3, got shape {w.shape}")
    return w


def _outer(a, b):
    return a[..., :, None] * b[..., None, :]


class AnisotropyDensity:
    """Base class; subclasses implement the ``_eval`` triple on unit-scaled input.

    The public methods rescale by ``|w|`` before calling into the kind-specific
    formulas, which keeps large powers (cubic, p-norm kinds) in range.
    """

    kind = "abstract"
    strongly_convex = True

    def __init__(self, label: str | None = None):
        self.label = label or self.kind

    def __repr__(self):
        return f"{type(self).__name__}({self.label!r})"

    # kind-specific, on directions with |w| = 1 (up to rounding)
    def _eval(self, w):
        raise NotImplementedError

    def _split(self, w):
        w = _as_directions(w)
        n = np.linalg.norm(w, axis=-1)
        if np.any(n == 0.0):
            raise ZeroDirection("anisotropy evaluated at the zero vector")
        if not np.all(np.isfinite(n)):
            raise NonFinite("non-finite direction", direction=w)
        return w / n[..., None], n

    def _checked(self, values, w):
        for v in values:
            if not np.all(np.isfinite(v)):
                lead = np.shape(w)[:-1]
                bad = ~np.isfinite(np.reshape(v, lead + (-1,))).all(axis=-1)
                direction = np.asarray(w)[bad][0] if lead else np.asarray(w)
                raise NonFinite(f"{self.label}: non-finite evaluation at {direction}",
                                direction=direction)
        return values

    def all(self, w):
        """Return ``(gamma, gamma', gamma'')`` at ``w`` in one pass."""
        u, n = self._split(w)
        g, dg, ddg = self._checked(self._eval(u), w)
        return g * n, dg, ddg / n[..., None, None]

    def value(self, w):
        u, n = self._split(w)
        return self._checked(self._eval(u), w)[0] * n

    def gradient(self, w):
        u, _ = self._split(w)
        return self._checked(self._eval(u), w)[1]

    def hessian(self, w, stabilized: bool = False):
        w = _as_directions(w)
        u, n = self._split(w)
        ddg = self._checked(self._eval(u), w)[2] / n[..., None, None]
        if stabilized:
            ddg = ddg + _outer(w, w)
        return ddg

    __call__ = value


class Isotropic(AnisotropyDensity):
    kind = "isotropic"

    def _eval(self, w):
        g = np.linalg.norm(w, axis=-1)
        dg = w / g[..., None]
        ddg = (np.eye(3) - _outer(dg, dg)) / g[..., None, None]
        return g, dg, ddg


class Ellipsoidal(AnisotropyDensity):
    """``gamma(w) = sqrt(w . G w)`` for symmetric positive definite ``G``."""

    kind = "ellipsoidal"

    def __init__(self, G, label=None):
        G = np.asarray(G, dtype=float)
        if G.ndim == 1:
            G = np.diag(G)
        if G.shape != (3, 3) or not np.allclose(G, G.T):
            raise ValueError("G must be a symmetric 3x3 matrix")
        if np.linalg.eigvalsh(G).min() <= 0:
            raise ValueError("G must be positive definite")
        self.G = G
        super().__init__(label)

    def _eval(self, w):
        Gw = w @ self.G
        g = np.sqrt(np.einsum("...i,...i->...", w, Gw))
        dg = Gw / g[..., None]
        ddg = self.G / g[..., None, None] - _outer(Gw, Gw) / (g**3)[..., None, None]
        return g, dg, ddg


class BGNCombination(AnisotropyDensity):
    """``gamma = (sum_l gamma_l^r)^(1/r)`` with ellipsoidal ``gamma_l``.

    Powers are taken of ``gamma_l / max_l gamma_l`` so that large ``r`` does
    not overflow.
    """

    kind = "bgn_combination"

    def __init__(self, Gs, r: float = 1.0, label=None):
        if r < 1:
            raise ValueError("r must be >= 1")
        self.Gs = np.array([np.asarray(G, dtype=float) for G in Gs])
        for G in self.Gs:
            if not np.allclose(G, G.T) or np.linalg.eigvalsh(G).min() <= 0:
                raise ValueError("every G_l must be symmetric positive definite")
        self.r = float(r)
        super().__init__(label)

    def _eval(self, w):
        r = self.r
        Gw = np.einsum("lij,...j->l...i", self.Gs, w)
        gl = np.sqrt(np.einsum("...i,l...i->l...", w, Gw))
        dgl = Gw / gl[..., None]
        m = gl.max(axis=0)
        s = gl / m
        S = np.sum(s**r, axis=0)
        g = m * S ** (1.0 / r)
        rho = s / S ** (1.0 / r)  # gamma_l / gamma, in (0, 1]
        wt = rho ** (r - 1.0)
        dg = np.einsum("l...,l...i->...i", wt, dgl)
        ddgl = (self.Gs.reshape((len(self.Gs),) + (1,) * (w.ndim - 1) + (3, 3))
                / gl[..., None, None] - _outer(Gw, Gw) / (gl**3)[..., None, None])
        ddg = np.einsum("l...,l...ij->...ij", wt, ddgl)
        if r != 1.0:
            ddg = ddg + (r - 1.0) * (
                np.einsum("l...,l...ij->...ij", wt / gl, _outer(dgl, dgl))
                - _outer(dg, dg) / g[..., None, None])
        return g, dg, ddg


class AsymmetricPower(AnisotropyDensity):
    """``gamma(w) = ((5.5 + 4.5 sign w1) w1^p + w2^p + w3^p)^(1/p)``, p even.

    ``sign(0)`` is taken as +1.  For p >= 4 the Hessian degenerates along the
    coordinate axes, so the density is convex but not strongly convex.
    """

    kind = "asymmetric_p4"
    strongly_convex = False

    def __init__(self, p: int = 4, label=None):
        if p < 4 or p % 2:
            raise ValueError("p must be an even integer >= 4")
        self.p = int(p)
        super().__init__(label)

    def _eval(self, w):
        p = self.p
        a = np.where(w[..., 0] >= 0, 10.0, 1.0)
        coef = np.stack([a, np.ones_like(a), np.ones_like(a)], axis=-1)
        S = np.sum(coef * w**p, axis=-1)
        g = S ** (1.0 / p)
        Gw1 = coef * w ** (p - 1)
        dg = g[..., None] ** (1 - p) * Gw1
        ddg = ((p - 1) * g[..., None, None] ** (1 - p)
               * (coef * w ** (p - 2))[..., None] * np.eye(3)
               + (1 - p) * g[..., None, None] ** (1 - 2 * p) * _outer(Gw1, Gw1))
        return g, dg, ddg


class CustomDensity(AnisotropyDensity):
    """User-supplied vectorised closures for gamma and its derivatives."""

    kind = "custom"

    def __init__(self, gamma: Callable, gradient: Callable, hessian: Callable,
                 label=None, strongly_convex: bool = True):
        self._g, self._dg, self._ddg = gamma, gradient, hessian
        self.strongly_convex = strongly_convex
        super().__init__(label)

    def _eval(self, w):
        return (np.asarray(self._g(w), float), np.asarray(self._dg(w), float),
                np.asarray(self._ddg(w), float))


def scaled(density: AnisotropyDensity, c: float) -> CustomDensity:
    """``c * gamma`` as a custom density."""
    return CustomDensity(lambda w: c * density.value(w),
                         lambda w: c * density.gradient(w),
                         lambda w: c * density.hessian(w),
                         label=f"{c}*{density.label}",
                         strongly_convex=density.strongly_convex)


# --- registered families -------------------------------------------------

def _axis_regularized(eps):
    eye = np.eye(3)
    return [eps**2 * eye + (1 - eps**2) * np.outer(eye[l], eye[l]) for l in range(3)]


def hexagonal_rotations():
    """Rotations whose transposes map the first axis onto the hexagonal directions.

    ``R_1 = I``, ``R_2, R_3`` rotate about the third axis by +-pi/3 and ``R_4``
    maps the first axis to the third.  The first three give the in-plane
    six-fold symmetry, the last one the prism caps.
    """
    def rz(t):
        c, s = np.cos(t), np.sin(t)
        return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    R4 = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
    return [np.eye(3), rz(np.pi / 3), rz(-np.pi / 3), R4]


def l1_regularized(eps: float) -> BGNCombination:
    return BGNCombination(_axis_regularized(eps), r=1.0, label=f"l1reg:{eps}")


def cubic(eps: float, r: float) -> BGNCombination:
    return BGNCombination(_axis_regularized(eps), r=r, label=f"cubic:{eps},{r}")


def hexagonal(eps: float) -> BGNCombination:
    D = np.diag([1.0, eps**2, eps**2])
    Gs = [R.T @ D @ R for R in hexagonal_rotations()]
    return BGNCombination(Gs, r=1.0, label=f"hexagonal:{eps}")


def density_from_key(key: str) -> AnisotropyDensity:
    """Parse a density key such as ``"ellipsoidal:1,0.25,0.25"`` or ``"cubic:0.01,30"``."""
    name, _, arg = key.strip().partition(":")
    vals = [float(v) for v in arg.split(",")] if arg else []
    try:
        if name == "isotropic" and not vals:
            return Isotropic("isotropic")
        if name == "ellipsoidal" and len(vals) == 3:
            return Ellipsoidal(np.diag(vals), label=key)
        if name == "l1reg" and len(vals) == 1:
            return l1_regularized(vals[0])
        if name == "cubic" and len(vals) == 2:
            return cubic(vals[0], vals[1])
        if name == "hexagonal" and len(vals) == 1:
            return hexagonal(vals[0])
        if name == "asym4" and not vals:
            return AsymmetricPower(4, label="asym4")
        if name == "asym" and len(vals) == 1:
            return AsymmetricPower(int(vals[0]), label=key)
    except ValueError as exc:
        raise ValueError(f"invalid density key {key!r}: {exc}") from None
    raise ValueError(f"unknown density key {key!r}")


REGISTERED_KEYS = ("isotropic", "ellipsoidal:1,0.25,0.25", "l1reg:0.1",
                   "cubic:0.01,30", "hexagonal:0.1", "asym4")


# --- module-level operations ---------------------------------------------

def evaluate(density: AnisotropyDensity, w):
    return density.value(w)


def gradient(density: AnisotropyDensity, w):
    return density.gradient(w)


def hessian(density: AnisotropyDensity, w, stabilized: bool = False):
    return density.hessian(w, stabilized=stabilized)


# --- kinetic coefficients ------------------------------------------------

class KineticCoefficient:
    kind = "abstract"

    def _eval(self, w):
        raise NotImplementedError

    def __call__(self, w, check: bool = True):
        """Return ``(beta(w), beta'(w))``; raises if ``|w|`` leaves [1/2, 2]."""
        w = _as_directions(w)
        if check:
            check_guard(w)
        return self._eval(w)

    def bounds(self, samples: int = 2000, seed: int = 0):
        """Empirical ``(c2, c3)`` with ``c2 <= beta <= c3`` on 1/2 <= |v| <= 2."""
        rng = np.random.default_rng(seed)
        u = random_unit_vectors(samples, rng)
        vals = np.concatenate([self._eval(s * u)[0] for s in (GUARD_LO, 1.0, GUARD_HI)])
        return float(vals.min()), float(vals.max())


class ConstantOne(KineticCoefficient):
    kind = "constant_one"

    def _eval(self, w):
        return np.ones(w.shape[:-1]), np.zeros_like(w)


class InverseGamma(KineticCoefficient):
    kind = "inverse_gamma"

    def __init__(self, density: AnisotropyDensity):
        self.density = density

    def _eval(self, w):
        g = self.density.value(w)
        dg = self.density.gradient(w)
        return 1.0 / g, -dg / (g**2)[..., None]


class CustomKinetic(KineticCoefficient):
    kind = "custom"

    def __init__(self, beta: Callable, dbeta: Callable):
        self._b, self._db = beta, dbeta

    def _eval(self, w):
        return np.asarray(self._b(w), float), np.asarray(self._db(w), float)


def kinetic(coeff: KineticCoefficient, w):
    return coeff(w)[0]


def kinetic_gradient(coeff: KineticCoefficient, w):
    return coeff(w)[1]


def kinetic_from_key(key: str, density: AnisotropyDensity) -> KineticCoefficient:
    if key in ("one", "constant_one", "1"):
        return ConstantOne()
    if key in ("inverse_gamma", "1/gamma"):
        return InverseGamma(density)
    raise ValueError(f"unknown kinetic key {key!r}")


def check_guard(w, element=None):
    n = np.linalg.norm(w, axis=-1)
    bad = (n < GUARD_LO) | (n > GUARD_HI) | ~np.isfinite(n)
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        raise OutOfGuardRegion(
            f"|nu_h| = {n[tuple(idx)]:.6g} outside [{GUARD_LO}, {GUARD_HI}] at index {tuple(idx)}",
            element=element if element is not None else tuple(int(i) for i in idx))


# --- dual density and Wulff/Frank sampling -------------------------------

def geodesic_grid(frequency: int):
    """Class-I geodesic grid on the unit sphere: icosahedron faces split into ``frequency**2`` triangles.

    Returns ``(points, triangles)`` with outward-oriented triangles.
    """
    verts, faces = icosahedron()
    n = int(frequency)
    pts, tris = [], []
    for a, b, c in faces:
        A, B, C = verts[a], verts[b], verts[c]
        local = {}
        for i in range(n + 1):
            for j in range(n + 1 - i):
                local[i, j] = len(pts)
                pts.append(((n - i - j) * A + i * B + j * C) / n)
        for i in range(n):
            for j in range(n - i):
                tris.append((local[i, j], local[i + 1, j], local[i, j + 1]))
                if i + j < n - 1:
                    tris.append((local[i + 1, j], local[i + 1, j + 1], local[i, j + 1]))
    pts = np.array(pts)
    pts /= np.linalg.norm(pts, axis=1)[:, None]
    _, first, inverse = np.unique(np.round(pts, 12), axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    points = pts[np.sort(first)]
    tris = remap[inverse.ravel()][np.array(tris)]
    return points, tris


def icosahedron():
    t = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
                  [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
                  [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], dtype=float)
    v /= np.linalg.norm(v, axis=1)[:, None]
    f = np.array([[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
                  [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
                  [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
                  [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    return v, f


def _tangent_basis(p):
    a = np.eye(3)[np.argmin(np.abs(p))]
    e1 = np.cross(p, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(p, e1)
    return e1, e2


def _dual_newton(density, q, p0, max_iter=50):
    """Maximise ``p.q / gamma(p)`` near ``p0`` with damped Newton in a tangent chart."""
    def f(p):
        return p @ q / density.value(p)

    e1, e2 = _tangent_basis(p0)
    E = np.stack([e1, e2], axis=1)
    p, fp = p0.copy(), f(p0)
    for _ in range(max_iter):
        g, dg, ddg = density.all(p)
        pq = p @ q
        grad = q / g - pq * dg / g**2
        hess = (-(np.outer(q, dg) + np.outer(dg, q)) / g**2
                + 2 * pq * np.outer(dg, dg) / g**3 - pq * ddg / g**2)
        gt = E.T @ grad
        Ht = E.T @ hess @ E
        try:
            step = -np.linalg.solve(Ht, gt)
            if gt @ step <= 0:  # not an ascent direction
                step = gt
        except np.linalg.LinAlgError:
            step = gt
        lam, improved = 1.0, False
        while lam > 1e-12:
            cand = p + lam * (E @ step)
            fc = f(cand)
            if fc > fp:
                p, fp, improved = cand, fc, True
                break
            lam *= 0.5
        if not improved or np.linalg.norm(lam * step) < 1e-15 * np.linalg.norm(p):
            break
        p /= np.linalg.norm(p)
        e1, e2 = _tangent_basis(p)
        E = np.stack([e1, e2], axis=1)
    return fp


def dual_evaluate(density: AnisotropyDensity, q, grid_resolution: int = 32) -> float:
    """``gamma*(q) = sup_p p.q / gamma(p)``: geodesic-grid search plus Newton refinement."""
    q = np.asarray(q, dtype=float)
    nq = np.linalg.norm(q)
    if nq == 0:
        raise ZeroDirection("dual density evaluated at the zero vector")
    if grid_resolution < 16:
        raise ValueError("grid_resolution must be >= 16")
    qh = q / nq
    pts, _ = _grid_cache(grid_resolution)
    vals = pts @ qh / density.value(pts)
    i = int(np.argmax(vals))
    best = max(float(vals[i]), _dual_newton(density, qh, pts[i]))
    return nq * best


_GRID_CACHE: dict = {}


def _grid_cache(n):
    if n not in _GRID_CACHE:
        _GRID_CACHE[n] = geodesic_grid(n)
    return _GRID_CACHE[n]


def frank_and_wulff(density: AnisotropyDensity, grid_resolution: int = 16, dual_resolution: int = 32):
    """Boundary samples of the Frank diagram ``{gamma <= 1}`` and the Wulff shape ``{gamma* <= 1}``.

    Returns ``(frank_points, wulff_points, triangles)``; both point sets share
    the geodesic triangulation.
    """
    pts, tris = geodesic_grid(grid_resolution)
    frank = pts / density.value(pts)[:, None]
    dual = np.array([dual_evaluate(density, p, dual_resolution) for p in pts])
    wulff = pts / dual[:, None]
    if not (np.all(np.isfinite(frank)) and np.all(np.isfinite(wulff))):
        raise NonFinite(f"{density.label}: non-finite Frank/Wulff samples")
    return frank, wulff, tris


# --- self-verification ---------------------------------------------------

def random_unit_vectors(n, rng):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1)[:, None]


@dataclass
class DensityReport:
    label: str
    samples: int
    homogeneity: float
    euler_gradient: float
    euler_hessian: float
    symmetry: float
    min_rayleigh: float
    fd_gradient: float
    fd_hessian: float
    worst_direction: dict = field(default_factory=dict)


def tangential_rayleigh(density: AnisotropyDensity, z):
    """Smallest eigenvalue of ``gamma''(z)`` restricted to the plane orthogonal to ``z``."""
    z = np.atleast_2d(z)
    H = density.hessian(z)
    out = np.empty(len(z))
    for k, zk in enumerate(z):
        zk = zk / np.linalg.norm(zk)
        E = np.stack(_tangent_basis(zk), axis=1)
        out[k] = np.linalg.eigvalsh(E.T @ H[k] @ E).min()
    return out


def verify_density(density: AnisotropyDensity, sample_count: int = 500,
                   fd_step: float = 1e-6, seed: int = 0) -> DensityReport:
    """Check homogeneity, Euler identities, convexity and finite-difference agreement."""
    if sample_count < 100:
        raise ValueError("sample_count must be >= 100")
    if not 1e-7 <= fd_step <= 1e-4:
        raise ValueError("fd_step must lie in [1e-7, 1e-4]")
    rng = np.random.default_rng(seed)
    w = random_unit_vectors(sample_count, rng)
    lam = np.exp(rng.uniform(np.log(0.1), np.log(10.0), sample_count))
    g, dg, ddg = density.all(w)

    hom = np.abs(density.value(lam[:, None] * w) - lam * g) / g
    e1 = np.abs(np.einsum("ni,ni->n", dg, w) - g)
    e2 = np.linalg.norm(np.einsum("nij,nj->ni", ddg, w), axis=1)
    sym = np.abs(ddg - np.swapaxes(ddg, 1, 2)).max(axis=(1, 2))
    ray = tangential_rayleigh(density, w)

    eye = np.eye(3)
    fd1 = np.empty_like(dg)
    fd2 = np.empty_like(ddg)
    for a in range(3):
        step = fd_step * eye[a]
        fd1[:, a] = (density.value(w + step) - density.value(w - step)) / (2 * fd_step)
        fd2[:, :, a] = (density.gradient(w + step) - density.gradient(w - step)) / (2 * fd_step)
    r1 = np.abs(fd1 - dg).max(axis=1) / np.abs(dg).max(axis=1)
    r2 = np.abs(fd2 - ddg).max(axis=(1, 2)) / np.abs(ddg).max(axis=(1, 2))

    worst = {name: w[int(np.argmax(arr))].tolist()
             for name, arr in (("homogeneity", hom), ("euler_hessian", e2), ("fd_hessian", r2))}
    worst["min_rayleigh"] = w[int(np.argmin(ray))].tolist()
    return DensityReport(density.label, sample_count, float(hom.max()), float(e1.max()),
                         float(e2.max()), float(sym.max()), float(ray.min()),
                         float(r1.max()), float(r2.max()), worst)
