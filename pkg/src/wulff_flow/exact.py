"""Self-similar ellipsoidal solutions and reference trajectories.

For ``gamma(w) = sqrt(w . G w)`` with ``G = diag(1, eps^2, eps^2)`` and
``beta = 1/gamma`` the surfaces

    x1^2 + x2^2/eps^2 + x3^2/eps^2 = 1 - 4t

shrink self-similarly (Wulff shapes scaled by ``sqrt(1 - 4t)``) and vanish
at ``t = 1/4``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .anisotropy import Ellipsoidal, InverseGamma
from .errors import OffSurface, PastBlowup, UnsupportedOrder
from .mesh import LevelSet

BLOWUP_TIME = 0.25
_BLOWUP_MARGIN = 1e-12


@dataclass(frozen=True)
class SelfSimilarEllipsoid:
    eps: float = 0.5

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    @property
    def diag(self):
        return np.array([1.0, 1.0 / self.eps ** 2, 1.0 / self.eps ** 2])

    def density(self):
        return Ellipsoidal(np.diag([1.0, self.eps ** 2, self.eps ** 2]))

    def kinetic(self):
        return InverseGamma(self.density())

    def _check_time(self, t):
        if t >= BLOWUP_TIME - _BLOWUP_MARGIN:
            raise PastBlowup(f"t = {t} is not before the extinction time {BLOWUP_TIME}")

    def d(self, x, t):
        x = np.asarray(x, float)
        return x ** 2 @ self.diag - (1.0 - 4.0 * t)

    def grad_d(self, x, t=None):
        return 2.0 * np.asarray(x, float) * self.diag

    def dt_d(self, x=None, t=None):
        return 4.0

    def hessian_d(self, x, t=None):
        x = np.asarray(x, float)
        return np.broadcast_to(np.diag(2.0 * self.diag), x.shape[:-1] + (3, 3))

    def levelset(self, t: float = 0.0) -> LevelSet:
        self._check_time(t)
        return LevelSet(lambda x: self.d(x, t), self.grad_d, self.hessian_d,
                        label=f"self-similar ellipsoid eps={self.eps} t={t}")

    def velocity_field(self, x, t=None):
        """``V nu = -(dt d) grad d / |grad d|^2``, defined off the surface too."""
        g = self.grad_d(x)
        return -4.0 * g / np.sum(g * g, axis=-1, keepdims=True)

    def normal_and_velocity(self, x, t, tol: float = 1e-8):
        """Exact ``nu`` and ``V`` at points of the surface at time ``t``."""
        self._check_time(t)
        x = np.asarray(x, float)
        res = np.abs(self.d(x, t))
        if np.any(res > tol):
            raise OffSurface(f"max |d(x, t)| = {res.max():.3e} exceeds {tol:g}")
        g = self.grad_d(x)
        ng = np.linalg.norm(g, axis=-1)
        return g / ng[..., None], -4.0 / ng

    def anisotropic_mean_curvature(self, t: float) -> float:
        self._check_time(t)
        return 2.0 / math.sqrt(1.0 - 4.0 * t)

    def radius_scale(self, t: float) -> float:
        self._check_time(t)
        return math.sqrt(1.0 - 4.0 * t)


def exact_normal_and_velocity(solution: SelfSimilarEllipsoid, x, t, tol: float = 1e-8):
    return solution.normal_and_velocity(x, t, tol)


def exact_anisotropic_mean_curvature(solution: SelfSimilarEllipsoid, t: float) -> float:
    return solution.anisotropic_mean_curvature(t)


def exact_initial_data(solution: SelfSimilarEllipsoid, nodes, t0: float = 0.0, tol: float = 1e-8):
    """Nodal ``(nu, V)`` for a mesh interpolating the surface at ``t0``."""
    return solution.normal_and_velocity(nodes, t0, tol)


# --- Adams-Bashforth reference integration -------------------------------

def _poly_mul(a, b):
    out = [Fraction(0)] * (len(a) + len(b) - 1)
    for i, ai in enumerate(a):
        for j, bj in enumerate(b):
            out[i + j] += ai * bj
    return out


def adams_bashforth_coefficients(q: int):
    """Exact weights ``b_j`` of ``y_{n+1} = y_n + tau sum_j b_j f_{n-j}``, ``j = 0..q-1``."""
    if not isinstance(q, int) or not 1 <= q <= 5:
        raise UnsupportedOrder(f"Adams-Bashforth order {q} not supported (1..5)")
    nodes = [-k for k in range(q)]
    weights = []
    for j in range(q):
        poly = [Fraction(1)]
        denom = Fraction(1)
        for k in range(q):
            if k != j:
                poly = _poly_mul(poly, [Fraction(-nodes[k]), Fraction(1)])
                denom *= nodes[j] - nodes[k]
        integral = sum(c / (p + 1) for p, c in enumerate(poly))
        weights.append(integral / denom)
    return tuple(weights)


def _rk4(f, x, t, tau):
    k1 = f(x, t)
    k2 = f(x + 0.5 * tau * k1, t + 0.5 * tau)
    k3 = f(x + 0.5 * tau * k2, t + 0.5 * tau)
    k4 = f(x + tau * k3, t + tau)
    return x + tau / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def reference_trajectories(solution: SelfSimilarEllipsoid, x0, tau: float, T: float, q: int = 4,
                           start: str = "rk4", drift_tol: float = 1e-3):
    """Positions ``x*(t_n)`` of ``dx/dt = V nu`` integrated by Adams-Bashforth-q.

    Start values come from classical RK4 (``start="rk4"``) or lower-order AB
    steps (``start="ab"``), the latter limiting accuracy to order 2.
    Returns an array ``(n_steps + 1, N, 3)``.
    """
    solution._check_time(T)
    if start not in ("rk4", "ab"):
        raise ValueError(f"unknown start procedure {start!r}")
    x0 = np.asarray(x0, float)
    res0 = float(np.max(np.abs(solution.d(x0, 0.0))))
    if res0 > 1e-8:
        raise OffSurface(f"initial nodes are {res0:.3e} off the surface")
    b = np.array([float(c) for c in adams_bashforth_coefficients(q)])
    steps = max(0, math.ceil(T / tau - 1e-9))
    f = solution.velocity_field
    xs = [x0.copy()]
    rates = [f(xs[0])]
    for n in range(steps):
        t = n * tau
        if n < q - 1:
            if start == "rk4":
                x_new = _rk4(f, xs[-1], t, tau)
            else:
                bl = np.array([float(c) for c in adams_bashforth_coefficients(n + 1)])
                x_new = xs[-1] + tau * sum(bl[j] * rates[-1 - j] for j in range(n + 1))
        else:
            x_new = xs[-1] + tau * sum(b[j] * rates[-1 - j] for j in range(q))
        drift = float(np.max(np.abs(solution.d(x_new, (n + 1) * tau))))
        if not drift <= drift_tol:
            raise OffSurface(f"step {n + 1}: trajectories drifted {drift:.3e} off the surface")
        xs.append(x_new)
        rates.append(f(x_new))
    return np.array(xs)


def levelset_residual(solution: SelfSimilarEllipsoid, trajectory, tau: float):
    """``max_n max_j |d(x_j(t_n), t_n)|`` along a reference trajectory."""
    return max(float(np.max(np.abs(solution.d(x, n * tau)))) for n, x in enumerate(trajectory))
