"""Linearly implicit BDF time stepping of the coupled position/normal/velocity system."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .anisotropy import GUARD_HI, GUARD_LO, AnisotropyDensity, KineticCoefficient
from .assembly import assemble_system, nodal_velocity
from .errors import (DegenerateElement, IncompleteHistory, OutOfGuardRegion,
                     UnsupportedOrder, WulffFlowError)
from .geometry import anisotropic_energy
from .mesh import SurfaceMesh
from .solver import SolverConfig, solve_block

MAX_ORDER = 5


@dataclass(frozen=True)
class BDFScheme:
    order: int
    delta_exact: tuple      # Fractions, delta_0 .. delta_q
    gamma_exact: tuple      # Fractions, gamma_0 .. gamma_{q-1}

    @property
    def delta(self):
        return np.array([float(d) for d in self.delta_exact])

    @property
    def gamma(self):
        return np.array([float(g) for g in self.gamma_exact])


def bdf_coefficients(q: int) -> BDFScheme:
    """Coefficients of ``delta(z) = sum_l (1 - z)^l / l`` and ``gamma(z) = (1 - (1 - z)^q) / z``."""
    if not isinstance(q, int) or not 1 <= q <= MAX_ORDER:
        raise UnsupportedOrder(f"BDF order {q} not supported (1..{MAX_ORDER})")
    delta = [Fraction(0)] * (q + 1)
    for l in range(1, q + 1):
        for j in range(l + 1):
            delta[j] += Fraction(math.comb(l, j) * (-1) ** j, l)
    gamma = [Fraction((-1) ** (j + 1) * math.comb(q, j)) for j in range(1, q + 1)]
    return BDFScheme(q, tuple(delta), tuple(gamma))


@dataclass
class FlowState:
    """Time index, step size and the newest-first history of positions and unknowns.

    ``u`` entries are ``(N, 4)`` arrays: three normal components and ``V``.
    """

    mesh: SurfaceMesh           # reference snapshot; its connectivity is reused
    tau: float
    n: int = 0
    xs: deque = field(default_factory=deque)
    us: deque = field(default_factory=deque)
    initial_min_det: np.ndarray | None = None

    @property
    def t(self):
        return self.n * self.tau

    @property
    def x(self):
        return self.xs[0]

    @property
    def normal(self):
        return self.us[0][:, :3]

    @property
    def V(self):
        return self.us[0][:, 3]

    def current_mesh(self):
        return self.mesh.with_nodes(self.x)

    def push(self, x, u, keep):
        self.xs.appendleft(x)
        self.us.appendleft(u)
        while len(self.xs) > keep:
            self.xs.pop()
            self.us.pop()
        self.n += 1


def initial_state(mesh: SurfaceMesh, nu0, V0, tau: float) -> FlowState:
    u0 = np.column_stack([np.asarray(nu0, float), np.asarray(V0, float)])
    state = FlowState(mesh, tau)
    state.xs.append(mesh.nodes.copy())
    state.us.append(u0)
    state.initial_min_det = mesh.geometry.sqrt_det.min(axis=1)
    return state


def extrapolate(state: FlowState, scheme: BDFScheme):
    """``sum_j gamma_j y^{n-1-j}`` for positions and unknowns."""
    q = scheme.order
    if len(state.xs) < q:
        raise IncompleteHistory(f"order {q} needs {q} history entries, have {len(state.xs)}")
    g = scheme.gamma
    if q == 1:
        return state.xs[0], state.us[0]
    x = sum(g[j] * state.xs[j] for j in range(q))
    u = sum(g[j] * state.us[j] for j in range(q))
    return x, u


@dataclass
class StepInfo:
    iterations: list
    residuals: list


def step(state: FlowState, scheme: BDFScheme, density: AnisotropyDensity,
         kinetic: KineticCoefficient, stabilized: bool = False,
         solver: SolverConfig = SolverConfig(), normalize: bool = False,
         keep: int = MAX_ORDER) -> StepInfo:
    """Advance ``state`` by one linearly implicit BDF step (in place)."""
    q = scheme.order
    tau = state.tau
    delta = scheme.delta
    x_ext, u_ext = extrapolate(state, scheme)
    mesh_ext = state.mesh.with_nodes(x_ext)
    try:
        sys = assemble_system(mesh_ext, u_ext[:, :3], u_ext[:, 3], density, kinetic, stabilized)
    except WulffFlowError as exc:
        raise type(exc)(f"step {state.n + 1}: {exc}") from exc
    hist_u = sum(delta[j] * state.us[j - 1] for j in range(1, q + 1))
    hist_x = sum(delta[j] * state.xs[j - 1] for j in range(1, q + 1))
    S = (delta[0] / tau) * sys.M + sys.A
    B = np.column_stack([sys.f1, sys.f2]) - (sys.M @ hist_u) / tau
    U, results = solve_block(S, B, solver)
    n_new = U[:, :3]
    if normalize:
        n_new = n_new / np.linalg.norm(n_new, axis=1)[:, None]
        U = np.column_stack([n_new, U[:, 3]])
    v = nodal_velocity(U[:, 3], n_new)
    x_new = (tau * v - hist_x) / delta[0]
    lengths = np.linalg.norm(n_new, axis=1)
    if np.any((lengths < GUARD_LO) | (lengths > GUARD_HI) | ~np.isfinite(lengths)):
        j = int(np.argmax(np.abs(lengths - 1)))
        raise OutOfGuardRegion(f"step {state.n + 1}: nodal |n| = {lengths[j]:.4g} at node {j}",
                               element=j)
    if not np.all(np.isfinite(x_new)):
        raise DegenerateElement(f"step {state.n + 1}: non-finite node positions")
    state.push(x_new, U, keep)
    return StepInfo([r.iterations for r in results], [r.residual for r in results])


def bootstrap(state: FlowState, q: int, density, kinetic, stabilized=False,
              solver: SolverConfig = SolverConfig(), normalize=False, on_step=None):
    """Fill the history with steps of orders ``1 .. q-1``."""
    for i in range(1, q):
        if i > len(state.xs):
            break
        info = step(state, bdf_coefficients(i), density, kinetic, stabilized, solver, normalize)
        if on_step is not None:
            on_step(state, info)
    return state


@dataclass
class StepRecord:
    step: int
    time: float
    energy: float
    min_detJ_ratio: float
    max_abs_nu_minus_1: float


@dataclass
class FlowResult:
    state: FlowState
    log: list
    completed: bool
    error: str | None = None
    iterations: list = field(default_factory=list)


def _record(state: FlowState, density) -> StepRecord:
    mesh = state.current_mesh()
    try:
        g = mesh.geometry
    except DegenerateElement:
        return StepRecord(state.n, state.t, float("nan"), 0.0,
                          float(np.max(np.abs(np.linalg.norm(state.normal, axis=1) - 1))))
    ratio = float(np.min(g.sqrt_det.min(axis=1) / state.initial_min_det))
    return StepRecord(state.n, state.t, anisotropic_energy(mesh, density), ratio,
                      float(np.max(np.abs(np.linalg.norm(state.normal, axis=1) - 1))))


def n_steps(T: float, tau: float) -> int:
    return max(0, math.ceil(T / tau - 1e-9))


def run_flow(mesh: SurfaceMesh, nu0, V0, density: AnisotropyDensity, kinetic: KineticCoefficient,
             q: int = 2, tau: float = 1e-3, T: float = 0.1, stabilized: bool = False,
             solver: SolverConfig = SolverConfig(), normalize: bool = False,
             callback: Callable | None = None, det_ratio_guard: float = 1e-10,
             raise_errors: bool = False) -> FlowResult:
    """Integrate to ``T`` with BDF-q (bootstrapped by lower orders), logging the energy per step.

    ``callback(state, record)`` is called after the initial state and after
    every accepted step.  Runtime aborts either propagate (``raise_errors``)
    or end the run with ``completed=False`` and the partial log kept.
    """
    scheme = bdf_coefficients(q)
    state = initial_state(mesh, nu0, V0, tau)
    log = [_record(state, density)]
    iters = []
    if callback is not None:
        callback(state, log[-1])
    total = n_steps(T, tau)
    try:
        while state.n < total:
            order = min(q, len(state.xs))
            info = step(state, bdf_coefficients(order) if order < q else scheme, density,
                        kinetic, stabilized, solver, normalize)
            iters.append(info.iterations)
            rec = _record(state, density)
            log.append(rec)
            if callback is not None:
                callback(state, rec)
            if not rec.min_detJ_ratio >= det_ratio_guard:
                raise DegenerateElement(f"step {state.n}: element area ratio "
                                        f"{rec.min_detJ_ratio:.3e} below {det_ratio_guard:g}")
    except WulffFlowError as exc:
        if raise_errors:
            raise
        return FlowResult(state, log, False, f"t={state.t:.6g}: {exc}", iters)
    return FlowResult(state, log, True, None, iters)
