"""Run orchestration: configs, error norms, convergence studies, shape export."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .anisotropy import (AnisotropyDensity, Ellipsoidal, InverseGamma, density_from_key,
                         frank_and_wulff, kinetic_from_key)
from .assembly import assemble_plain_mass, h1_stiffness
from .bdf import MAX_ORDER, FlowResult, n_steps, run_flow
from .errors import ConfigError, SizeMismatch, TimeMismatch, WulffFlowError
from .exact import BLOWUP_TIME, SelfSimilarEllipsoid, reference_trajectories
from .geometry import discrete_anisotropic_mean_curvature, interpolated_normal_field
from .mesh import (SurfaceMesh, export_mesh, generate_levelset_mesh, load_obj, load_off,
                   write_points_obj)
from .solver import SolverConfig

ENERGY_HEADER = ["step", "time", "energy", "min_detJ_ratio", "max_abs_nu_minus_1"]
ERROR_FIELDS = ["X_L2", "X_H1", "nu_L2", "nu_H1", "V_L2", "V_H1"]
# the Adams reference sub-steps coarse tau so it stays close to the exact surface near extinction
REFERENCE_MAX_STEP = 1e-4


# --- configuration -------------------------------------------------------

@dataclass
class RunConfig:
    density: str = "isotropic"
    kinetic: str = "one"
    geometry: dict = field(default_factory=lambda: {"type": "ellipsoid", "eps": 1.0})
    degree: int = 2
    refinement: int = 3
    order: int = 2
    tau: float = 1e-3
    T: float = 0.1
    stabilized: bool = False
    normalize: bool = False
    output: str = "out"
    snapshot_times: list = field(default_factory=list)
    snapshot_format: str = "vtk"
    solver: dict = field(default_factory=dict)
    dump_matrices: bool = False

    def validate(self):
        def bad(name, msg):
            raise ConfigError(f"{name}: {msg}")

        if not isinstance(self.tau, (int, float)) or not self.tau > 0:
            bad("tau", f"must be positive, got {self.tau!r}")
        if not isinstance(self.T, (int, float)) or not self.T >= 0:
            bad("T", f"must be non-negative, got {self.T!r}")
        if self.order not in range(1, MAX_ORDER + 1):
            bad("order", f"must be in 1..{MAX_ORDER}, got {self.order!r}")
        if self.degree not in (1, 2):
            bad("degree", f"must be 1 or 2, got {self.degree!r}")
        if not isinstance(self.refinement, int) or not 0 <= self.refinement <= 7:
            bad("refinement", f"must be an integer in 0..7, got {self.refinement!r}")
        if self.snapshot_format not in ("vtk", "obj"):
            bad("snapshot_format", f"must be 'vtk' or 'obj', got {self.snapshot_format!r}")
        gtype = self.geometry.get("type")
        if gtype == "ellipsoid":
            eps = self.geometry.get("eps", 1.0)
            if not isinstance(eps, (int, float)) or not eps > 0:
                bad("geometry.eps", f"must be positive, got {eps!r}")
            if self.T >= BLOWUP_TIME and self.is_self_similar():
                bad("T", f"must be below {BLOWUP_TIME} for the self-similar family")
        elif gtype in ("off", "obj"):
            if "path" not in self.geometry:
                bad("geometry.path", "required for mesh-file geometry")
        else:
            bad("geometry.type", f"must be 'ellipsoid', 'off' or 'obj', got {gtype!r}")
        try:
            self.make_density()
        except (ValueError, WulffFlowError) as exc:
            bad("density", str(exc))
        try:
            self.make_kinetic()
        except (ValueError, WulffFlowError) as exc:
            bad("kinetic", str(exc))
        try:
            self.make_solver()
        except (TypeError, ValueError) as exc:
            bad("solver", str(exc))
        return self

    def make_density(self) -> AnisotropyDensity:
        return density_from_key(self.density)

    def make_kinetic(self):
        return kinetic_from_key(self.kinetic, self.make_density())

    def make_solver(self) -> SolverConfig:
        return SolverConfig(**self.solver)

    def is_self_similar(self) -> bool:
        """Ellipsoid start with the matching ellipsoidal density and ``beta = 1/gamma``."""
        if self.geometry.get("type") != "ellipsoid":
            return False
        eps = float(self.geometry.get("eps", 1.0))
        try:
            dens = self.make_density()
            kin = self.make_kinetic()
        except (ValueError, WulffFlowError):
            return False
        if not isinstance(dens, Ellipsoidal) or not isinstance(kin, InverseGamma):
            return False
        return bool(np.allclose(dens.G, np.diag([1.0, eps ** 2, eps ** 2]), rtol=1e-12, atol=1e-14))

    def replace(self, **changes) -> "RunConfig":
        data = asdict(self)
        data.update(changes)
        return RunConfig(**data)


def load_config(path) -> RunConfig:
    try:
        import tomllib as tomli
    except ImportError:     # Python < 3.11
        import tomli

    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config: file {path} not found") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config: {exc}") from None
    return config_from_dict(data, base=Path(path).parent)


def config_from_dict(data: dict, base: Path | None = None) -> RunConfig:
    known = set(RunConfig.__dataclass_fields__)
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown field")
    data = dict(data)
    if "geometry" in data:
        geo = dict(data["geometry"])
        if base is not None and "path" in geo and not Path(geo["path"]).is_absolute():
            geo["path"] = str(base / geo["path"])
        data["geometry"] = geo
    return RunConfig(**data).validate()


# --- setup ---------------------------------------------------------------

def build_initial(config: RunConfig):
    """Initial mesh and nodal ``(nu, V)`` with ``V = -H_gamma / beta(nu)``."""
    density = config.make_density()
    kinetic = config.make_kinetic()
    geo = config.geometry
    if geo["type"] == "ellipsoid":
        sol = SelfSimilarEllipsoid(float(geo.get("eps", 1.0)))
        mesh = generate_levelset_mesh(sol.levelset(0.0), config.refinement, config.degree)
        if config.is_self_similar():
            nu, V = sol.normal_and_velocity(mesh.nodes, 0.0)
            return mesh, nu, V
    else:
        loader = load_off if geo["type"] == "off" else load_obj
        mesh = loader(geo["path"], k=config.degree)
    nu = interpolated_normal_field(mesh)
    H = discrete_anisotropic_mean_curvature(mesh, nu, density)
    beta, _ = kinetic(nu)
    return mesh, nu, -H / beta


# --- error norms ---------------------------------------------------------

@dataclass
class ErrorReport:
    h: float
    tau: float
    times: list = field(default_factory=list)
    rows: list = field(default_factory=list)       # dicts keyed by ERROR_FIELDS

    def add(self, t, row):
        if not all(math.isfinite(v) for v in row.values()):
            raise WulffFlowError(f"non-finite error norm at t={t}")
        self.times.append(t)
        self.rows.append(row)

    @property
    def maxima(self):
        return {k: max((r[k] for r in self.rows), default=0.0) for k in ERROR_FIELDS}


def _norms(M, K, e):
    e = e if e.ndim == 2 else e[:, None]
    l2 = float(np.sqrt(max(np.sum(e * (M @ e)), 0.0)))
    semi = float(np.sum(e * (K @ e)))
    return l2, float(np.sqrt(l2 ** 2 + max(semi, 0.0)))


def error_norms(mesh: SurfaceMesh, x, nu, V, x_ref, nu_ref, V_ref, t=None, t_ref=None):
    """L2 and H1 errors of ``(x, nu, V)`` on the surface interpolating ``x_ref``."""
    if t is not None and t_ref is not None and not math.isclose(t, t_ref, rel_tol=1e-12, abs_tol=1e-12):
        raise TimeMismatch(f"numerical time {t} differs from reference time {t_ref}")
    N = mesh.n_nodes
    for name, arr, shape in (("x", x, (N, 3)), ("nu", nu, (N, 3)), ("V", V, (N,)),
                             ("x_ref", x_ref, (N, 3)), ("nu_ref", nu_ref, (N, 3)),
                             ("V_ref", V_ref, (N,))):
        if np.shape(arr) != shape:
            raise SizeMismatch(f"{name} has shape {np.shape(arr)}, expected {shape}")
    ref_mesh = mesh.with_nodes(np.asarray(x_ref, float))
    M = assemble_plain_mass(ref_mesh)
    K = h1_stiffness(ref_mesh)
    out = {}
    for key, a, b in (("X", x, x_ref), ("nu", nu, nu_ref), ("V", V, V_ref)):
        out[f"{key}_L2"], out[f"{key}_H1"] = _norms(M, K, np.asarray(a, float) - np.asarray(b, float))
    return out


def eoc(errors, sizes):
    """``log(e_i / e_{i+1}) / log(s_i / s_{i+1})`` for consecutive entries."""
    e = np.asarray(errors, float)
    s = np.asarray(sizes, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(e[:-1] / e[1:]) / np.log(s[:-1] / s[1:])


# --- runs ----------------------------------------------------------------

@dataclass
class RunOutcome:
    config: RunConfig
    result: FlowResult
    errors: ErrorReport | None
    h: float
    wall_time: float
    mesh: SurfaceMesh

    @property
    def completed(self):
        return self.result.completed


def _snapshot_due(t, tau, times):
    return [s for s in times if abs(t - s) <= 0.5 * tau + 1e-14]


def _write_energy(path, log):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ENERGY_HEADER)
        for r in log:
            w.writerow([r.step, repr(r.time), repr(r.energy), repr(r.min_detJ_ratio),
                        repr(r.max_abs_nu_minus_1)])


def _write_errors(path, report: ErrorReport):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "time"] + ERROR_FIELDS)
        for i, (t, row) in enumerate(zip(report.times, report.rows)):
            w.writerow([i, repr(t)] + [repr(row[k]) for k in ERROR_FIELDS])


def mesh_quality(mesh: SurfaceMesh) -> float:
    """Smallest ``2 r_in / r_circ`` over the flat vertex triangles (1 for equilateral)."""
    from .mesh import visual_triangles
    P = mesh.nodes[visual_triangles(mesh)]
    a = np.linalg.norm(P[:, 1] - P[:, 2], axis=1)
    b = np.linalg.norm(P[:, 2] - P[:, 0], axis=1)
    c = np.linalg.norm(P[:, 0] - P[:, 1], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = (b + c - a) * (c + a - b) * (a + b - c) / (a * b * c)
    return float(np.min(q)) if np.all(np.isfinite(q)) else float("nan")


def execute(config: RunConfig, out_dir=None, with_errors: bool | None = None,
            reference_order: int | None = None,
            reference_max_step: float = REFERENCE_MAX_STEP) -> RunOutcome:
    """Run one configuration, optionally writing artifacts and measuring errors.

    Errors against the Adams reference are computed whenever the config is
    the self-similar family (or ``with_errors`` forces it).  The reference is
    integrated with steps of at most ``reference_max_step`` and sampled at the
    flow's time levels.
    """
    config.validate()
    t_start = time.perf_counter()
    mesh, nu0, V0 = build_initial(config)
    density, kinetic = config.make_density(), config.make_kinetic()
    if with_errors is None:
        with_errors = config.is_self_similar()
    report = traj = sol = None
    if with_errors:
        if not config.is_self_similar():
            raise ConfigError("geometry: error norms need the self-similar ellipsoid setup")
        sol = SelfSimilarEllipsoid(float(config.geometry.get("eps", 1.0)))
        sub = max(1, math.ceil(config.tau / reference_max_step - 1e-9))
        steps = n_steps(config.T, config.tau)
        traj = reference_trajectories(sol, mesh.nodes, config.tau / sub, steps * config.tau,
                                      reference_order or config.order)[::sub]
        report = ErrorReport(mesh.mesh_width(), config.tau)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    pending = sorted(set(float(s) for s in config.snapshot_times))

    def callback(state, rec):
        if report is not None:
            x_ref = traj[state.n]
            # reference nodes sit O(tau^q) off the exact surface, so the exact fields are evaluated there
            nu_ref, V_ref = sol.normal_and_velocity(x_ref, state.t, tol=1e-3)
            report.add(state.t, error_norms(mesh, state.x, state.normal, state.V, x_ref, nu_ref, V_ref))
        if out is not None:
            for s in _snapshot_due(state.t, config.tau, pending):
                pending.remove(s)
                export_mesh(state.current_mesh(), out / f"snap_{s:.6f}.{config.snapshot_format}",
                            point_data={"V": state.V, "normal": state.normal})
        if out is not None and config.dump_matrices and state.n == 0:
            from .assembly import assemble_system, write_matrix_market
            sysm = assemble_system(mesh, nu0, V0, density, kinetic, config.stabilized)
            write_matrix_market(out / "mass.mtx", sysm.M)
            write_matrix_market(out / "stiffness.mtx", sysm.A)

    result = run_flow(mesh, nu0, V0, density, kinetic, q=config.order, tau=config.tau, T=config.T,
                      stabilized=config.stabilized, solver=config.make_solver(),
                      normalize=config.normalize, callback=callback)
    wall = time.perf_counter() - t_start
    outcome = RunOutcome(config, result, report, mesh.mesh_width(), wall, mesh)
    if out is not None:
        _write_energy(out / "energy.csv", result.log)
        if report is not None:
            _write_errors(out / "errors.csv", report)
        (out / "diag.json").write_text(json.dumps(diagnostics(outcome), indent=2))
    return outcome


def diagnostics(outcome: RunOutcome) -> dict:
    log = outcome.result.log
    iters = outcome.result.iterations
    final_mesh = outcome.result.state.current_mesh()
    quality = mesh_quality(final_mesh)
    d = {
        "config": asdict(outcome.config),
        "completed": outcome.completed,
        "error": outcome.result.error,
        "steps": log[-1].step,
        "planned_steps": n_steps(outcome.config.T, outcome.config.tau),
        "final_time": log[-1].time,
        "wall_time_s": outcome.wall_time,
        "n_nodes": outcome.mesh.n_nodes,
        "n_elements": outcome.mesh.n_elements,
        "mesh_width": outcome.h,
        "initial_energy": log[0].energy,
        "final_energy": log[-1].energy,
        "min_detJ_ratio": min(r.min_detJ_ratio for r in log),
        "max_abs_nu_minus_1": max(r.max_abs_nu_minus_1 for r in log),
        "final_mesh_quality": quality,
        "max_solver_iterations": int(max((max(i) for i in iters), default=0)),
    }
    if outcome.errors is not None:
        d["error_maxima"] = outcome.errors.maxima
    return _json_safe(d)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def cmd_run(config: RunConfig, out_dir=None) -> RunOutcome:
    return execute(config, out_dir if out_dir is not None else config.output)


# --- convergence studies -------------------------------------------------

@dataclass
class StudyRow:
    label: str
    h: float
    tau: float
    completed: bool
    maxima: dict
    eoc: dict = field(default_factory=dict)
    note: str = ""


def _study(configs, labels, sizes, expected, out_dir, name):
    rows = []
    for cfg, lab in zip(configs, labels):
        o = execute(cfg, None, with_errors=True)
        maxima = o.errors.maxima if o.completed else {k: float("nan") for k in ERROR_FIELDS}
        rows.append(StudyRow(lab, o.h, cfg.tau, o.completed, maxima,
                             note="" if o.completed else f"aborted: {o.result.error}"))
    ok = [r for r in rows if r.completed]
    s = [sizes(r) for r in ok]
    for k in ERROR_FIELDS:
        rates = eoc([r.maxima[k] for r in ok], s) if len(ok) > 1 else []
        for r, p in zip(ok[1:], rates):
            r.eoc[k] = float(p)
    for r in ok[1:]:
        if expected is not None and r.eoc.get("X_H1", expected) < 0.5 * expected:
            r.note = "flattening: error floor from the other discretisation parameter"
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_eoc_table(out / "eoc.csv", rows, name)
    return rows


def write_eoc_table(path, rows, name="level"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([name, "h", "tau", "completed"] + ERROR_FIELDS
                   + [f"eoc_{k}" for k in ERROR_FIELDS] + ["note"])
        for r in rows:
            w.writerow([r.label, repr(r.h), repr(r.tau), r.completed]
                       + [repr(r.maxima[k]) for k in ERROR_FIELDS]
                       + [repr(r.eoc[k]) if k in r.eoc else "" for k in ERROR_FIELDS] + [r.note])


def cmd_converge_space(config: RunConfig, levels, tau: float, out_dir=None):
    if len(levels) < 3:
        raise ConfigError("levels: at least three refinement levels are required")
    if not config.is_self_similar():
        raise ConfigError("geometry: convergence studies need the self-similar ellipsoid setup")
    cfgs = [config.replace(refinement=int(l), tau=float(tau)).validate() for l in levels]
    expected = float(config.degree) if config.degree >= 2 else None
    return _study(cfgs, [str(l) for l in levels], lambda r: r.h, expected, out_dir, "level")


def cmd_converge_time(config: RunConfig, taus, level: int, out_dir=None):
    if len(taus) < 3:
        raise ConfigError("taus: at least three step sizes are required")
    if not config.is_self_similar():
        raise ConfigError("geometry: convergence studies need the self-similar ellipsoid setup")
    cfgs = [config.replace(refinement=int(level), tau=float(t)).validate() for t in taus]
    return _study(cfgs, [repr(float(t)) for t in taus], lambda r: r.tau, float(config.order),
                  out_dir, "tau")


def cmd_compare_stabilization(config: RunConfig, out_dir=None):
    """Run with and without the stabilised stiffness; write both logs side by side."""
    out = Path(out_dir if out_dir is not None else config.output)
    outcomes = {}
    for flag, sub in ((False, "unstabilized"), (True, "stabilized")):
        outcomes[sub] = execute(config.replace(stabilized=flag), out / sub, with_errors=False)
    plain, stab = outcomes["unstabilized"].result.log, outcomes["stabilized"].result.log
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "stabilization.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "time", "energy_unstabilized", "energy_stabilized",
                    "min_detJ_ratio_unstabilized", "min_detJ_ratio_stabilized"])
        for i in range(max(len(plain), len(stab))):
            a = plain[i] if i < len(plain) else None
            b = stab[i] if i < len(stab) else None
            ref = a or b
            w.writerow([ref.step, repr(ref.time),
                        repr(a.energy) if a else "", repr(b.energy) if b else "",
                        repr(a.min_detJ_ratio) if a else "", repr(b.min_detJ_ratio) if b else ""])
    summary = {k: {"completed": o.completed, "error": o.result.error,
                   "steps": o.result.log[-1].step, "final_energy": o.result.log[-1].energy,
                   "min_detJ_ratio": min(r.min_detJ_ratio for r in o.result.log),
                   "final_mesh_quality": mesh_quality(o.result.state.current_mesh())}
               for k, o in outcomes.items()}
    (out / "stabilization.json").write_text(json.dumps(_json_safe(summary), indent=2))
    return outcomes


def cmd_wulff(density_key: str, out_dir, grid_resolution: int = 16, dual_resolution: int = 32):
    try:
        density = density_from_key(density_key)
    except ValueError as exc:
        raise ConfigError(f"density: {exc}") from None
    frank, wulff, tris = frank_and_wulff(density, grid_resolution, dual_resolution)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_points_obj(out / "frank.obj", frank, tris)
    write_points_obj(out / "wulff.obj", wulff, tris)
    return frank, wulff, tris
