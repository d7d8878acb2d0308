"""Curved triangular surface meshes of degree 1 or 2: reference element,
quadrature, icosphere level-set meshing, element geometry and file I/O."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.special import roots_jacobi

from .anisotropy import icosahedron
from .errors import (DegenerateElement, NotClosed, NotStarShaped, ParseError,
                     ProjectionDiverged, UnsupportedDegree)


# --- reference element ---------------------------------------------------

def triangle_quadrature(exactness: int):
    """Collapsed Gauss-Jacobi rule on the triangle (0,0),(1,0),(0,1).

    Exact for polynomials of total degree ``exactness``; weights sum to 1/2.
    """
    n = (exactness + 2) // 2
    xa, wa = roots_jacobi(n, 1.0, 0.0)   # weight (1 - x)
    xb, wb = roots_jacobi(n, 0.0, 0.0)
    a = (xa + 1) / 2
    b = (xb + 1) / 2
    A, B = np.meshgrid(a, b, indexing="ij")
    points = np.stack([A.ravel(), (B * (1 - A)).ravel()], axis=1)
    weights = (np.outer(wa, wb) / 8.0).ravel()
    return points, weights


def lagrange_basis(k: int, pts):
    """Values ``(Q, n)`` and reference gradients ``(Q, n, 2)`` of the degree-k Lagrange basis.

    Local ordering: the three vertices, then (k=2) midpoints of edges 01, 12, 20.
    """
    pts = np.atleast_2d(pts)
    x, y = pts[:, 0], pts[:, 1]
    l0, l1, l2 = 1 - x - y, x, y
    dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    if k == 1:
        phi = np.stack([l0, l1, l2], axis=1)
        dphi = np.broadcast_to(dl, (len(pts), 3, 2)).copy()
        return phi, dphi
    if k == 2:
        L = [l0, l1, l2]
        phi = [L[i] * (2 * L[i] - 1) for i in range(3)]
        dphi = [(4 * L[i] - 1)[:, None] * dl[i] for i in range(3)]
        for i, j in ((0, 1), (1, 2), (2, 0)):
            phi.append(4 * L[i] * L[j])
            dphi.append(4 * (L[i][:, None] * dl[j] + L[j][:, None] * dl[i]))
        return np.stack(phi, axis=1), np.stack(dphi, axis=1)
    raise UnsupportedDegree(f"polynomial degree {k} not supported (use 1 or 2)")


REFERENCE_NODES = {
    1: np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
    2: np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.5, 0.0], [0.5, 0.5], [0.0, 0.5]]),
}


@dataclass(frozen=True)
class ReferenceElement:
    degree: int
    quad_exactness: int
    points: np.ndarray
    weights: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray

    @property
    def n_local(self):
        return self.phi.shape[1]

    @property
    def nodes(self):
        return REFERENCE_NODES[self.degree]


def build_reference_element(k: int, quad_exactness: int | None = None) -> ReferenceElement:
    if k not in (1, 2):
        raise UnsupportedDegree(f"polynomial degree {k} not supported (use 1 or 2)")
    if quad_exactness is None:
        quad_exactness = 2 * k + 2
    if quad_exactness < 2 * k + 2:
        raise ValueError(f"quadrature exactness must be >= {2 * k + 2}")
    pts, wts = triangle_quadrature(quad_exactness)
    phi, dphi = lagrange_basis(k, pts)
    return ReferenceElement(k, quad_exactness, pts, wts, phi, dphi)


# --- level sets ----------------------------------------------------------

@dataclass
class LevelSet:
    """Scalar field with gradient and Hessian, vectorised over points ``(..., 3)``."""

    value: callable
    gradient: callable
    hessian: callable = None
    label: str = "levelset"


def sphere_levelset(radius: float = 1.0) -> LevelSet:
    return LevelSet(lambda x: np.sum(x * x, axis=-1) - radius**2,
                    lambda x: 2 * x,
                    lambda x: np.broadcast_to(2 * np.eye(3), x.shape + (3,)),
                    label=f"sphere:{radius}")


def ellipsoid_levelset(axes) -> LevelSet:
    """``sum_i x_i^2 / a_i^2 - 1``."""
    c = 1.0 / np.asarray(axes, float) ** 2
    return LevelSet(lambda x: np.sum(c * x * x, axis=-1) - 1.0,
                    lambda x: 2 * c * x,
                    lambda x: np.broadcast_to(2 * np.diag(c), x.shape + (3,)),
                    label=f"ellipsoid:{','.join(map(str, axes))}")


def project_radially(levelset: LevelSet, x, tol: float = 1e-12, max_iter: int = 50):
    """Move each point along its ray from the origin onto ``levelset == 0`` by Newton."""
    x = np.atleast_2d(np.asarray(x, float))
    d = x / np.linalg.norm(x, axis=1)[:, None]
    s = np.linalg.norm(x, axis=1)
    for _ in range(max_iter):
        p = s[:, None] * d
        f = levelset.value(p)
        if np.all(np.abs(f) <= tol):
            return p
        df = np.einsum("ni,ni->n", levelset.gradient(p), d)
        if np.any(df <= 0):
            raise NotStarShaped("level set not increasing along a ray from the origin")
        s = s - f / df
        if np.any(s <= 0):
            raise NotStarShaped("radial projection crossed the origin")
    p = s[:, None] * d
    if np.max(np.abs(levelset.value(p))) > tol:
        raise ProjectionDiverged(
            f"radial Newton projection failed after {max_iter} iterations "
            f"(residual {np.max(np.abs(levelset.value(p))):.3e})")
    return p


# --- surface mesh --------------------------------------------------------

@dataclass
class SurfaceMesh:
    """Nodes ``(N, 3)``, elements ``(E, 3 or 6)`` and the reference element.

    Instances are treated as immutable snapshots: moving a surface means
    building a new mesh with :meth:`with_nodes`.
    """

    nodes: np.ndarray
    elements: np.ndarray
    reference: ReferenceElement
    levelset: LevelSet | None = None
    _cache: dict = field(default_factory=dict, repr=False)
    # connectivity-derived data shared by all snapshots with the same elements
    topology: dict = field(default_factory=dict, repr=False)

    @property
    def degree(self):
        return self.reference.degree

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elements(self):
        return len(self.elements)

    def with_nodes(self, nodes, keep_levelset: bool = False):
        nodes = np.asarray(nodes, float)
        if nodes.shape != self.nodes.shape:
            raise ValueError(f"node array shape {nodes.shape} != {self.nodes.shape}")
        return SurfaceMesh(nodes, self.elements, self.reference,
                           self.levelset if keep_levelset else None, topology=self.topology)

    @cached_property
    def vertex_triangles(self):
        return self.elements[:, :3]

    @cached_property
    def edges(self):
        """Unique undirected vertex edges ``(nE, 2)``."""
        t = self.vertex_triangles
        e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def n_vertices(self):
        return len(np.unique(self.vertex_triangles))

    def euler_characteristic(self):
        return self.n_vertices - len(self.edges) + self.n_elements

    def check_closed_oriented(self):
        """Raise :class:`NotClosed` unless each directed edge is matched by exactly one reversed edge."""
        t = self.vertex_triangles
        directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        und = np.sort(directed, axis=1)
        uniq, counts = np.unique(und, axis=0, return_counts=True)
        if np.any(counts != 2):
            bad = uniq[np.argmax(counts != 2)]
            raise NotClosed(f"edge {tuple(bad)} shared by {counts[np.argmax(counts != 2)]} element(s)",
                            edge=tuple(int(v) for v in bad))
        uniq_dir, dcounts = np.unique(directed, axis=0, return_counts=True)
        if np.any(dcounts != 1):
            bad = uniq_dir[np.argmax(dcounts != 1)]
            raise NotClosed(f"inconsistent orientation across edge {tuple(bad)}",
                            edge=tuple(int(v) for v in bad))

    def mesh_width(self):
        """Max over elements of the largest pairwise vertex distance."""
        P = self.nodes[self.vertex_triangles]
        d = [np.linalg.norm(P[:, i] - P[:, j], axis=1) for i, j in ((0, 1), (1, 2), (2, 0))]
        return float(np.max(d))

    # geometry at quadrature points, cached per snapshot
    @property
    def geometry(self) -> "ElementGeometry":
        if "geometry" not in self._cache:
            self._cache["geometry"] = compute_geometry(self)
        return self._cache["geometry"]

    def area(self):
        return float(self.geometry.dA.sum())

    def outward_score(self):
        """Mean of ``x . nu_geo`` over quadrature points; positive for outward orientation."""
        g = self.geometry
        return float(np.mean(np.einsum("eqi,eqi->eq", g.x, g.normal)))


@dataclass
class ElementGeometry:
    x: np.ndarray        # (E, Q, 3) positions
    sqrt_det: np.ndarray  # (E, Q) area element of the reference map
    dA: np.ndarray       # (E, Q) quadrature weight times area element
    normal: np.ndarray   # (E, Q, 3) geometric unit normal
    grad: np.ndarray     # (E, Q, n, 3) tangential gradients of local basis functions


def compute_geometry(mesh: SurfaceMesh, min_det: float | None = None) -> ElementGeometry:
    ref = mesh.reference
    X = mesh.nodes[mesh.elements]                      # (E, n, 3)
    J = np.tensordot(X, ref.dphi, axes=(1, 1)).transpose(0, 2, 1, 3)   # (E, Q, 3, 2)
    G = np.swapaxes(J, -1, -2) @ J
    det = G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0]
    sq = np.sqrt(np.maximum(det, 0.0))
    h = mesh.mesh_width()
    thresh = 1e-14 * h * h if min_det is None else min_det
    if np.any(~(sq > thresh)):
        e = int(np.argwhere(~(sq > thresh))[0, 0])
        raise DegenerateElement(f"element {e} has metric determinant {sq[e].min():.3e}",
                                element=e)
    Ginv = np.empty_like(G)
    Ginv[..., 0, 0] = G[..., 1, 1] / det
    Ginv[..., 1, 1] = G[..., 0, 0] / det
    Ginv[..., 0, 1] = Ginv[..., 1, 0] = -G[..., 0, 1] / det
    n = np.cross(J[..., 0], J[..., 1])
    n /= np.linalg.norm(n, axis=-1)[..., None]
    grad = np.swapaxes((J @ Ginv) @ np.swapaxes(ref.dphi, 1, 2), -1, -2)  # (E, Q, n, 3)
    x = np.tensordot(X, ref.phi, axes=(1, 1)).transpose(0, 2, 1)
    return ElementGeometry(x, sq, sq * ref.weights, n, grad)


def element_geometry(mesh: SurfaceMesh, element_id: int, qp: int):
    """Geometry at a single quadrature point (convenience view of :attr:`SurfaceMesh.geometry`)."""
    g = mesh.geometry
    return {"position": g.x[element_id, qp], "sqrt_det": g.sqrt_det[element_id, qp],
            "normal": g.normal[element_id, qp], "grad": g.grad[element_id, qp]}


# --- construction --------------------------------------------------------

def _subdivide(verts, faces):
    edge_mid = {}
    verts = list(verts)
    new = []

    def mid(a, b):
        key = (a, b) if a < b else (b, a)
        if key not in edge_mid:
            edge_mid[key] = len(verts)
            m = (verts[a] + verts[b]) / 2
            verts.append(m / np.linalg.norm(m))
        return edge_mid[key]

    for a, b, c in faces:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
    return np.array(verts), np.array(new)


def icosphere(refinement: int):
    v, f = icosahedron()
    for _ in range(refinement):
        v, f = _subdivide(v, f)
    return v, f


def add_midpoints(nodes, triangles):
    """Append one node per edge at the straight midpoint; return ``(nodes, P2 elements, new-node mask)``."""
    t = np.asarray(triangles)
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    key = np.sort(e, axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.ravel()
    mids = (nodes[uniq[:, 0]] + nodes[uniq[:, 1]]) / 2
    nE = len(t)
    mid_ids = len(nodes) + inv.reshape(3, nE).T
    elements = np.concatenate([t, mid_ids], axis=1)
    all_nodes = np.concatenate([nodes, mids])
    mask = np.zeros(len(all_nodes), bool)
    mask[len(nodes):] = True
    return all_nodes, elements, mask


def generate_levelset_mesh(levelset: LevelSet, refinement: int, k: int = 2,
                           quad_exactness: int | None = None) -> SurfaceMesh:
    """Icosphere subdivided ``refinement`` times with every node projected radially onto the level set."""
    ref = build_reference_element(k, quad_exactness)
    v, f = icosphere(refinement)
    if k == 2:
        v, f, _ = add_midpoints(v, f)
    nodes = project_radially(levelset, v)
    mesh = SurfaceMesh(nodes, f, ref, levelset)
    if mesh.outward_score() <= 0:
        raise NotStarShaped("generated mesh is not outward oriented")
    return mesh


def mesh_from_triangles(nodes, triangles, k: int = 1, quad_exactness=None) -> SurfaceMesh:
    ref = build_reference_element(k, quad_exactness)
    nodes = np.asarray(nodes, float)
    tris = np.asarray(triangles, int)
    if k == 2:
        nodes, tris, _ = add_midpoints(nodes, tris)
    mesh = SurfaceMesh(nodes, tris, ref)
    mesh.check_closed_oriented()
    return mesh


# --- file I/O ------------------------------------------------------------

def load_off(path, k: int = 1) -> SurfaceMesh:
    """Read a closed triangle mesh from an OFF file."""
    lines = []
    for i, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        s = raw.split("#", 1)[0].strip()
        if s:
            lines.append((i, s))
    if not lines or not lines[0][1].startswith("OFF"):
        raise ParseError("missing OFF header", line=lines[0][0] if lines else 1)
    head = lines[0][1][3:].split()
    pos = 1
    if not head:
        head, pos = lines[1][1].split(), 2
    try:
        nv, nf = int(head[0]), int(head[1])
    except (ValueError, IndexError):
        raise ParseError("bad count line", line=lines[pos - 1][0]) from None
    nodes, tris = [], []
    for j in range(nv):
        ln, s = lines[pos + j] if pos + j < len(lines) else (lines[-1][0] + 1, "")
        try:
            nodes.append([float(v) for v in s.split()[:3]])
            if len(nodes[-1]) != 3:
                raise ValueError
        except ValueError:
            raise ParseError("expected three vertex coordinates", line=ln) from None
    pos += nv
    for j in range(nf):
        ln, s = lines[pos + j] if pos + j < len(lines) else (lines[-1][0] + 1, "")
        try:
            parts = [int(v) for v in s.split()]
        except ValueError:
            raise ParseError("bad face record", line=ln) from None
        if not parts or parts[0] != 3 or len(parts) < 4:
            raise ParseError("only triangular faces are supported", line=ln)
        if max(parts[1:4]) >= nv or min(parts[1:4]) < 0:
            raise ParseError("face index out of range", line=ln)
        tris.append(parts[1:4])
    return mesh_from_triangles(np.array(nodes), np.array(tris), k=k)


def export_mesh(mesh: SurfaceMesh, path, fmt: str | None = None, point_data: dict | None = None):
    """Write OBJ or legacy-VTK polydata; degree-2 elements become four flat subtriangles."""
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    tris = visual_triangles(mesh)
    if fmt == "obj":
        with path.open("w") as fh:
            for p in mesh.nodes:
                fh.write("v {:.17g} {:.17g} {:.17g}\n".format(*p))
            for t in tris + 1:
                fh.write("f {} {} {}\n".format(*t))
    elif fmt == "vtk":
        with path.open("w") as fh:
            fh.write("# vtk DataFile Version 3.0\nwulff_flow surface\nASCII\nDATASET POLYDATA\n")
            fh.write(f"POINTS {mesh.n_nodes} double\n")
            for p in mesh.nodes:
                fh.write("{:.17g} {:.17g} {:.17g}\n".format(*p))
            fh.write(f"POLYGONS {len(tris)} {4 * len(tris)}\n")
            for t in tris:
                fh.write("3 {} {} {}\n".format(*t))
            if point_data:
                fh.write(f"POINT_DATA {mesh.n_nodes}\n")
                for name, arr in point_data.items():
                    arr = np.asarray(arr, float)
                    if arr.ndim == 1:
                        fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                        fh.writelines(f"{v:.17g}\n" for v in arr)
                    else:
                        fh.write(f"VECTORS {name} double\n")
                        fh.writelines("{:.17g} {:.17g} {:.17g}\n".format(*v) for v in arr)
    else:
        raise ValueError(f"unsupported export format {fmt!r}")


def write_points_obj(path, points, triangles):
    with Path(path).open("w") as fh:
        for p in points:
            fh.write("v {:.17g} {:.17g} {:.17g}\n".format(*p))
        for t in np.asarray(triangles) + 1:
            fh.write("f {} {} {}\n".format(*t))


def load_obj(path, k: int = 1) -> SurfaceMesh:
    nodes, tris = [], []
    for i, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        parts = raw.split()
        if not parts:
            continue
        try:
            if parts[0] == "v":
                nodes.append([float(v) for v in parts[1:4]])
            elif parts[0] == "f":
                tris.append([int(v.split("/")[0]) - 1 for v in parts[1:4]])
        except ValueError:
            raise ParseError("bad OBJ record", line=i) from None
    return mesh_from_triangles(np.array(nodes), np.array(tris), k=k)


def visual_triangles(mesh: SurfaceMesh):
    e = mesh.elements
    if mesh.degree == 1:
        return e
    return np.concatenate([e[:, [0, 3, 5]], e[:, [3, 1, 4]], e[:, [5, 4, 2]], e[:, [3, 4, 5]]])
