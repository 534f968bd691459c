"""TPFA-admissible meshes in one and two space dimensions.

A :class:`Mesh` stores everything the two-point flux scheme needs as flat
numpy arrays: cell measures and points, and for every edge its measure,
the distances ``d(x_K, sigma)`` from the adjacent cell points, the distance
``d_sigma`` used in the transmissibility ``tau = m(sigma) / d_sigma``, the
outward unit normal of the first adjacent cell and the measure of its dual
cell (full diamond for interior edges, half diamond on the boundary).

Edge ``j`` is interior iff ``edge_cells[j, 1] >= 0``. In 1D edges are points
with unit measure, so ``tau = 1 / d_sigma``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import InadmissibleMeshError, InvalidArgumentError, MeshParseError

ORTHO_TOL = 1e-10
# cosine of the largest triangle angle must stay below this to be admissible
ACUTE_TOL = 1e-10


@dataclass(frozen=True)
class Cell:
    id: int
    measure: float
    center: np.ndarray


@dataclass(frozen=True)
class Edge:
    id: int
    measure: float
    cells: tuple  # (K,) for boundary edges, (K, L) for interior ones
    d_sigma: float
    tau: float
    normal: np.ndarray  # outward of cells[0]
    dual_measure: float

    @property
    def is_boundary(self) -> bool:
        return len(self.cells) == 1


class Mesh:
    def __init__(self, dim, cell_measure, centers, edge_cells, edge_measure,
                 edge_dist, normals, dual_measure, total_measure, edge_nodes=None,
                 nodes=None, triangles=None):
        self.dim = dim
        self.cell_measure = np.asarray(cell_measure, dtype=float)
        self.centers = np.asarray(centers, dtype=float).reshape(len(self.cell_measure), dim)
        self.edge_cells = np.asarray(edge_cells, dtype=np.int64)
        self.edge_measure = np.asarray(edge_measure, dtype=float)
        # distances d(x_K, sigma) for the first / second adjacent cell (nan on boundary)
        self.edge_dist = np.asarray(edge_dist, dtype=float)
        self.normals = np.asarray(normals, dtype=float).reshape(len(self.edge_measure), dim)
        self.dual_measure = np.asarray(dual_measure, dtype=float)
        self.total_measure = float(total_measure)
        self.edge_nodes = edge_nodes
        self.nodes = nodes
        self.triangles = triangles

        interior = self.edge_cells[:, 1] >= 0
        K = self.edge_cells[:, 0]
        L = self.edge_cells[:, 1]
        d_sigma = np.where(interior, 0.0, self.edge_dist[:, 0])
        if interior.any():
            d_sigma[interior] = np.linalg.norm(self.centers[L[interior]] - self.centers[K[interior]], axis=1)
        self.d_sigma = d_sigma
        self.tau = self.edge_measure / self.d_sigma
        self.interior = interior

        self.int_edges = np.flatnonzero(interior)
        self.ext_edges = np.flatnonzero(~interior)
        self.int_K = K[self.int_edges]
        self.int_L = L[self.int_edges]
        self.int_tau = self.tau[self.int_edges]
        self.ext_K = K[self.ext_edges]
        self.ext_tau = self.tau[self.ext_edges]

        for arr in vars(self).values():
            if isinstance(arr, np.ndarray):
                arr.setflags(write=False)

    @property
    def n_cells(self) -> int:
        return len(self.cell_measure)

    @property
    def n_edges(self) -> int:
        return len(self.edge_measure)

    @property
    def n_boundary_edges(self) -> int:
        return len(self.ext_edges)

    @cached_property
    def cell_edges(self) -> list:
        """E_K: edge ids adjacent to each cell."""
        out = [[] for _ in range(self.n_cells)]
        for j, (k, l) in enumerate(self.edge_cells):
            out[k].append(j)
            if l >= 0:
                out[l].append(j)
        return [np.array(e, dtype=np.int64) for e in out]

    def cell(self, i: int) -> Cell:
        return Cell(i, float(self.cell_measure[i]), self.centers[i])

    def edge(self, j: int) -> Edge:
        k, l = self.edge_cells[j]
        cells = (int(k),) if l < 0 else (int(k), int(l))
        return Edge(j, float(self.edge_measure[j]), cells, float(self.d_sigma[j]),
                    float(self.tau[j]), self.normals[j], float(self.dual_measure[j]))

    @property
    def h(self) -> float:
        """Mesh size: largest cell diameter."""
        if self.dim == 1:
            return float(self.cell_measure.max())
        tri = self.nodes[self.triangles]
        lens = np.linalg.norm(tri - np.roll(tri, 1, axis=1), axis=2)
        return float(lens.max())

    def split_values(self, v):
        """Split a cell+boundary vector into (cell part, boundary-edge part)."""
        v = np.asarray(v, dtype=float)
        n, nb = self.n_cells, self.n_boundary_edges
        if v.shape != (n + nb,):
            raise InvalidArgumentError(
                f"expected {n} cell values followed by {nb} boundary-edge values, got shape {v.shape}")
        return v[:n], v[n:]

    def edge_differences(self, v_cells, v_bnd):
        """D_{K,sigma} v for every edge, K being the first adjacent cell."""
        D = np.empty(self.n_edges)
        D[self.int_edges] = v_cells[self.int_L] - v_cells[self.int_K]
        D[self.ext_edges] = v_bnd - v_cells[self.ext_K]
        return D


# --- construction -----------------------------------------------------------

def build_interval_mesh(n_cells: int, domain=(0.0, 1.0)) -> Mesh:
    """Uniform mesh of an interval; cell points at the midpoints."""
    x0, x1 = map(float, domain)
    if int(n_cells) != n_cells or n_cells < 1:
        raise InvalidArgumentError(f"n_cells must be a positive integer, got {n_cells!r}")
    if not x1 > x0:
        raise InvalidArgumentError(f"empty interval [{x0}, {x1}]")
    n = int(n_cells)
    dx = (x1 - x0) / n
    faces = x0 + dx * np.arange(n + 1)
    faces[-1] = x1
    widths = np.diff(faces)
    centers = 0.5 * (faces[:-1] + faces[1:])

    # edge order: left boundary, interior faces left to right, right boundary
    edge_cells = [(0, -1)] + [(i, i + 1) for i in range(n - 1)] + [(n - 1, -1)]
    edge_pos = np.concatenate([[faces[0]], faces[1:-1], [faces[-1]]])
    first = np.array([k for k, _ in edge_cells])
    second = np.array([l for _, l in edge_cells])
    dist = np.full((n + 1, 2), np.nan)
    dist[:, 0] = np.abs(edge_pos - centers[first])
    has_l = second >= 0
    dist[has_l, 1] = np.abs(edge_pos[has_l] - centers[second[has_l]])
    normals = np.ones(n + 1)
    normals[0] = -1.0
    # 1D dual cells are the segments [x_K, x_L] and [x_K, boundary point]
    dual = np.where(has_l, np.nansum(dist, axis=1), dist[:, 0])
    return Mesh(1, widths, centers, edge_cells, np.ones(n + 1), dist, normals, dual,
                x1 - x0, edge_nodes=edge_pos)


def _circumcenter(a, b, c):
    # computed relative to a to limit cancellation
    b, c, origin = b - a, c - a, a
    a = np.zeros(2)
    d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]))
    a2, b2, c2 = a @ a, b @ b, c @ c
    ux = (a2 * (b[1] - c[1]) + b2 * (c[1] - a[1]) + c2 * (a[1] - b[1])) / d
    uy = (a2 * (c[0] - b[0]) + b2 * (a[0] - c[0]) + c2 * (b[0] - a[0])) / d
    return origin + np.array([ux, uy])


def _shoelace(pts):
    x, y = np.asarray(pts, dtype=float).T
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def build_triangular_mesh(nodes, triangles) -> Mesh:
    """Triangular mesh with circumcenters as cell points.

    Every triangle must be strictly acute, otherwise its circumcenter falls
    on or outside an edge and the mesh is rejected.
    """
    nodes = np.asarray(nodes, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    if nodes.ndim != 2 or nodes.shape[1] != 2:
        raise InvalidArgumentError("nodes must be an (n, 2) array")
    if triangles.ndim != 2 or triangles.shape[1] != 3 or len(triangles) == 0:
        raise InvalidArgumentError("triangles must be a nonempty (n, 3) index array")
    if triangles.min() < 0 or triangles.max() >= len(nodes):
        raise InvalidArgumentError("triangle references a node that does not exist")

    n = len(triangles)
    area = np.empty(n)
    centers = np.empty((n, 2))
    for t, tri in enumerate(triangles):
        p = nodes[tri]
        area[t] = _shoelace(p)
        if not area[t] > 0:
            raise InadmissibleMeshError(f"triangle {t} is degenerate", cell=t)
        for i in range(3):
            u = p[(i + 1) % 3] - p[i]
            v = p[(i + 2) % 3] - p[i]
            cos = (u @ v) / (np.linalg.norm(u) * np.linalg.norm(v))
            if cos <= ACUTE_TOL:
                raise InadmissibleMeshError(
                    f"triangle {t} (nodes {tuple(int(q) for q in tri)}) is not acute: angle at node "
                    f"{int(tri[i])} is {np.degrees(np.arccos(np.clip(cos, -1, 1))):.6g} deg", cell=t)
        centers[t] = _circumcenter(*p)

    edge_map = {}
    for t, tri in enumerate(triangles):
        for i in range(3):
            key = tuple(sorted((int(tri[i]), int(tri[(i + 1) % 3]))))
            edge_map.setdefault(key, []).append((t, int(tri[(i + 2) % 3])))

    m = len(edge_map)
    edge_nodes = np.empty((m, 2), dtype=np.int64)
    edge_cells = np.full((m, 2), -1, dtype=np.int64)
    edge_measure = np.empty(m)
    dist = np.full((m, 2), np.nan)
    normals = np.empty((m, 2))
    dual = np.empty(m)
    for j, (key, owners) in enumerate(sorted(edge_map.items())):
        if len(owners) > 2:
            raise InvalidArgumentError(f"edge {key} is shared by more than two triangles")
        a, b = nodes[key[0]], nodes[key[1]]
        edge_nodes[j] = key
        tangent = b - a
        length = np.linalg.norm(tangent)
        edge_measure[j] = length
        nu = np.array([tangent[1], -tangent[0]]) / length
        mid = 0.5 * (a + b)
        k, opp = owners[0]
        if nu @ (mid - nodes[opp]) < 0:
            nu = -nu
        normals[j] = nu
        edge_cells[j, 0] = k
        dist[j, 0] = nu @ (mid - centers[k])
        if dist[j, 0] <= 0:
            raise InadmissibleMeshError(f"cell point of triangle {k} is not inside it", cell=k)
        if len(owners) == 2:
            l, _ = owners[1]
            edge_cells[j, 1] = l
            dist[j, 1] = nu @ (centers[l] - mid)
            if dist[j, 1] <= 0:
                raise InadmissibleMeshError(f"cell point of triangle {l} is not inside it", cell=l)
            dual[j] = _shoelace([centers[k], a, centers[l], b])
        else:
            dual[j] = _shoelace([centers[k], a, b])

    # |Omega| from the boundary alone: (1/2) sum_{ext} (x_mid . nu) m(sigma)
    ext = edge_cells[:, 1] < 0
    mids = 0.5 * (nodes[edge_nodes[:, 0]] + nodes[edge_nodes[:, 1]])
    total = 0.5 * np.sum(np.einsum("ij,ij->i", mids[ext], normals[ext]) * edge_measure[ext])

    mesh = Mesh(2, area, centers, edge_cells, edge_measure, dist, normals, dual, total,
                edge_nodes=edge_nodes, nodes=nodes, triangles=triangles)
    report = validate_admissibility(mesh)
    if report.orthogonality_max_violation > ORTHO_TOL:
        raise InadmissibleMeshError(
            f"orthogonality defect {report.orthogonality_max_violation:.3g} exceeds {ORTHO_TOL}")
    return mesh


# --- validation and discrete norms --------------------------------------------

@dataclass(frozen=True)
class AdmissibilityReport:
    xi_observed: float
    estmesh_lhs: float
    estmesh_rhs: float
    orthogonality_max_violation: float
    diamond_identity_max_defect: float
    dual_partition_defect: float
    cell_partition_defect: float

    @property
    def admissible(self) -> bool:
        return (self.xi_observed > 0
                and self.estmesh_lhs <= self.estmesh_rhs + 1e-10
                and self.orthogonality_max_violation <= ORTHO_TOL)

    def as_lines(self) -> list:
        items = dict(vars(self), admissible=self.admissible)
        return [f"{k}={str(v).lower() if isinstance(v, bool) else repr(v)}" for k, v in items.items()]


def validate_admissibility(mesh: Mesh) -> AdmissibilityReport:
    """Geometric admissibility report; never raises."""
    dist = mesh.edge_dist
    ratios = dist / mesh.d_sigma[:, None]
    xi = float(np.nanmin(ratios))
    lhs = float(np.nansum(dist * mesh.edge_measure[:, None]))

    ortho = 0.0
    diamond = 0.0
    ie = mesh.int_edges
    if len(ie):
        if mesh.dim == 2:
            en = mesh.edge_nodes[ie]
            tangent = mesh.nodes[en[:, 1]] - mesh.nodes[en[:, 0]]
            tangent /= np.linalg.norm(tangent, axis=1)[:, None]
            link = mesh.centers[mesh.int_L] - mesh.centers[mesh.int_K]
            link /= np.linalg.norm(link, axis=1)[:, None]
            ortho = float(np.max(np.abs(np.einsum("ij,ij->i", tangent, link))))
        # m(sigma) d(x_K, x_L) = dim * m(T_sigma)
        lhs_id = mesh.edge_measure[ie] * mesh.d_sigma[ie]
        rhs_id = mesh.dim * mesh.dual_measure[ie]
        diamond = float(np.max(np.abs(lhs_id - rhs_id) / rhs_id))

    om = mesh.total_measure
    return AdmissibilityReport(
        xi_observed=xi,
        estmesh_lhs=lhs,
        estmesh_rhs=2.0 * om,
        orthogonality_max_violation=ortho,
        diamond_identity_max_defect=diamond,
        dual_partition_defect=float(abs(mesh.dual_measure.sum() - om) / om),
        cell_partition_defect=float(abs(mesh.cell_measure.sum() - om) / om),
    )


def discrete_seminorm_H1(mesh: Mesh, v) -> float:
    """|v|_{1,2} = sqrt(sum_sigma tau_sigma (D_sigma v)^2) for cell+boundary values."""
    vc, vb = mesh.split_values(v)
    D = mesh.edge_differences(vc, vb)
    return float(np.sqrt(np.sum(mesh.tau * D * D)))


def discrete_norm_H1(mesh: Mesh, v) -> float:
    vc, _ = mesh.split_values(v)
    return float(np.hypot(discrete_norm_Lp(mesh, vc, 2), discrete_seminorm_H1(mesh, v)))


def discrete_norm_Lp(mesh: Mesh, v, p: int = 2) -> float:
    if p not in (1, 2):
        raise InvalidArgumentError(f"p must be 1 or 2, got {p}")
    v = np.asarray(v, dtype=float)
    if v.shape != (mesh.n_cells,):
        raise InvalidArgumentError("expected one value per cell")
    return float(np.sum(mesh.cell_measure * np.abs(v) ** p) ** (1.0 / p))


def dual_gradient(mesh: Mesh, v) -> np.ndarray:
    """Approximate gradient, one vector per dual cell (= per edge).

    Value on T_{K,sigma}: m(sigma) / m(T_{K,sigma}) * D_{K,sigma} v * nu_{K,sigma}.
    On the full 2D diamond this is twice the normal slope of a linear field;
    in 1D, where the dual cell is the segment [x_K, x_L], it is the slope.
    """
    vc, vb = mesh.split_values(v)
    D = mesh.edge_differences(vc, vb)
    return (mesh.edge_measure / mesh.dual_measure * D)[:, None] * mesh.normals


# --- acute structured triangulation and the text format ---------------------

def _tile_offset(w: float, h: float) -> float:
    """Interior-point offset minimising the largest angle of the 8-triangle tile."""
    def worst(p):
        pts = _tile_points(w, h, p)
        m = 0.0
        for tri in _TILE_TRIANGLES:
            q = pts[list(tri)]
            for i in range(3):
                u = q[(i + 1) % 3] - q[i]
                v = q[(i + 2) % 3] - q[i]
                m = max(m, np.arccos(np.clip(u @ v / np.linalg.norm(u) / np.linalg.norm(v), -1, 1)))
        return m

    res = minimize_scalar(worst, bounds=(h / 2, w / 2), method="bounded", options={"xatol": 1e-12 * w})
    return float(res.x)


# local tile points: 0..3 corners (ccw from lower-left), 4 bottom mid, 5 top mid,
# 6 left interior, 7 right interior
_TILE_TRIANGLES = ((0, 4, 6), (4, 7, 6), (4, 1, 7), (1, 2, 7),
                   (2, 5, 7), (5, 6, 7), (5, 3, 6), (3, 0, 6))


def _tile_points(w, h, p):
    return np.array([[0, 0], [w, 0], [w, h], [0, h], [w / 2, 0], [w / 2, h],
                     [p, h / 2], [w - p, h / 2]], dtype=float)


def acute_rectangle_triangulation(nx: int, ny: int, domain=((0.0, 1.0), (0.0, 1.0))):
    """Nodes and triangles of an acute triangulation of a rectangle.

    The rectangle is cut into nx * ny tiles of size w x h and every tile into
    8 triangles using the midpoints of its bottom and top sides and two
    interior points on its horizontal midline. All triangles are acute iff
    w > h, which for the unit square means ny > nx. nx = 16, ny = 28 gives
    3584 triangles with no angle above 73 degrees.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise InvalidArgumentError("nx and ny must be positive integers")
    (x0, x1), (y0, y1) = domain
    w = (x1 - x0) / nx
    h = (y1 - y0) / ny
    if not w > h * (1 + 1e-9):
        raise InvalidArgumentError(
            f"tile width {w:g} must exceed tile height {h:g} for an acute split (choose ny > nx)")
    p = _tile_offset(w, h)
    local = _tile_points(w, h, p)

    index = {}
    nodes = []

    # shared nodes sit on the half-tile lattice
    def node(x, y):
        key = (round(2 * x / w), round(2 * y / h))
        if key not in index:
            index[key] = len(nodes)
            nodes.append((x0 + x, y0 + y))
        return index[key]

    tris = []
    for j in range(ny):
        for i in range(nx):
            ox, oy = i * w, j * h
            ids = []
            for q, (lx, ly) in enumerate(local):
                if q >= 6:
                    ids.append(len(nodes))
                    nodes.append((x0 + ox + lx, y0 + oy + ly))
                else:
                    ids.append(node(ox + lx, oy + ly))
            tris.extend(tuple(ids[a] for a in tri) for tri in _TILE_TRIANGLES)
    nodes = np.array(nodes)
    # snap the outer boundary exactly onto the rectangle
    for col, lo, hi in ((0, x0, x1), (1, y0, y1)):
        nodes[np.isclose(nodes[:, col], lo, atol=1e-12 * (hi - lo)), col] = lo
        nodes[np.isclose(nodes[:, col], hi, atol=1e-12 * (hi - lo)), col] = hi
    return nodes, np.array(tris, dtype=np.int64)


def generate_square_mesh(nx: int, ny: int) -> Mesh:
    return build_triangular_mesh(*acute_rectangle_triangulation(nx, ny))


def write_mesh_file(path, nodes, triangles) -> None:
    lines = ["NODES"]
    lines += [f"{i} {float(x)!r} {float(y)!r}" for i, (x, y) in enumerate(nodes)]
    lines.append("TRIANGLES")
    lines += [f"{i} {int(a)} {int(b)} {int(c)}" for i, (a, b, c) in enumerate(triangles)]
    Path(path).write_text("\n".join(lines) + "\n")


def parse_mesh_text(text: str):
    """Parse the NODES / TRIANGLES text format into (nodes, triangles)."""
    section = None
    nodes, tris = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.upper() in ("NODES", "TRIANGLES"):
            section = line.upper()
            continue
        parts = line.split()
        if section is None:
            raise MeshParseError(f"data before a NODES or TRIANGLES header: {raw!r}", lineno)
        try:
            idx = int(parts[0])
            if section == "NODES":
                if len(parts) != 3:
                    raise ValueError
                vals = (float(parts[1]), float(parts[2]))
                if not all(np.isfinite(vals)):
                    raise ValueError
                target = nodes
            else:
                if len(parts) != 4:
                    raise ValueError
                vals = tuple(int(q) for q in parts[1:])
                target = tris
        except ValueError:
            expect = "index x y" if section == "NODES" else "index i j k"
            raise MeshParseError(f"expected '{expect}', got {raw!r}", lineno) from None
        if idx in target:
            raise MeshParseError(f"duplicate {section[:-1].lower()} index {idx}", lineno)
        target[idx] = vals
    if not nodes:
        raise MeshParseError("no NODES section or no nodes")
    if not tris:
        raise MeshParseError("no TRIANGLES section or no triangles")
    if sorted(nodes) != list(range(len(nodes))):
        raise MeshParseError("node indices must be 0..n-1")
    if sorted(tris) != list(range(len(tris))):
        raise MeshParseError("triangle indices must be 0..n-1")
    node_arr = np.array([nodes[i] for i in range(len(nodes))])
    tri_arr = np.array([tris[i] for i in range(len(tris))], dtype=np.int64)
    if tri_arr.min() < 0 or tri_arr.max() >= len(node_arr):
        raise MeshParseError("triangle references an unknown node")
    return node_arr, tri_arr


def read_mesh_file(path) -> Mesh:
    return build_triangular_mesh(*parse_mesh_text(Path(path).read_text()))
