"""Structured triangulations of the perforated cell Y* and the perforated domain.

Every mesh here is a right-triangle split of a uniform square grid with some
grid squares removed (the holes).  Square ``(i, j)`` spans
``[i h, (i+1) h] x [j h, (j+1) h]`` and is cut along its ``(i, j)-(i+1, j+1)``
diagonal into a lower and an upper triangle, both counter-clockwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

DEFAULT_HOLE = (0.375, 0.625, 0.375, 0.625)
DEFAULT_BUDGET = 100_000


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class CellGeometry:
    """Reference hole ``T`` inside the unit cell.

    ``hole_extent`` is ``(y1_min, y1_max, y2_min, y2_max)``; ``None`` means an
    unperforated cell.  ``polygon`` fills the grid squares whose centres lie in
    the ellipse inscribed in the extent (a staircase approximation of a
    circle, still exactly grid aligned).
    """

    hole_kind: str = "square"
    hole_extent: Optional[tuple] = DEFAULT_HOLE
    m: int = 8

    @property
    def has_hole(self) -> bool:
        return self.hole_extent is not None and len(self.hole_extent) == 4

    def validate(self, m: Optional[int] = None) -> None:
        m = self.m if m is None else m
        if self.hole_kind not in ("square", "polygon"):
            raise GeometryError(f"unknown hole kind {self.hole_kind!r}")
        if not self.has_hole:
            if m < 1:
                raise GeometryError("resolution must be positive")
            return
        if m < 8:
            raise GeometryError(f"resolution m={m} below the minimum of 8")
        x0, x1, y0, y1 = self.hole_extent
        if not (0 < x0 < x1 < 1 and 0 < y0 < y1 < 1):
            raise GeometryError(f"hole {self.hole_extent} must lie strictly inside the unit cell")
        if self.hole_kind == "square":
            for c in self.hole_extent:
                if abs(c * m - round(c * m)) > 1e-9:
                    raise GeometryError(f"m={m} is not aligned with hole boundary coordinate {c}")
        if not self.hole_mask(m).any():
            raise GeometryError("hole covers no grid square at this resolution")

    def hole_mask(self, m: Optional[int] = None) -> np.ndarray:
        """Boolean ``(m, m)`` array, ``mask[i, j]`` true when square ``(i, j)`` is in T."""
        m = self.m if m is None else m
        mask = np.zeros((m, m), dtype=bool)
        if not self.has_hole:
            return mask
        x0, x1, y0, y1 = self.hole_extent
        if self.hole_kind == "square":
            i0, i1 = int(round(x0 * m)), int(round(x1 * m))
            j0, j1 = int(round(y0 * m)), int(round(y1 * m))
            mask[i0:i1, j0:j1] = True
            return mask
        c = (np.arange(m) + 0.5) / m
        cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
        rx, ry = 0.5 * (x1 - x0), 0.5 * (y1 - y0)
        X, Y = np.meshgrid(c, c, indexing="ij")
        return ((X - cx) / rx) ** 2 + ((Y - cy) / ry) ** 2 <= 1.0

    def hole_area(self) -> float:
        if not self.has_hole:
            return 0.0
        if self.hole_kind == "square":
            x0, x1, y0, y1 = (Fraction(c).limit_denominator(1 << 20) for c in self.hole_extent)
            return float((x1 - x0) * (y1 - y0))
        return float(self.hole_mask().sum()) / self.m**2


@dataclass(frozen=True, eq=False)
class _Grid:
    """Raw structured triangulation shared by cell and domain meshes."""

    N: int
    keep: np.ndarray          # (N, N) squares kept
    vertices: np.ndarray      # (V, 2)
    grid_index: np.ndarray    # (V, 2) integer grid coordinates
    vertex_of_grid: np.ndarray  # (N+1, N+1) -> vertex id or -1
    triangles: np.ndarray     # (T, 3)
    tri_square: np.ndarray    # (T, 3): i, j, upper
    square_tri: np.ndarray    # (N, N, 2) -> triangle id or -1
    areas: np.ndarray


def _structured(N: int, keep: np.ndarray, scale: float = 1.0) -> _Grid:
    h = scale / N
    used = np.zeros((N + 1, N + 1), dtype=bool)
    used[:-1, :-1] |= keep
    used[1:, :-1] |= keep
    used[:-1, 1:] |= keep
    used[1:, 1:] |= keep
    vertex_of_grid = -np.ones((N + 1, N + 1), dtype=np.int64)
    # vertex ids: row by row in y, then x
    jj, ii = np.nonzero(used.T)
    vertex_of_grid[ii, jj] = np.arange(ii.size)
    grid_index = np.stack([ii, jj], axis=1)
    vertices = grid_index * h

    sj, si = np.nonzero(keep.T)
    nsq = si.size
    v00 = vertex_of_grid[si, sj]
    v10 = vertex_of_grid[si + 1, sj]
    v11 = vertex_of_grid[si + 1, sj + 1]
    v01 = vertex_of_grid[si, sj + 1]
    tris = np.empty((2 * nsq, 3), dtype=np.int64)
    tris[0::2] = np.stack([v00, v10, v11], axis=1)
    tris[1::2] = np.stack([v00, v11, v01], axis=1)
    tri_square = np.empty((2 * nsq, 3), dtype=np.int64)
    tri_square[0::2] = np.stack([si, sj, np.zeros(nsq, dtype=np.int64)], axis=1)
    tri_square[1::2] = np.stack([si, sj, np.ones(nsq, dtype=np.int64)], axis=1)
    square_tri = -np.ones((N, N, 2), dtype=np.int64)
    square_tri[si, sj, 0] = np.arange(0, 2 * nsq, 2)
    square_tri[si, sj, 1] = np.arange(1, 2 * nsq, 2)
    areas = np.full(2 * nsq, 0.5 * h * h)
    return _Grid(N, keep, vertices, grid_index, vertex_of_grid, tris, tri_square, square_tri, areas)


def _centroids_local(tri_square: np.ndarray, m: int) -> np.ndarray:
    # lower triangle centroid at (i + 2/3, j + 1/3) h, upper at (i + 1/3, j + 2/3) h;
    # computed from integers so cell and domain agree bitwise
    i, j, up = tri_square[:, 0], tri_square[:, 1], tri_square[:, 2]
    cx = (3 * i + 2 - up) / (3.0 * m)
    cy = (3 * j + 1 + up) / (3.0 * m)
    return np.stack([cx, cy], axis=1)


@dataclass(frozen=True, eq=False)
class CellMesh:
    geometry: CellGeometry
    m: int
    vertices: np.ndarray
    triangles: np.ndarray
    areas: np.ndarray
    periodic_pairs: dict
    hole_boundary: np.ndarray
    grid: _Grid = field(repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def centroids(self) -> np.ndarray:
        """Triangle centroids in cell coordinates."""
        return _centroids_local(self.grid.tri_square, self.m)

    def canonical(self) -> np.ndarray:
        """Vertex -> representative vertex after periodic identification."""
        rep = np.arange(self.n_vertices)
        for a, b in self.periodic_pairs.items():
            rep[a] = b
        return rep

    def filled(self) -> "CellMesh":
        """The same grid with the hole filled in (vertex ids of Y* are preserved first)."""
        return _filled_cell(self)


def build_cell_mesh(geom: CellGeometry) -> CellMesh:
    m = geom.m
    geom.validate(m)
    mask = geom.hole_mask(m)
    g = _structured(m, ~mask)
    pairs = {}
    vog = g.vertex_of_grid
    for v, (i, j) in enumerate(g.grid_index):
        if i == m or j == m:
            pairs[v] = int(vog[i % m, j % m])
    hb = _hole_adjacent(g, mask)
    return CellMesh(geom, m, g.vertices, g.triangles, g.areas, pairs, hb, g)


def _hole_adjacent(g: _Grid, hole: np.ndarray) -> np.ndarray:
    N = g.N
    touch = np.zeros((N + 1, N + 1), dtype=bool)
    touch[:-1, :-1] |= hole
    touch[1:, :-1] |= hole
    touch[:-1, 1:] |= hole
    touch[1:, 1:] |= hole
    ids = g.vertex_of_grid[touch]
    return np.sort(ids[ids >= 0])


def _filled_cell(mesh: CellMesh) -> CellMesh:
    m = mesh.m
    full = _structured(m, np.ones((m, m), dtype=bool))
    # renumber so that the Y* vertices keep their ids
    order = -np.ones(len(full.vertices), dtype=np.int64)
    old = mesh.grid.vertex_of_grid
    new_ids = full.vertex_of_grid
    present = old >= 0
    order[old[present]] = new_ids[present]
    extra = np.setdiff1d(np.arange(len(full.vertices)), order[: mesh.n_vertices])
    perm = np.concatenate([order[: mesh.n_vertices], extra])  # new position -> full id
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    vog = -np.ones_like(new_ids)
    vog[:, :] = inv[new_ids]
    g = _Grid(m, full.keep, full.vertices[perm], full.grid_index[perm], vog,
              inv[full.triangles], full.tri_square, full.square_tri, full.areas)
    pairs = {}
    for v, (i, j) in enumerate(g.grid_index):
        if i == m or j == m:
            pairs[v] = int(vog[i % m, j % m])
    geom = CellGeometry(mesh.geometry.hole_kind, None, m)
    return CellMesh(geom, m, g.vertices, g.triangles, g.areas, pairs,
                    np.empty(0, dtype=np.int64), g)


@dataclass(frozen=True, eq=False)
class DomainMesh:
    """Triangulation of the perforated square (0,1)^2 with n x n cells of size 1/n."""

    geometry: CellGeometry
    n: int
    s: int
    vertices: np.ndarray
    triangles: np.ndarray
    areas: np.ndarray
    dirichlet_boundary: np.ndarray
    hole_boundaries: list
    cell_index: np.ndarray     # (T, 2)
    local_coord: np.ndarray    # (V, 2)
    cell_tri: np.ndarray       # (T,) triangle id in the matching CellMesh(m=s)
    cell_vertex: np.ndarray    # (V,) canonical vertex id in CellMesh(m=s)
    grid: _Grid = field(repr=False)
    filled_from: Optional[CellGeometry] = None   # perforated geometry, set on hole-filled meshes

    @property
    def eps(self) -> float:
        return 1.0 / self.n

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def cell_mesh(self) -> CellMesh:
        """The cell mesh whose numbering ``cell_tri`` and ``cell_vertex`` refer to."""
        if self.filled_from is not None:
            return build_cell_mesh(self.filled_from).filled()
        return build_cell_mesh(CellGeometry(self.geometry.hole_kind, self.geometry.hole_extent, self.s))

    def filled(self) -> "DomainMesh":
        """Hole-filled mesh of the whole square; Ω^ε vertex ids are preserved first."""
        return _filled_domain(self)

    def lift(self, cell_values: np.ndarray) -> np.ndarray:
        """Per-triangle cell data evaluated at x/ε by index reuse."""
        return np.asarray(cell_values)[self.cell_tri]

    def lift_nodal(self, cell_nodal: np.ndarray) -> np.ndarray:
        return np.asarray(cell_nodal)[self.cell_vertex]


def build_domain_mesh(n: int, s: int, geom: CellGeometry, budget: int = DEFAULT_BUDGET) -> DomainMesh:
    if n < 1 or s < 1:
        raise GeometryError("n and s must be positive")
    N = n * s
    if (N + 1) ** 2 > budget:
        raise GeometryError(f"mesh with {(N + 1) ** 2} vertices exceeds the budget of {budget}")
    geom.validate(s)
    cmask = geom.hole_mask(s)
    hole = np.tile(cmask, (n, n))
    g = _structured(N, ~hole)
    return _domain_from_grid(geom, n, s, g, hole, _structured(s, ~cmask))


def _domain_from_grid(geom, n, s, g, hole, cell: _Grid) -> DomainMesh:
    N = n * s
    gi = g.grid_index
    on_bd = (gi[:, 0] == 0) | (gi[:, 0] == N) | (gi[:, 1] == 0) | (gi[:, 1] == N)
    dirichlet = np.nonzero(on_bd)[0]
    li = gi % s
    local = li / s
    # canonical cell vertex: (i mod s, j mod s) always exists in the cell grid
    cell_vertex = cell.vertex_of_grid[li[:, 0], li[:, 1]]
    ts = g.tri_square
    cell_index = ts[:, :2] // s
    cell_tri = cell.square_tri[ts[:, 0] % s, ts[:, 1] % s, ts[:, 2]]

    holes = []
    if hole.any():
        touch_ids = []
        for kj in range(n):
            for ki in range(n):
                sub = np.zeros_like(hole)
                sub[ki * s:(ki + 1) * s, kj * s:(kj + 1) * s] = hole[ki * s:(ki + 1) * s, kj * s:(kj + 1) * s]
                touch_ids.append(_hole_adjacent(g, sub))
        holes = touch_ids
    return DomainMesh(geom, n, s, g.vertices, g.triangles, g.areas, dirichlet, holes,
                      cell_index, local, cell_tri, cell_vertex, g)


def _filled_domain(mesh: DomainMesh) -> DomainMesh:
    N = mesh.n * mesh.s
    full = _structured(N, np.ones((N, N), dtype=bool))
    old = mesh.grid.vertex_of_grid
    present = old >= 0
    order = np.empty(mesh.n_vertices, dtype=np.int64)
    order[old[present]] = full.vertex_of_grid[present]
    extra = np.setdiff1d(np.arange(len(full.vertices)), order)
    perm = np.concatenate([order, extra])
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    g = _Grid(N, full.keep, full.vertices[perm], full.grid_index[perm], inv[full.vertex_of_grid],
              inv[full.triangles], full.tri_square, full.square_tri, full.areas)
    geom = CellGeometry(mesh.geometry.hole_kind, None, mesh.s)
    cell = mesh.cell_mesh().filled().grid
    out = _domain_from_grid(geom, mesh.n, mesh.s, g, np.zeros((N, N), dtype=bool), cell)
    return replace(out, filled_from=CellGeometry(mesh.geometry.hole_kind, mesh.geometry.hole_extent, mesh.s))


def unit_square_mesh(N: int, budget: int = DEFAULT_BUDGET) -> DomainMesh:
    """Unperforated uniform mesh of (0,1)^2 used by the limit problems."""
    return build_domain_mesh(1, N, CellGeometry("square", None, N), budget=budget)


def locate(points: np.ndarray, N: int, scale: float = 1.0):
    """Locate points of [0, scale]^2 in the structured grid of size N.

    Returns ``(i, j, upper, bary)``: square indices, triangle flag and the
    barycentric coordinates with respect to that triangle's vertex order.
    Points on shared edges go to either neighbour.
    """
    p = np.asarray(points, dtype=float) * (N / scale)
    i = np.clip(np.floor(p[:, 0]).astype(np.int64), 0, N - 1)
    j = np.clip(np.floor(p[:, 1]).astype(np.int64), 0, N - 1)
    fx = p[:, 0] - i
    fy = p[:, 1] - j
    upper = (fy > fx).astype(np.int64)
    # lower: (0,0),(1,0),(1,1) ; upper: (0,0),(1,1),(0,1)
    bary = np.where(
        upper[:, None] == 0,
        np.stack([1 - fx, fx - fy, fy], axis=1),
        np.stack([1 - fy, fx, fy - fx], axis=1),
    )
    return i, j, upper, bary


# ---------------------------------------------------------------- reporting

@dataclass
class MeshReport:
    n_vertices: int
    n_triangles: int
    min_angle_deg: float
    min_area: float
    total_area: float
    components: list          # dicts: vertices, edges, faces, euler, holes
    violations: list

    @property
    def n_holes(self) -> int:
        return sum(c["holes"] for c in self.components)


def _edges(tris: np.ndarray) -> np.ndarray:
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def mesh_report(mesh) -> MeshReport:
    V = np.asarray(mesh.vertices)
    T = np.asarray(mesh.triangles)
    P = V[T]
    d1 = P[:, 1] - P[:, 0]
    d2 = P[:, 2] - P[:, 0]
    signed = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    angles = []
    for a in range(3):
        u = P[:, (a + 1) % 3] - P[:, a]
        w = P[:, (a + 2) % 3] - P[:, a]
        c = (u * w).sum(1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1))
        angles.append(np.degrees(np.arccos(np.clip(c, -1, 1))))
    min_angle = float(np.min(angles)) if len(T) else float("nan")
    violations = []
    if (signed <= 0).any():
        violations.append(f"{int((signed <= 0).sum())} triangles with non-positive area")
    if np.abs(signed - mesh.areas).max(initial=0) > 1e-12:
        violations.append("stored areas disagree with vertex geometry")

    E = _edges(T)
    nv = len(V)
    adj = coo_matrix((np.ones(len(E)), (E[:, 0], E[:, 1])), shape=(nv, nv))
    ncomp, labels = connected_components(adj, directed=False)
    tri_lab = labels[T[:, 0]]
    edge_lab = labels[E[:, 0]]
    used = np.zeros(nv, dtype=bool)
    used[T.ravel()] = True
    if not used.all():
        violations.append(f"{int((~used).sum())} vertices not referenced by any triangle")
    comps = []
    for c in range(ncomp):
        nvc = int(((labels == c) & used).sum())
        if nvc == 0:
            continue
        ne = int((edge_lab == c).sum())
        nf = int((tri_lab == c).sum())
        chi = nvc - ne + nf
        comps.append(dict(vertices=nvc, edges=ne, faces=nf, euler=chi, holes=1 - chi))
    if isinstance(mesh, CellMesh):
        pp = mesh.periodic_pairs
        for a, b in pp.items():
            d = mesh.vertices[a] - mesh.vertices[b]
            if not (np.allclose(d, np.round(d), atol=1e-14) and np.abs(np.round(d)).sum() >= 1):
                violations.append(f"periodic pair {a}->{b} is not a lattice translate")
                break
    return MeshReport(nv, len(T), min_angle, float(signed.min(initial=np.inf)),
                      float(signed.sum()), comps, violations)


# ---------------------------------------------------------------- text format

def write_mesh_text(path, mesh, tags: Optional[dict] = None, fields: Optional[dict] = None) -> None:
    """Write ``v x y`` / ``t i j k`` / ``tag name i...`` / ``field name count`` lines."""
    tags = dict(tags or {})
    if isinstance(mesh, CellMesh):
        tags.setdefault("hole_boundary", mesh.hole_boundary)
    elif isinstance(mesh, DomainMesh):
        tags.setdefault("dirichlet", mesh.dirichlet_boundary)
        for k, hb in enumerate(mesh.hole_boundaries):
            tags.setdefault(f"hole{k}", hb)
    with open(path, "w") as fh:
        for x, y in mesh.vertices.tolist():
            fh.write(f"v {x!r} {y!r}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"t {a} {b} {c}\n")
        for name, ids in tags.items():
            fh.write("tag " + " ".join([name] + [str(int(i)) for i in ids]) + "\n")
        for name, vals in (fields or {}).items():
            vals = np.asarray(vals, dtype=float).ravel()
            fh.write(f"field {name} {vals.size}\n")
            for v in vals.tolist():
                fh.write(f"{v!r}\n")


def read_mesh_text(path):
    """Inverse of :func:`write_mesh_text`; returns (vertices, triangles, tags, fields)."""
    verts, tris, tags, fields = [], [], {}, {}
    with open(path) as fh:
        lines = iter(fh.read().splitlines())
        for line in lines:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append((float(parts[1]), float(parts[2])))
            elif parts[0] == "t":
                tris.append(tuple(int(p) for p in parts[1:4]))
            elif parts[0] == "tag":
                tags[parts[1]] = np.array([int(p) for p in parts[2:]], dtype=np.int64)
            elif parts[0] == "field":
                cnt = int(parts[2])
                fields[parts[1]] = np.array([float(next(lines)) for _ in range(cnt)])
            else:
                raise ValueError(f"unrecognised mesh line: {line!r}")
    return np.array(verts), np.array(tris, dtype=np.int64), tags, fields
