"""P1 assembly of stiffness, weighted mass and the cell-problem functionals."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .geometry import CellMesh
from .materials import CoefficientField, DensityField


class AssemblyError(ValueError):
    pass


FREE, REPLICA, DIRICHLET = 0, 1, 2

_MASS_REF = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


@dataclass(frozen=True, eq=False)
class DofMap:
    """Vertex -> dof numbering after periodic identification / Dirichlet elimination."""

    dof: np.ndarray          # (V,) dof index or -1
    kind: np.ndarray         # (V,) FREE / REPLICA / DIRICHLET
    n_dofs: int
    mean_zero: bool = False

    def expand(self, u: np.ndarray) -> np.ndarray:
        """Dof vector -> vertex values (0 on eliminated vertices)."""
        u = np.asarray(u)
        out = np.zeros(self.dof.shape + u.shape[1:], dtype=u.dtype)
        ok = self.dof >= 0
        out[ok] = u[self.dof[ok]]
        return out

    def restrict(self, values: np.ndarray) -> np.ndarray:
        """Vertex values -> dof vector (takes the first vertex of each dof)."""
        values = np.asarray(values)
        out = np.zeros((self.n_dofs,) + values.shape[1:], dtype=values.dtype)
        ok = self.dof >= 0
        out[self.dof[ok][::-1]] = values[ok][::-1]
        return out


def periodic_dofmap(mesh: CellMesh, mean_zero: bool = False) -> DofMap:
    rep = mesh.canonical()
    kind = np.where(rep != np.arange(mesh.n_vertices), REPLICA, FREE)
    masters = np.nonzero(kind == FREE)[0]
    num = -np.ones(mesh.n_vertices, dtype=np.int64)
    num[masters] = np.arange(masters.size)
    return DofMap(num[rep], kind, int(masters.size), mean_zero)


def dirichlet_dofmap(mesh, boundary: Optional[np.ndarray] = None) -> DofMap:
    nv = len(mesh.vertices)
    bd = mesh.dirichlet_boundary if boundary is None else boundary
    kind = np.zeros(nv, dtype=np.int64)
    kind[bd] = DIRICHLET
    free = np.nonzero(kind == FREE)[0]
    num = -np.ones(nv, dtype=np.int64)
    num[free] = np.arange(free.size)
    return DofMap(num, kind, int(free.size))


def full_dofmap(mesh) -> DofMap:
    nv = len(mesh.vertices)
    return DofMap(np.arange(nv), np.zeros(nv, dtype=np.int64), nv)


@dataclass(frozen=True, eq=False)
class SymmetricOperator:
    matrix: sp.csr_matrix
    tag: str                 # stiffness | weighted-mass | plain-mass
    dofmap: DofMap

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def __matmul__(self, x):
        return self.matrix @ x


def gradients(mesh) -> np.ndarray:
    """Per-triangle gradients of the three barycentric functions, shape (T, 3, 2)."""
    P = mesh.vertices[mesh.triangles]
    d1 = P[:, 1] - P[:, 0]
    d2 = P[:, 2] - P[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    # rows of inv([d1 d2]) give grads of lambda_1, lambda_2
    g1 = np.stack([d2[:, 1], -d2[:, 0]], axis=1) / det[:, None]
    g2 = np.stack([-d1[:, 1], d1[:, 0]], axis=1) / det[:, None]
    return np.stack([-g1 - g2, g1, g2], axis=1)


def _assemble(mesh, dofmap: DofMap, blocks: np.ndarray) -> sp.csr_matrix:
    """Sum symmetric 3x3 element blocks into dof space; only the upper
    triangle is accumulated and then mirrored, so the result is exactly symmetric."""
    dofs = dofmap.dof[mesh.triangles]                       # (T, 3)
    rows, cols, vals = [], [], []
    for a in range(3):
        for b in range(a, 3):
            ra, rb = dofs[:, a], dofs[:, b]
            ok = (ra >= 0) & (rb >= 0)
            r = np.minimum(ra[ok], rb[ok])
            c = np.maximum(ra[ok], rb[ok])
            v = blocks[ok, a, b]
            # an off-diagonal pair landing on one dof (periodic wrap) counts twice
            if a != b:
                v = np.where(r == c, 2.0 * v, v)
            rows.append(r)
            cols.append(c)
            vals.append(v)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    # fixed traversal: stable sort by (row, col) keeps triangle order within duplicates
    n = dofmap.n_dofs
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    key = rows * n + cols
    uniq, start = np.unique(key, return_index=True)
    summed = np.add.reduceat(vals, start) if vals.size else vals
    U = sp.csr_matrix((summed, (uniq // n, uniq % n)), shape=(n, n))
    return (U + sp.triu(U, k=1).T).tocsr()


def _check(mesh, nvals, what):
    if nvals != len(mesh.triangles):
        raise AssemblyError(f"{what} has {nvals} element values but the mesh has {len(mesh.triangles)} triangles")


def element_stiffness(mesh, coeff: CoefficientField) -> np.ndarray:
    _check(mesh, len(coeff.values), "coefficient field")
    G = gradients(mesh)
    return mesh.areas[:, None, None] * np.einsum("tak,tkl,tbl->tab", G, coeff.values, G)


def assemble_stiffness(mesh, coeff: CoefficientField, dofmap: DofMap) -> SymmetricOperator:
    return SymmetricOperator(_assemble(mesh, dofmap, element_stiffness(mesh, coeff)), "stiffness", dofmap)


def assemble_weighted_mass(mesh, density: Optional[DensityField], dofmap: DofMap) -> SymmetricOperator:
    """Exact P1 mass with a piecewise-constant weight (``None`` for the plain mass)."""
    if density is None:
        w, tag = np.ones(len(mesh.triangles)), "plain-mass"
    else:
        _check(mesh, len(density.values), "density field")
        w, tag = density.values, "weighted-mass"
    blocks = (w * mesh.areas)[:, None, None] * _MASS_REF
    return SymmetricOperator(_assemble(mesh, dofmap, blocks), tag, dofmap)


def _scatter(mesh, dofmap: DofMap, elem: np.ndarray) -> np.ndarray:
    """Accumulate per-element, per-local-vertex values (T, 3, ...) into dofs."""
    dofs = dofmap.dof[mesh.triangles].ravel()
    vals = elem.reshape((dofs.size,) + elem.shape[2:])
    ok = dofs >= 0
    out = np.zeros((dofmap.n_dofs,) + elem.shape[2:])
    np.add.at(out, dofs[ok], vals[ok])
    return out


def mean_weights(mesh, dofmap: DofMap) -> np.ndarray:
    """``w_i = integral of the i-th basis function``, so ``w @ u`` is the integral of u."""
    return _scatter(mesh, dofmap, np.repeat(mesh.areas[:, None] / 3.0, 3, axis=1))


def assemble_functionals(mesh, coeff: CoefficientField, density: Optional[DensityField],
                         dofmap: DofMap) -> dict:
    """``l_j(v) = sum_k int a_kj d_k v`` (j = 1, 2) and ``l_0(v) = int rho v``."""
    _check(mesh, len(coeff.values), "coefficient field")
    G = gradients(mesh)
    out = {}
    for j in (1, 2):
        # (T, 3): area * grad(phi_a) . a[:, j]
        e = mesh.areas[:, None] * np.einsum("tak,tk->ta", G, coeff.values[:, :, j - 1])
        out[f"l{j}"] = _scatter(mesh, dofmap, e)
    if density is not None:
        _check(mesh, len(density.values), "density field")
        e = np.repeat((density.values * mesh.areas)[:, None] / 3.0, 3, axis=1)
        out["l0"] = _scatter(mesh, dofmap, e)
    return out


def write_coo(path, op) -> None:
    """Coordinate text ``i j value`` of the upper triangle, first line ``n nnz``."""
    M = sp.triu(op.matrix if isinstance(op, SymmetricOperator) else sp.csr_matrix(op)).tocoo()
    with open(path, "w") as fh:
        fh.write(f"{M.shape[0]} {M.nnz}\n")
        for i, j, v in zip(M.row.tolist(), M.col.tolist(), M.data.tolist()):
            fh.write(f"{i} {j} {v!r}\n")


def read_coo(path) -> sp.csr_matrix:
    with open(path) as fh:
        n, nnz = (int(t) for t in fh.readline().split())
        data = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
    U = sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(n, n))
    return (U + sp.triu(U, k=1).T).tocsr()


def harmonic_fill(filled, n_known: int, hole_tris: np.ndarray, known: np.ndarray) -> np.ndarray:
    """Discrete harmonic extension into the holes of a hole-filled mesh.

    ``filled`` lists the ``n_known`` original vertices first; the remaining
    vertices are hole interiors.  Their values minimise the Dirichlet energy
    over the hole triangles ``hole_tris`` with the known trace fixed.
    ``known`` may carry several columns.
    """
    known = np.asarray(known, dtype=float)
    nv = len(filled.vertices)
    if nv == n_known:
        return known.copy()
    G = gradients(filled)
    blocks = filled.areas[:, None, None] * np.einsum("tak,tbk->tab", G, G)
    blocks = np.where(hole_tris[:, None, None], blocks, 0.0)
    A = _assemble(filled, full_dofmap(filled), blocks)
    inner = np.arange(n_known, nv)
    A_ii = A[inner][:, inner].tocsc()
    A_ik = A[inner][:, :n_known]
    rhs = -(A_ik @ known)
    out = np.concatenate([known, splu(A_ii).solve(np.asarray(rhs))], axis=0)
    return out
