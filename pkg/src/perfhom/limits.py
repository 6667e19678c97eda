"""Homogenized limit eigenproblems on the unperforated square and first-order correctors."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .assembly import (assemble_stiffness, assemble_weighted_mass, dirichlet_dofmap, full_dofmap,
                       gradients)
from .cell import HomogenizedModel, bilinear, element_gradients, extend_into_hole, l0_of
from .geometry import DomainMesh, locate, unit_square_mesh
from .materials import CoefficientField
from .pencilsolve import clusters, solve_spd_pencil

REGIMES = ("M_pos_plus", "M_pos_minus", "M_zero")


class LimitError(ValueError):
    pass


@dataclass
class LimitSolution:
    """Limit eigenpairs on a uniform grid of ``(0,1)^2``.

    ``vectors`` holds vertex values, one column per eigenvalue.  In the
    zero-average regime ``eigenvalues`` are the positive branch and
    ``eigenvalues_neg = -eigenvalues`` share the same eigenfunctions.
    """

    regime: str
    grid: int
    eigenvalues: np.ndarray
    vectors: np.ndarray
    norm_target: np.ndarray           # prescribed ∫ u0^2 per k
    mu: np.ndarray                    # eigenvalues of -div(q grad) on the grid
    clusters: list
    eigenvalues_neg: Optional[np.ndarray] = None
    q: Optional[np.ndarray] = None
    scale: Optional[float] = None     # M, M~ or nu^2
    mesh: Optional[DomainMesh] = field(default=None, repr=False)

    def get_mesh(self) -> DomainMesh:
        if self.mesh is None:
            self.mesh = unit_square_mesh(self.grid)
        return self.mesh

    def gram(self) -> np.ndarray:
        mesh = self.get_mesh()
        mass = assemble_weighted_mass(mesh, None, full_dofmap(mesh)).matrix
        return self.vectors.T @ (mass @ self.vectors)

    def to_dict(self) -> dict:
        return {
            "regime": self.regime, "grid": self.grid,
            "eigenvalues": self.eigenvalues.tolist(),
            "eigenvalues_neg": None if self.eigenvalues_neg is None else self.eigenvalues_neg.tolist(),
            "norm_target": self.norm_target.tolist(), "mu": self.mu.tolist(),
            "clusters": self.clusters, "q": None if self.q is None else self.q.tolist(),
            "scale": self.scale, "vectors": self.vectors.T.tolist(),
        }


def _constant_field(mesh: DomainMesh, q: np.ndarray) -> CoefficientField:
    q = np.asarray(q, dtype=float)
    if abs(q[0, 1] - q[1, 0]) > 1e-12:
        raise LimitError("tensor is not symmetric")
    if np.linalg.eigvalsh(q)[0] <= 0:
        raise LimitError("tensor is not positive definite")
    return CoefficientField.from_tensors(np.broadcast_to(q, (mesh.n_triangles, 2, 2)).copy(), "constant")


def _dirichlet_spectrum(q: np.ndarray, count: int, grid: int):
    """Smallest eigenpairs of ``-div(q grad u) = mu u`` with unit L2 norm."""
    mesh = unit_square_mesh(grid)
    dm = dirichlet_dofmap(mesh)
    K = assemble_stiffness(mesh, _constant_field(mesh, q), dm)
    B = assemble_weighted_mass(mesh, None, dm)
    mu, V = solve_spd_pencil(K, B, count)
    return mesh, mu, dm.expand(V)


def limit_positive(q, M: float, count: int, grid: int = 64) -> LimitSolution:
    """``-div((q/M) grad u) = λ u`` with ``∫ u² = 1/M``."""
    if M <= 0:
        raise LimitError(f"positive-side limit needs M > 0, got {M:g}")
    mesh, mu, V = _dirichlet_spectrum(q, count, grid)
    lam = mu / M
    target = np.full(count, 1.0 / M)
    return LimitSolution("M_pos_plus", grid, lam, V * np.sqrt(target), target, mu,
                         clusters(lam), q=np.asarray(q), scale=M, mesh=mesh)


def limit_negative(q_tilde, M_tilde: float, count: int, grid: int = 64) -> LimitSolution:
    """``-div((q~/M~) grad v) = ξ v`` with ``M~ < 0``, so ``ξ < 0``; ``∫ v² = -1/M~``."""
    if M_tilde >= 0:
        raise LimitError(f"negative-side limit needs M~ < 0, got {M_tilde:g}")
    mesh, mu, V = _dirichlet_spectrum(q_tilde, count, grid)
    xi = mu / M_tilde
    target = np.full(count, -1.0 / M_tilde)
    return LimitSolution("M_pos_minus", grid, xi, V * np.sqrt(target), target, mu,
                         clusters(xi), q=np.asarray(q_tilde), scale=M_tilde, mesh=mesh)


def limit_pencil(q, nu2: float, count: int, grid: int = 64) -> LimitSolution:
    """Zero-average limit: ``-div(q grad u) = λ² ν² u`` reduced to ``μ = λ² ν²``.

    ``λ^± = ±sqrt(μ)/ν``; both branches share ``u`` with ``∫ u² = 1/(sqrt(μ) ν)``.
    """
    if nu2 <= 0:
        raise LimitError(f"nu^2 must be positive, got {nu2:g}")
    mesh, mu, V = _dirichlet_spectrum(q, count, grid)
    nu = np.sqrt(nu2)
    lam = np.sqrt(mu) / nu
    target = 1.0 / (lam * nu2)
    return LimitSolution("M_zero", grid, lam, V * np.sqrt(target), target, mu,
                         clusters(lam), eigenvalues_neg=-lam, q=np.asarray(q), scale=nu2, mesh=mesh)


@dataclass
class OrthonormalityReport:
    gram: np.ndarray
    expected: np.ndarray
    max_abs_error: float
    max_rel_diag_error: float
    clusters: list

    @property
    def ok(self) -> bool:
        return self.max_rel_diag_error <= 1e-6 and self.max_abs_error <= 1e-6 * np.abs(self.expected).max()


def limit_orthonormality_check(sol: LimitSolution) -> OrthonormalityReport:
    """Compare the computed Gram matrix with the prescribed orthogonality relations.

    For the zero-average regime the expected entry is
    ``2 δ_kl / (ν² (λ_k + λ_l))``; elsewhere it is ``δ_kl`` times the
    normalisation value.  Inside an eigenvalue cluster the block is compared
    as a whole, which is basis independent because the target is a multiple
    of the identity there.
    """
    G = sol.gram()
    lam = sol.eigenvalues
    if sol.regime == "M_zero":
        expected = np.diag(2.0 / (sol.scale * (lam + lam)))
    else:
        expected = np.diag(sol.norm_target)
    err = np.abs(G - expected)
    rel = np.abs(np.diag(G) - np.diag(expected)) / np.abs(np.diag(expected))
    return OrthonormalityReport(G, expected, float(err.max()), float(rel.max()), sol.clusters)


# ---------------------------------------------------------------- correctors

def p1_gradient(mesh: DomainMesh, u: np.ndarray) -> np.ndarray:
    return np.einsum("tak,ta->tk", gradients(mesh), np.asarray(u)[mesh.triangles])


@dataclass(frozen=True, eq=False)
class CorrectorField:
    """``u1(x, y) = -Σ_j ∂_j u0(x) χ^j(y) [+ λ0 u0(x) χ^0(y)]``.

    Cell fields are stored on the hole-filled cell mesh (harmonically
    extended) so the sampler is defined on all of ``Ω x Y``.
    """

    regime: str
    u0_mesh: DomainMesh
    u0: np.ndarray
    lam0: float
    cell_filled: object
    chi: tuple
    chi0: Optional[np.ndarray]

    def _cell_tri(self, y: np.ndarray) -> np.ndarray:
        g = self.cell_filled.grid
        i, j, up, _ = locate(np.mod(y, 1.0), g.N)
        return g.square_tri[i, j, up]

    def _u0_at(self, x: np.ndarray):
        g = self.u0_mesh.grid
        i, j, up, bary = locate(x, g.N)
        t = g.square_tri[i, j, up]
        val = np.einsum("pa,pa->p", bary, self.u0[self.u0_mesh.triangles[t]])
        return val, p1_gradient(self.u0_mesh, self.u0)[t]

    def _cell_values(self, y: np.ndarray):
        cm = self.cell_filled
        i, j, up, bary = locate(np.mod(y, 1.0), cm.grid.N)
        t = cm.grid.square_tri[i, j, up]
        tri = cm.triangles[t]
        vals = [np.einsum("pa,pa->p", bary, c[tri]) for c in self.chi]
        v0 = None if self.chi0 is None else np.einsum("pa,pa->p", bary, self.chi0[tri])
        return vals, v0

    def _cell_grads(self, y: np.ndarray):
        t = self._cell_tri(y)
        cm = self.cell_filled
        G = gradients(cm)[t]
        tri = cm.triangles[t]
        grads = [np.einsum("pak,pa->pk", G, c[tri]) for c in self.chi]
        g0 = None if self.chi0 is None else np.einsum("pak,pa->pk", G, self.chi0[tri])
        return grads, g0

    def u1(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        u0, du0 = self._u0_at(np.atleast_2d(x))
        vals, v0 = self._cell_values(np.atleast_2d(y))
        out = -(du0[:, 0] * vals[0] + du0[:, 1] * vals[1])
        if v0 is not None:
            out = out + self.lam0 * u0 * v0
        return out

    def oscillating_gradient(self, x: np.ndarray, eps: float, with_corrector: bool = True) -> np.ndarray:
        """``D u0(x) + D_y u1(x, x/ε)`` at points ``x`` (typically element centroids)."""
        x = np.atleast_2d(x)
        u0, du0 = self._u0_at(x)
        if not with_corrector:
            return du0
        grads, g0 = self._cell_grads(x / eps)
        out = du0 - du0[:, :1] * grads[0] - du0[:, 1:] * grads[1]
        if g0 is not None:
            out = out + self.lam0 * u0[:, None] * g0
        return out


def corrector_field(regime: str, sol: LimitSolution, k: int, model: HomogenizedModel,
                    side: str = "+") -> CorrectorField:
    """Corrector sampler for eigenfunction ``k`` (0-based) of ``sol``."""
    cell = model.cell_mesh()
    if regime == "M_pos_plus":
        if sol.regime != "M_pos_plus":
            raise LimitError("limit solution does not belong to the positive-side regime")
        chi, chi0, lam0 = model.chi, None, 0.0
    elif regime == "M_pos_minus":
        if sol.regime != "M_pos_minus" or model.chi_tilde is None:
            raise LimitError("negative-side corrector needs the weighted cell correctors")
        chi, chi0, lam0 = model.chi_tilde, None, 0.0
    elif regime == "M_zero":
        if sol.regime != "M_zero" or model.chi0 is None:
            raise LimitError("zero-average corrector needs chi^0 and the pencil solution")
        chi, chi0 = model.chi, model.chi0
        lam0 = float(sol.eigenvalues[k] if side == "+" else sol.eigenvalues_neg[k])
    else:
        raise LimitError(f"unknown regime {regime!r}")
    ext = [extend_into_hole(cell, c) for c in chi]
    ext0 = None if chi0 is None else extend_into_hole(cell, chi0)
    return CorrectorField(regime, sol.get_mesh(), sol.vectors[:, k], lam0, cell.filled(),
                          tuple(ext), ext0)


def corrector_residual(model: HomogenizedModel, coeff, density, du0: np.ndarray, u0: float,
                       lam0: float, v: np.ndarray) -> float:
    """``a(u1(x,·), v) + Σ ∂_j u0 ∫ a_ij ∂_i v - λ0 u0 ∫ ρ v`` for one point ``x``.

    ``du0``, ``u0`` are the limit values at x, ``v`` a periodic vertex field on the cell mesh.
    """
    cell = model.cell_mesh()
    u1 = -du0[0] * model.chi[0] - du0[1] * model.chi[1]
    if model.chi0 is not None:
        u1 = u1 + lam0 * u0 * model.chi0
    gv = element_gradients(cell, v)
    lj = np.einsum("t,tij,ti->j", cell.areas, coeff.values, gv)
    rho_v = l0_of(cell, density, v) if density is not None else 0.0
    return bilinear(cell, coeff, u1, v) + float(du0 @ lj) - lam0 * u0 * rho_v
