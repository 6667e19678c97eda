"""The ε-problem on the perforated square, hole filling and two-scale pairings."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .assembly import (DofMap, assemble_stiffness, assemble_weighted_mass, dirichlet_dofmap,
                       gradients, harmonic_fill)
from .geometry import DomainMesh
from .materials import CoefficientField, DensityField
from .pencilsolve import TwoSidedSpectrum, solve_indefinite_pencil

# "unit": u^T B u = +-1 (also the -1 convention of the weighted run);
# "eps": u^T B u = +-eps (zero-average runs)
NORMALIZATIONS = ("unit", "eps")


class PairingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EpsSolution:
    mesh: DomainMesh
    spectrum: TwoSidedSpectrum
    normalization: str
    dofmap: DofMap
    B: object                 # weighted mass operator on the dofs

    @property
    def eps(self) -> float:
        return self.mesh.eps

    def eigvals(self, side: str) -> np.ndarray:
        return self.spectrum.side(side)[0]

    def vertex_values(self, side: str, k: int) -> np.ndarray:
        """Eigenfunction ``k`` (0-based) of ``side`` at all vertices of Ω^ε."""
        return self.dofmap.expand(self.spectrum.side(side)[1][:, k])

    def gram(self, side: str) -> np.ndarray:
        V = self.spectrum.side(side)[1]
        return V.T @ (self.B @ V)

    def normalization_target(self, side: str) -> float:
        scale = self.eps if self.normalization == "eps" else 1.0
        return scale if side == "+" else -scale


def solve_eps_spectrum(mesh: DomainMesh, coeff: CoefficientField, density: DensityField,
                       count_pos: int, count_neg: int, normalization: str = "unit") -> EpsSolution:
    """Both signed sequences with Dirichlet data on the outer boundary only.

    ``coeff`` and ``density`` are fields on ``mesh`` (use ``mesh.lift`` on cell data).
    """
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization {normalization!r}")
    dm = dirichlet_dofmap(mesh)
    K = assemble_stiffness(mesh, coeff, dm)
    B = assemble_weighted_mass(mesh, density, dm)
    spec = solve_indefinite_pencil(K, B, count_pos, count_neg)
    if normalization == "eps":
        spec = spec.rescaled(B, mesh.eps)
    return EpsSolution(mesh, spec, normalization, dm, B)


def hole_triangles(filled: DomainMesh, mesh: DomainMesh) -> np.ndarray:
    """Mask of the filled mesh's triangles that lie inside a hole."""
    cmask = mesh.geometry.hole_mask(mesh.s)
    ts = filled.grid.tri_square
    return cmask[ts[:, 0] % mesh.s, ts[:, 1] % mesh.s]


def gradient_norm(mesh, u: np.ndarray, tri_mask: Optional[np.ndarray] = None) -> float:
    g = np.einsum("tak,ta->tk", gradients(mesh), np.asarray(u)[mesh.triangles])
    w = mesh.areas if tri_mask is None else mesh.areas * tri_mask
    return float(np.sqrt(np.dot(w, (g * g).sum(1))))


@dataclass(frozen=True, eq=False)
class Extension:
    filled: DomainMesh
    values: np.ndarray
    constant: float           # ||D(P u)||_Ω / ||D u||_Ω^ε


def harmonic_extension(mesh: DomainMesh, u: np.ndarray, filled: Optional[DomainMesh] = None) -> Extension:
    """Fill every hole with the discrete harmonic extension of the trace of ``u``."""
    filled = mesh.filled() if filled is None else filled
    ext = harmonic_fill(filled, mesh.n_vertices, hole_triangles(filled, mesh), u)
    inner = gradient_norm(mesh, u)
    c = gradient_norm(filled, ext) / inner if inner > 0 else 1.0
    return Extension(filled, ext, c)


_TRIPLE = np.full((3, 3, 3), 1.0 / 60.0)
for _a in range(3):
    for _b in range(3):
        if _a == _b:
            _TRIPLE[_a, _a, _a] = 1.0 / 10.0
        else:
            _TRIPLE[_a, _a, _b] = _TRIPLE[_a, _b, _a] = _TRIPLE[_b, _a, _a] = 1.0 / 30.0
_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


def two_scale_pairing(mesh: DomainMesh, u: np.ndarray, phi0: np.ndarray, phi1: np.ndarray,
                      phi1_kind: str = "nodal") -> float:
    """``∫ u(x) φ0(x) φ1(x/ε) dx`` over ``mesh`` with exact P1 quadrature.

    ``u`` and ``phi0`` are vertex values on ``mesh``.  ``phi1`` is a periodic
    field on the cell mesh of matching resolution (hole-filled if ``mesh`` is),
    either vertex values (``nodal``) or per-triangle constants (``element``).
    """
    if mesh.n_vertices and not np.allclose(mesh.local_coord * mesh.s, np.round(mesh.local_coord * mesh.s)):
        raise PairingError("mesh vertices are not aligned with the cell grid")
    U = np.asarray(u)[mesh.triangles]
    P = np.asarray(phi0)[mesh.triangles]
    if phi1_kind == "nodal":
        F = mesh.lift_nodal(phi1)[mesh.triangles]
        return float(np.einsum("t,abc,ta,tb,tc->", mesh.areas, _TRIPLE, U, P, F))
    if phi1_kind == "element":
        f = mesh.lift(phi1)
        return float(np.einsum("t,ab,ta,tb->", mesh.areas * f, _MASS, U, P))
    raise ValueError(f"unknown phi1 kind {phi1_kind!r}")


def cell_mean(cell, phi1: np.ndarray, phi1_kind: str) -> float:
    if phi1_kind == "element":
        return float(np.dot(cell.areas, phi1))
    return float(np.dot(cell.areas, np.asarray(phi1)[cell.triangles].mean(1)))


def scaled_pairing(mesh: DomainMesh, u: np.ndarray, psi0: np.ndarray, psi1: np.ndarray,
                   psi1_kind: str = "nodal", cell=None) -> float:
    """``(1/ε) ∫ u ψ0 ψ1(x/ε)``; ``ψ1`` must have zero cell average."""
    cell = mesh.cell_mesh() if cell is None else cell
    if psi1_kind == "nodal" and len(psi1) != cell.n_vertices:
        cell = cell.filled()
    mean = cell_mean(cell, psi1, psi1_kind)
    if abs(mean) > 1e-12:
        raise PairingError(f"ψ1 has cell average {mean:.3e}; the scaled pairing needs a mean-zero ψ1")
    return two_scale_pairing(mesh, u, psi0, psi1, psi1_kind) / mesh.eps
