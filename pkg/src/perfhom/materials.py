"""Piecewise-constant coefficient tensors and sign-changing densities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CellMesh, DomainMesh


class MaterialError(ValueError):
    pass


COEFF_PRESETS = ("identity", "layered")
DENSITY_PRESETS = ("positive_avg", "zero_avg", "negative_avg")


@dataclass(frozen=True, eq=False)
class CoefficientField:
    values: np.ndarray      # (T, 2, 2)
    alpha: float
    name: str = "custom"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[1:] != (2, 2):
            raise MaterialError("coefficient values must have shape (T, 2, 2)")
        if np.any(v[:, 0, 1] != v[:, 1, 0]):
            raise MaterialError("coefficient tensor is not symmetric")

    @classmethod
    def from_tensors(cls, values, name="custom"):
        values = np.asarray(values, dtype=float)
        lam = np.linalg.eigvalsh(values)
        alpha = float(lam[:, 0].min())
        if alpha <= 0:
            raise MaterialError(f"coefficient field is not uniformly elliptic (alpha={alpha:g})")
        return cls(values, alpha, name)

    def scaled(self, w: np.ndarray, name=None) -> "CoefficientField":
        """Element-wise product ``w_e * a_e`` (``w > 0``)."""
        w = np.asarray(w, dtype=float)
        return CoefficientField.from_tensors(self.values * w[:, None, None], name or self.name + "*w")


@dataclass(frozen=True, eq=False)
class DensityField:
    values: np.ndarray      # (T,)
    M: float                # integral over the mesh
    name: str = "custom"

    @classmethod
    def from_values(cls, values, areas, name="custom"):
        values = np.asarray(values, dtype=float)
        return cls(values, float(np.dot(values, areas)), name)

    def __neg__(self) -> "DensityField":
        return DensityField(-self.values, -self.M, "-" + self.name)

    def scaled(self, c: float) -> "DensityField":
        return DensityField(c * self.values, c * self.M, f"{c:g}*{self.name}")


def _local_centroids(mesh) -> np.ndarray:
    if isinstance(mesh, CellMesh):
        return mesh.centroids
    if isinstance(mesh, DomainMesh):
        return mesh.cell_mesh().centroids[mesh.cell_tri]
    raise TypeError(f"unsupported mesh type {type(mesh).__name__}")


def _lift(mesh, cell_values):
    if isinstance(mesh, DomainMesh):
        return mesh.lift(cell_values)
    return cell_values


def _cell_of(mesh) -> CellMesh:
    return mesh.cell_mesh() if isinstance(mesh, DomainMesh) else mesh


def preset_coefficients(name: str, mesh) -> CoefficientField:
    """``identity`` or ``layered`` (``(2 + cos 2 pi y1) Id`` at triangle centroids)."""
    cell = _cell_of(mesh)
    nt = cell.n_triangles
    if name == "identity":
        s = np.ones(nt)
    elif name == "layered":
        s = 2.0 + np.cos(2 * np.pi * cell.centroids[:, 0])
    else:
        raise MaterialError(f"unknown coefficient preset {name!r}")
    vals = _lift(mesh, s[:, None, None] * np.eye(2))
    # both presets satisfy 2 + cos >= 1
    return CoefficientField(vals, float(min(1.0, _lift(mesh, s).min())), name)


def preset_density(case: str, mesh) -> DensityField:
    """Two-valued density split along y1 = 1/2.

    positive_avg: 2 | -1, zero_avg: 1 | -1, negative_avg: -(positive_avg).
    """
    cell = _cell_of(mesh)
    V = cell.vertices[cell.triangles][:, :, 0]
    left = (V <= 0.5).all(axis=1)
    right = (V >= 0.5).all(axis=1)
    if not (left | right).all():
        raise MaterialError("mesh triangles straddle the density split line y1 = 1/2")
    if case == "positive_avg":
        lo, hi = 2.0, -1.0
    elif case == "zero_avg":
        lo, hi = 1.0, -1.0
    elif case == "negative_avg":
        lo, hi = -2.0, 1.0
    else:
        raise MaterialError(f"unknown density preset {case!r}")
    vals = _lift(mesh, np.where(left, lo, hi))
    return DensityField.from_values(vals, mesh.areas, case)


def validate_indefinite(d: DensityField, areas: np.ndarray) -> dict:
    pos = float(areas[d.values > 0].sum())
    neg = float(areas[d.values < 0].sum())
    if pos == 0 or neg == 0:
        raise MaterialError(
            f"density does not change sign (positive area {pos:g}, negative area {neg:g})")
    return {"positive_area": pos, "negative_area": neg}


def load_field_table(path, n_elements: int) -> np.ndarray:
    """Read ``elem_index value(s)`` lines into an ``(n_elements, k)`` array."""
    rows = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            rows[int(parts[0])] = [float(p) for p in parts[1:]]
    if sorted(rows) != list(range(n_elements)):
        raise MaterialError(f"field table must list every element 0..{n_elements - 1} exactly once")
    return np.array([rows[i] for i in range(n_elements)])


def coefficients_from_table(path, mesh) -> CoefficientField:
    """Columns: one value (isotropic), or ``a11 a12 a22``."""
    t = load_field_table(path, mesh.n_triangles if hasattr(mesh, "n_triangles") else len(mesh.triangles))
    if t.shape[1] == 1:
        vals = t[:, 0, None, None] * np.eye(2)
    elif t.shape[1] == 3:
        vals = np.stack([np.stack([t[:, 0], t[:, 1]], -1), np.stack([t[:, 1], t[:, 2]], -1)], 1)
    else:
        raise MaterialError("coefficient table needs 1 or 3 values per element")
    return CoefficientField.from_tensors(vals, "table")


def density_from_table(path, mesh) -> DensityField:
    t = load_field_table(path, len(mesh.triangles))
    if t.shape[1] != 1:
        raise MaterialError("density table needs one value per element")
    return DensityField.from_values(t[:, 0], mesh.areas, "table")
