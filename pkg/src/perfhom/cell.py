"""Cell problems, homogenized tensors and the local spectral problem on Y*."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .assembly import (assemble_functionals, assemble_stiffness, assemble_weighted_mass,
                       gradients, harmonic_fill, mean_weights, periodic_dofmap)
from .geometry import CellGeometry, CellMesh, build_cell_mesh
from .materials import CoefficientField, DensityField
from .pencilsolve import deflate_constants, solve_indefinite_pencil

M_ZERO_TOL = 1e-12


class CellError(RuntimeError):
    pass


def regime_of(M: float) -> str:
    if abs(M) <= M_ZERO_TOL:
        return "M_zero"
    return "M_pos" if M > 0 else "M_neg"


def _mean_zero_solve(K: sp.spmatrix, w: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``K u = rhs`` on ``{w . u = 0}`` with one Lagrange multiplier row."""
    n = K.shape[0]
    A = sp.bmat([[K, sp.csr_matrix(w[:, None])], [sp.csr_matrix(w[None, :]), None]], format="csc")
    b = np.concatenate([rhs, [0.0]])
    x = spsolve(A, b)
    if not np.all(np.isfinite(x)):
        raise CellError("singular cell system (meshing bug?)")
    u = x[:n]
    res = np.linalg.norm(K @ u + w * x[n] - rhs)
    if res > 1e-10 * max(np.linalg.norm(rhs), 1.0):
        raise CellError(f"cell solve residual {res:.3e} above tolerance")
    return u


@dataclass(frozen=True, eq=False)
class _CellSystem:
    mesh: CellMesh
    dofmap: object
    K: sp.csr_matrix
    w: np.ndarray
    l: dict


def _system(mesh: CellMesh, coeff: CoefficientField, density: Optional[DensityField] = None) -> _CellSystem:
    dm = periodic_dofmap(mesh, mean_zero=True)
    K = assemble_stiffness(mesh, coeff, dm).matrix
    return _CellSystem(mesh, dm, K, mean_weights(mesh, dm), assemble_functionals(mesh, coeff, density, dm))


def solve_cell_corrector(mesh: CellMesh, coeff: CoefficientField, j: int) -> np.ndarray:
    """Periodic mean-zero ``chi^j`` with ``a(chi^j, v) = l_j(v)``; returns vertex values."""
    if j not in (1, 2):
        raise ValueError("j must be 1 or 2")
    S = _system(mesh, coeff)
    return S.dofmap.expand(_mean_zero_solve(S.K, S.w, S.l[f"l{j}"]))


def solve_cell_corrector_rho(mesh: CellMesh, coeff: CoefficientField, density: DensityField) -> np.ndarray:
    """``chi^0`` with ``a(chi^0, v) = int rho v``; only defined when the density averages to zero."""
    if abs(density.M) > M_ZERO_TOL:
        raise CellError(f"chi^0 needs a zero-average density, got M = {density.M:.6g}")
    S = _system(mesh, coeff, density)
    return S.dofmap.expand(_mean_zero_solve(S.K, S.w, S.l["l0"]))


def element_gradients(mesh, u: np.ndarray) -> np.ndarray:
    """Piecewise-constant gradient of a P1 field given at vertices, shape (T, 2)."""
    return np.einsum("tak,ta->tk", gradients(mesh), np.asarray(u)[mesh.triangles])


def homogenized_tensor(mesh: CellMesh, coeff: CoefficientField, chis, symmetrize: bool = True) -> np.ndarray:
    """``q_ij = int a_ij - sum_l int a_il d_l chi^j`` over Y*.

    The raw tensor is returned when ``symmetrize`` is false.
    """
    A = coeff.values
    area = mesh.areas
    q = np.einsum("t,tij->ij", area, A)
    for j, chi in enumerate(chis):
        g = element_gradients(mesh, chi)
        q[:, j] -= np.einsum("t,til,tl->i", area, A, g)
    if not symmetrize:
        return q
    asym = abs(q[0, 1] - q[1, 0])
    if asym > 1e-9:
        raise CellError(f"homogenized tensor asymmetric by {asym:.3e}")
    return 0.5 * (q + q.T)


def energy_tensor(mesh: CellMesh, coeff: CoefficientField, chis) -> np.ndarray:
    """Energy form ``int a D(y_i - chi^i) . D(y_j - chi^j)``; equals q for exact correctors."""
    E = np.stack([np.eye(2)[i] - element_gradients(mesh, chis[i]) for i in range(2)])  # (2, T, 2)
    return np.einsum("t,itk,tkl,jtl->ij", mesh.areas, E, coeff.values, E)


def bilinear(mesh, coeff, u, v) -> float:
    gu, gv = element_gradients(mesh, u), element_gradients(mesh, v)
    return float(np.einsum("t,tk,tkl,tl->", mesh.areas, gu, coeff.values, gv))


def l0_of(mesh, density: DensityField, v) -> float:
    """``int rho v`` for a P1 field v."""
    vm = np.asarray(v)[mesh.triangles].mean(axis=1)
    return float(np.dot(density.values * mesh.areas, vm))


def integral(mesh, v) -> float:
    return float(np.dot(mesh.areas, np.asarray(v)[mesh.triangles].mean(axis=1)))


def nu_squared(mesh: CellMesh, coeff: CoefficientField, chi0: np.ndarray, density: DensityField) -> float:
    """``nu^2 = a(chi^0, chi^0)``, cross-checked against ``int rho chi^0``."""
    nu2 = bilinear(mesh, coeff, chi0, chi0)
    if nu2 <= 0:
        raise CellError("nu^2 = 0: chi^0 vanishes and the zero-average limit problem degenerates")
    alt = l0_of(mesh, density, chi0)
    if abs(alt - nu2) > 1e-8 * abs(nu2):
        raise CellError(f"int rho chi^0 = {alt:.12g} disagrees with a(chi^0, chi^0) = {nu2:.12g}")
    return nu2


def local_spectrum(mesh: CellMesh, coeff: CoefficientField, density: DensityField):
    """First negative eigencouple of the periodic cell problem, ``theta > 0``.

    Normalised so that ``int_{Y*} theta^2 = |Y*|``.
    """
    if density.M <= M_ZERO_TOL:
        raise CellError("the sign-definite negative eigenfunction requires M > 0")
    dm = periodic_dofmap(mesh)
    K = assemble_stiffness(mesh, coeff, dm)
    B = assemble_weighted_mass(mesh, density, dm)
    red = deflate_constants(K, B)
    spec = solve_indefinite_pencil(red.K, red.B, 0, 1)
    lam = float(spec.lam_neg[0])
    theta = red.lift(spec.vec_neg[:, 0])
    if theta.sum() < 0:
        theta = -theta
    if theta.min() < -1e-10 * np.abs(theta).max():
        raise CellError("first negative eigenfunction changes sign; wrong eigenvalue selected")
    tv = dm.expand(theta)
    Mp = assemble_weighted_mass(mesh, None, dm).matrix
    ystar = float(mesh.areas.sum())
    tv = tv * np.sqrt(ystar / float(theta @ (Mp @ theta)))
    if rho_theta_squared(mesh, density, tv) >= 0:
        raise CellError("int rho theta^2 is not negative for the first negative eigenfunction")
    return lam, tv


def rho_theta_squared(mesh, density: DensityField, theta: np.ndarray) -> float:
    """``int_{Y*} rho theta^2`` (exact for P1 theta and piecewise-constant rho)."""
    return float(np.dot(density.values * mesh.areas, theta_squared_average(mesh, theta)))


def theta_squared_average(mesh, theta: np.ndarray) -> np.ndarray:
    """Exact element mean of the square of the P1 field theta."""
    t = np.asarray(theta)[mesh.triangles]
    return ((t * t).sum(1) + t[:, 0] * t[:, 1] + t[:, 1] * t[:, 2] + t[:, 0] * t[:, 2]) / 6.0


@dataclass(frozen=True, eq=False)
class WeightedCellData:
    coeff: CoefficientField
    density: DensityField
    chi: tuple
    q: np.ndarray
    M: float


def weighted_cell_data(mesh: CellMesh, coeff: CoefficientField, density: DensityField,
                       theta: np.ndarray) -> WeightedCellData:
    w = theta_squared_average(mesh, theta)
    at = coeff.scaled(w, name=f"theta2*{coeff.name}")
    rt = DensityField.from_values(density.values * w, mesh.areas, f"theta2*{density.name}")
    if rt.M >= 0:
        raise CellError(f"weighted density average {rt.M:.6g} is not negative")
    chis = tuple(solve_cell_corrector(mesh, at, j) for j in (1, 2))
    qt = homogenized_tensor(mesh, at, chis)
    return WeightedCellData(at, rt, chis, qt, rt.M)


# ---------------------------------------------------------------- model

@dataclass
class HomogenizedModel:
    regime: str
    m: int
    hole: Optional[tuple]
    coeff_name: str
    density_name: str
    area: float                     # |Y*|
    M: float
    q: np.ndarray
    chi: tuple                      # vertex values on the cell mesh
    chi0: Optional[np.ndarray] = None
    nu2: Optional[float] = None
    lambda1neg: Optional[float] = None
    theta1neg: Optional[np.ndarray] = None
    q_tilde: Optional[np.ndarray] = None
    chi_tilde: Optional[tuple] = None
    M_tilde: Optional[float] = None
    hole_kind: str = "square"
    extras: dict = field(default_factory=dict)

    def geometry(self) -> CellGeometry:
        return CellGeometry(self.hole_kind, self.hole, self.m)

    def cell_mesh(self) -> CellMesh:
        return build_cell_mesh(self.geometry())

    def to_dict(self) -> dict:
        def arr(x):
            if x is None:
                return None
            if isinstance(x, tuple):
                return [np.asarray(c).tolist() for c in x]
            return np.asarray(x).tolist()
        return {
            "regime": self.regime, "m": self.m,
            "hole": list(self.hole) if self.hole is not None else None,
            "hole_kind": self.hole_kind,
            "coeff": self.coeff_name, "density": self.density_name,
            "area": self.area, "M": self.M, "q": arr(self.q), "chi": arr(self.chi),
            "chi0": arr(self.chi0), "nu2": self.nu2, "lambda1neg": self.lambda1neg,
            "theta1neg": arr(self.theta1neg), "q_tilde": arr(self.q_tilde),
            "chi_tilde": arr(self.chi_tilde), "M_tilde": self.M_tilde,
            "extras": self.extras,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HomogenizedModel":
        def arr(x):
            return None if x is None else np.array(x, dtype=float)

        def tup(x):
            return None if x is None else tuple(np.array(c, dtype=float) for c in x)
        return cls(
            regime=d["regime"], m=d["m"], hole=tuple(d["hole"]) if d["hole"] is not None else None,
            coeff_name=d["coeff"], density_name=d["density"], area=d["area"], M=d["M"],
            q=arr(d["q"]), chi=tup(d["chi"]), chi0=arr(d["chi0"]), nu2=d["nu2"],
            lambda1neg=d["lambda1neg"], theta1neg=arr(d["theta1neg"]), q_tilde=arr(d["q_tilde"]),
            chi_tilde=tup(d["chi_tilde"]), M_tilde=d["M_tilde"], hole_kind=d.get("hole_kind", "square"),
            extras=d.get("extras", {}),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "HomogenizedModel":
        return cls.from_dict(json.loads(text))


def build_model(mesh: CellMesh, coeff: CoefficientField, density: DensityField) -> HomogenizedModel:
    """Everything the limit problems consume, for the regime fixed by the sign of M."""
    regime = regime_of(density.M)
    chis = tuple(solve_cell_corrector(mesh, coeff, j) for j in (1, 2))
    q = homogenized_tensor(mesh, coeff, chis)
    g = mesh.geometry
    model = HomogenizedModel(regime, mesh.m, g.hole_extent, coeff.name, density.name,
                             float(mesh.areas.sum()), density.M, q, chis, hole_kind=g.hole_kind)
    if regime == "M_zero":
        chi0 = solve_cell_corrector_rho(mesh, coeff, density)
        model.chi0 = chi0
        model.nu2 = nu_squared(mesh, coeff, chi0, density)
        model.extras["rho_chi"] = [l0_of(mesh, density, c) for c in chis]
    else:
        # M < 0 is the M > 0 problem for -rho
        dens = density if regime == "M_pos" else -density
        lam, theta = local_spectrum(mesh, coeff, dens)
        wd = weighted_cell_data(mesh, coeff, dens, theta)
        model.lambda1neg = lam
        model.theta1neg = theta
        model.q_tilde = wd.q
        model.chi_tilde = wd.chi
        model.M_tilde = wd.M
        model.extras["weighted_density"] = "rho" if regime == "M_pos" else "-rho"
    return model


def extend_into_hole(mesh: CellMesh, values: np.ndarray) -> np.ndarray:
    """Harmonic extension of a Y* field into T on the hole-filled cell mesh."""
    filled = mesh.filled()
    hole = mesh.geometry.hole_mask(mesh.m)
    ts = filled.grid.tri_square
    return harmonic_fill(filled, mesh.n_vertices, hole[ts[:, 0], ts[:, 1]], values)
