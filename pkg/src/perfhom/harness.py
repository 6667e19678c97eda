"""ε-sweeps per regime, convergence diagnostics and report files."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import __version__
from .assembly import assemble_weighted_mass, full_dofmap
from .cell import HomogenizedModel, build_model, theta_squared_average
from .finescale import (Extension, harmonic_extension, solve_eps_spectrum,
                        two_scale_pairing)
from .geometry import DEFAULT_HOLE, CellGeometry, DomainMesh, build_cell_mesh, build_domain_mesh, locate
from .limits import (CorrectorField, LimitSolution, corrector_field, limit_negative, limit_pencil,
                     limit_positive, p1_gradient)
from .materials import (CoefficientField, DensityField, preset_coefficients, preset_density)

CSV_COLUMNS = ("regime", "n", "eps", "k", "side", "lambda_raw", "lambda_transformed", "limit",
               "abs_err", "rel_err", "corrector_E", "factor_resid")
DIAGNOSTICS = ("corrector", "factorization", "pairing")
DEFAULT_DENSITY = {"M_pos": "positive_avg", "M_zero": "zero_avg", "M_neg": "negative_avg"}


class PlanError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems) if not isinstance(problems, str) else [problems]
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class SweepPlan:
    regime: str = "M_pos"
    ns: tuple = (2, 4, 8)
    m: int = 8
    s: int = 8
    limit_grid: int = 128
    count: int = 2
    coeff: str = "identity"
    density: Optional[str] = None
    hole_kind: str = "square"
    hole: Optional[tuple] = DEFAULT_HOLE
    diagnostics: tuple = DIAGNOSTICS
    budget: int = 100_000
    # amplitude of the zero-average limit eigenfunctions used for function comparisons:
    # "derived" = 1/(2 λ0 ν²) (what the ε-normalization produces), "stated" = 1/(λ0 ν²)
    zero_avg_amplitude: str = "derived"

    @property
    def density_case(self) -> str:
        return self.density or DEFAULT_DENSITY.get(self.regime, "positive_avg")

    def geometry(self, m: int) -> CellGeometry:
        return CellGeometry(self.hole_kind, self.hole, m)

    def problems(self) -> list:
        out = []
        if self.regime not in DEFAULT_DENSITY:
            out.append(f"unknown regime {self.regime!r}")
        elif DEFAULT_DENSITY[self.regime] != self.density_case and self.density is not None:
            out.append(f"density case {self.density_case!r} does not belong to regime {self.regime!r}")
        if not self.ns:
            out.append("the n list is empty")
        elif any(b <= a for a, b in zip(self.ns, self.ns[1:])):
            out.append(f"n list {list(self.ns)} must be strictly increasing (ε strictly decreasing)")
        if any(n < 1 for n in self.ns):
            out.append("every n must be positive")
        for name, val in (("m", self.m), ("s", self.s)):
            try:
                self.geometry(val).validate(val)
            except ValueError as exc:
                out.append(f"{name}: {exc}")
        if self.count < 1:
            out.append("count must be at least 1")
        unknown = set(self.diagnostics) - set(DIAGNOSTICS)
        if unknown:
            out.append(f"unknown diagnostics {sorted(unknown)}")
        if "corrector" in self.diagnostics:
            bad = [n for n in self.ns if self.limit_grid % (n * self.s)]
            if bad:
                out.append(f"limit grid {self.limit_grid} is not a multiple of n*s for n in {bad}")
        if self.zero_avg_amplitude not in ("derived", "stated"):
            out.append("zero_avg_amplitude must be 'derived' or 'stated'")
        for n in self.ns:
            if (n * self.s + 1) ** 2 > self.budget:
                out.append(f"n={n}: {(n * self.s + 1) ** 2} vertices exceed the budget {self.budget}")
        return out

    def validate(self) -> None:
        p = self.problems()
        if p:
            raise PlanError(p)


@dataclass
class ConvergenceReport:
    plan: dict
    rows: list
    per_eps: list
    limits: dict
    metadata: dict
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"plan": self.plan, "rows": self.rows, "per_eps": self.per_eps,
                "limits": self.limits, "metadata": self.metadata}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=False)

    def column(self, name: str, side: str, k: int = 0) -> list:
        return [r[name] for r in self.rows if r["side"] == side and r["k"] == k]


def load_report(text: str) -> dict:
    return json.loads(text)


# ---------------------------------------------------------------- diagnostics

def _mass(mesh):
    return assemble_weighted_mass(mesh, None, full_dofmap(mesh)).matrix


def factorization_residual(u: np.ndarray, theta_eps: np.ndarray, v: np.ndarray, mesh: DomainMesh) -> float:
    """``||u - θ^ε v|| / ||u||`` in L²(Ω^ε), sign of v chosen to minimise it."""
    if not (len(u) == len(theta_eps) == len(v) == mesh.n_vertices):
        raise ValueError("fields do not live on the same mesh")
    Mm = _mass(mesh)
    w = theta_eps * v
    nu = np.sqrt(u @ (Mm @ u))
    best = min(np.sqrt(max((u - s * w) @ (Mm @ (u - s * w)), 0.0)) for s in (1.0, -1.0))
    return float(best / nu)


def corrector_energy(ext: Extension, corr: CorrectorField, eps: float, with_corrector: bool = True) -> float:
    """``|| D(P_ε u_ε) - D u0 - D_y u1(·, ·/ε) ||_{L²(Ω)}`` on the limit grid.

    The limit grid must refine the fine mesh so both gradients are constant
    on each evaluation triangle.  ``ext.values`` must already be sign aligned.
    """
    grid = corr.u0_mesh
    cent = grid.vertices[grid.triangles].mean(axis=1)
    fm = ext.filled
    i, j, up, _ = locate(cent, fm.grid.N)
    ft = fm.grid.square_tri[i, j, up]
    du = p1_gradient(fm, ext.values)[ft]
    target = corr.oscillating_gradient(cent, eps, with_corrector)
    d = du - target
    return float(np.sqrt(np.dot(grid.areas, (d * d).sum(1))))


def align_sign(ext_values: np.ndarray, filled: DomainMesh, u0: np.ndarray, grid: DomainMesh) -> float:
    """Sign s maximising ``∫ s P_ε u_ε · u0``, evaluated at the limit-grid vertices."""
    i, j, up, bary = locate(grid.vertices, filled.grid.N)
    t = filled.grid.square_tri[i, j, up]
    pu = np.einsum("pa,pa->p", bary, ext_values[filled.triangles[t]])
    return 1.0 if float(pu @ (_mass(grid) @ u0)) >= 0 else -1.0


def l2_norm_sq(mesh, u) -> float:
    return float(u @ (_mass(mesh) @ u))


# ---------------------------------------------------------------- sweep

@dataclass(frozen=True, eq=False)
class _Context:
    plan: SweepPlan
    model: HomogenizedModel
    cell_coeff: CoefficientField
    cell_density: DensityField      # the density of the plan (sign as given)
    lim_plus: LimitSolution         # limit for the "+" side
    lim_minus: LimitSolution        # limit for the "-" side
    flip: bool                      # M_neg: problem handled as M_pos for -rho


def _limits(plan: SweepPlan, model: HomogenizedModel):
    g, c = plan.limit_grid, plan.count
    if plan.regime == "M_zero":
        L = limit_pencil(model.q, model.nu2, c, g)
        return L, L
    M = model.M if plan.regime == "M_pos" else -model.M
    pos = limit_positive(model.q, M, c, g)
    neg = limit_negative(model.q_tilde, model.M_tilde, c, g)
    return (pos, neg) if plan.regime == "M_pos" else (neg, pos)


def _solve_one(ctx: _Context, n: int) -> dict:
    plan, model = ctx.plan, ctx.model
    t0 = time.perf_counter()
    mesh = build_domain_mesh(n, plan.s, plan.geometry(plan.s), plan.budget)
    cell_s = mesh.cell_mesh()
    coeff_s = preset_coefficients(plan.coeff, cell_s)
    dens_s = preset_density(plan.density_case, cell_s)
    coeff = CoefficientField(mesh.lift(coeff_s.values), coeff_s.alpha, coeff_s.name)
    dens = DensityField.from_values(mesh.lift(dens_s.values), mesh.areas, dens_s.name)
    norm = "eps" if plan.regime == "M_zero" else "unit"
    sol = solve_eps_spectrum(mesh, coeff, dens, plan.count, plan.count, norm)
    out = {"n": n, "mesh": mesh, "sol": sol, "weighted": None}
    if plan.regime != "M_zero" and "factorization" in plan.diagnostics:
        # weighted problem on the fine mesh; theta lives on the cell mesh of resolution s
        wmodel = model if plan.m == plan.s else None
        if wmodel is None:
            wmodel = build_model(cell_s, coeff_s, dens_s)
        theta = wmodel.theta1neg
        w = theta_squared_average(cell_s, theta)
        sgn = 1.0 if plan.regime == "M_pos" else -1.0
        at = CoefficientField.from_tensors(mesh.lift(coeff_s.values * w[:, None, None]), "theta2*a")
        rt = DensityField.from_values(mesh.lift(sgn * dens_s.values * w), mesh.areas, "theta2*rho")
        wsol = solve_eps_spectrum(mesh, at, rt, 1, plan.count, "unit")
        out["weighted"] = (wsol, mesh.lift_nodal(theta), wmodel.lambda1neg)
    out["seconds"] = time.perf_counter() - t0
    return out


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("PERFHOM_THREADS", "1")))
    except ValueError:
        return 1


def _f(x) -> Optional[float]:
    return None if x is None else float(x)


def run_sweep(plan: SweepPlan, model: Optional[HomogenizedModel] = None) -> ConvergenceReport:
    """Cell model, limit problems and one fine solve per n, with all requested diagnostics."""
    plan.validate()
    t_start = time.perf_counter()
    cell = build_cell_mesh(plan.geometry(plan.m))
    coeff = preset_coefficients(plan.coeff, cell)
    dens = preset_density(plan.density_case, cell)
    if model is None:
        model = build_model(cell, coeff, dens)
    expected = {"M_pos": "M_pos", "M_zero": "M_zero", "M_neg": "M_neg"}[plan.regime]
    if model.regime != expected:
        raise PlanError(f"density average {model.M:.6g} puts the problem in {model.regime}, not {plan.regime}")
    lp, lm = _limits(plan, model)
    ctx = _Context(plan, model, coeff, dens, lp, lm, plan.regime == "M_neg")
    with ThreadPoolExecutor(max_workers=min(_threads(), len(plan.ns))) as pool:
        runs = list(pool.map(lambda n: _solve_one(ctx, n), plan.ns))

    rows, per_eps = [], []
    timings = {"total": None, "per_n": {}}
    corr_cache = {}
    for run in runs:
        n, mesh, sol = run["n"], run["mesh"], run["sol"]
        eps = mesh.eps
        timings["per_n"][str(n)] = run["seconds"]
        info = {"n": n, "eps": eps, "n_dofs": sol.dofmap.n_dofs}
        # normalisation identities
        info["normalization_error"] = {
            s: float(np.abs(sol.gram(s) - sol.normalization_target(s) * np.eye(plan.count)).max())
            for s in ("+", "-")}
        corrE, corrE0, fres = {}, {}, {}
        ext_cache = {}

        def extension(side, k):
            if (side, k) not in ext_cache:
                ext_cache[(side, k)] = harmonic_extension(mesh, sol.vertex_values(side, k))
            return ext_cache[(side, k)]

        # corrector energy for k = 0 on the sides where a corrector is defined
        if "corrector" in plan.diagnostics:
            if plan.regime == "M_zero":
                sides = {"+": "M_zero", "-": "M_zero"}
            else:
                sides = {("+" if plan.regime == "M_pos" else "-"): "M_pos_plus"}
            for side, reg in sides.items():
                lim = lp if side == "+" else lm
                key = (reg, side)
                if key not in corr_cache:
                    corr_cache[key] = corrector_field(reg, lim, 0, model, side if reg == "M_zero" else "+")
                    if reg == "M_zero" and plan.zero_avg_amplitude == "derived":
                        c = corr_cache[key]
                        corr_cache[key] = CorrectorField(c.regime, c.u0_mesh, c.u0 / np.sqrt(2.0), c.lam0,
                                                         c.cell_filled, c.chi, c.chi0)
                corr = corr_cache[key]
                ext = extension(side, 0)
                sgn = align_sign(ext.values, ext.filled, corr.u0, corr.u0_mesh)
                aligned = Extension(ext.filled, sgn * ext.values, ext.constant)
                corrE[side] = corrector_energy(aligned, corr, eps, True)
                corrE0[side] = corrector_energy(aligned, corr, eps, False)
                info.setdefault("extension_constant", {})[side] = ext.constant
                info.setdefault("amplitude_ratio", {})[side] = (
                    l2_norm_sq(ext.filled, ext.values) / l2_norm_sq(corr.u0_mesh, corr.u0))
                if plan.regime == "M_zero" and "pairing" in plan.diagnostics:
                    info.setdefault("pairing", {})[side] = _pairing(plan, mesh, aligned, corr, model, eps)
        info["corrector_E_without"] = corrE0
        # factorization on the side carrying the blow-up
        if run["weighted"] is not None:
            wsol, theta_eps, lam1 = run["weighted"]
            side = "-" if plan.regime == "M_pos" else "+"
            sgn = 1.0 if plan.regime == "M_pos" else -1.0
            for k in range(plan.count):
                v = wsol.vertex_values("-", k)
                fres[k] = factorization_residual(sol.vertex_values(side, k), theta_eps, v, mesh)
            info["weighted_normalization_error"] = float(
                np.abs(wsol.gram("-") + np.eye(plan.count)).max())
            xi_eps = wsol.eigvals("-")
            lam_side = sol.eigvals(side)
            info["xi_eps"] = [float(sgn * x) for x in xi_eps]
            info["o1_magnitude"] = [float(abs((lam_side[k] - sgn * lam1 / eps**2) - sgn * xi_eps[k]))
                                    for k in range(plan.count)]
        for k in range(plan.count):
            for side in ("+", "-"):
                raw = float(sol.eigvals(side)[k])
                lim = lp if side == "+" else lm
                if plan.regime == "M_zero":
                    trans = eps * raw
                    target = float(lim.eigenvalues[k] if side == "+" else lim.eigenvalues_neg[k])
                elif lim.regime == "M_pos_minus":
                    shift = model.lambda1neg / eps**2
                    trans = raw - shift if side == "-" else raw + shift
                    target = float(lim.eigenvalues[k] if side == "-" else -lim.eigenvalues[k])
                else:
                    trans = raw
                    target = float(lim.eigenvalues[k] if side == "+" else -lim.eigenvalues[k])
                err = abs(trans - target)
                rows.append({
                    "regime": plan.regime, "n": n, "eps": eps, "k": k + 1, "side": side,
                    "lambda_raw": raw, "lambda_transformed": float(trans), "limit": target,
                    "abs_err": float(err), "rel_err": float(err / abs(target)),
                    "corrector_E": _f(corrE.get(side)) if k == 0 else None,
                    "factor_resid": _f(fres.get(k)) if side == ("-" if plan.regime == "M_pos" else "+")
                    and plan.regime != "M_zero" else None,
                })
        if plan.regime == "M_zero":
            lpz, lmz = sol.eigvals("+"), sol.eigvals("-")
            info["pencil_asymmetry"] = [float(abs(eps * (lpz[k] + lmz[k]))) for k in range(plan.count)]
        per_eps.append(info)
    timings["total"] = time.perf_counter() - t_start
    rows.sort(key=lambda r: (-r["eps"], r["k"], r["side"]))
    for r in rows:
        for key in ("abs_err", "rel_err"):
            if not np.isfinite(r[key]):
                raise RuntimeError(f"non-finite {key} in row {r}")
    model_json = model.to_json()
    limits = {"plus": _limit_summary(lp), "minus": _limit_summary(lm),
              "cell": {"q": model.q.tolist(), "M": model.M, "nu2": model.nu2,
                       "lambda1neg": model.lambda1neg, "M_tilde": model.M_tilde,
                       "q_tilde": None if model.q_tilde is None else model.q_tilde.tolist()}}
    meta = {"model_sha256": hashlib.sha256(model_json.encode()).hexdigest(),
            "versions": {"perfhom": __version__, "numpy": np.__version__, "scipy": scipy.__version__}}
    plan_d = asdict(plan)
    plan_d["ns"] = list(plan.ns)
    plan_d["hole"] = None if plan.hole is None else list(plan.hole)
    plan_d["diagnostics"] = list(plan.diagnostics)
    return ConvergenceReport(plan_d, rows, per_eps, limits, meta, timings)


def _limit_summary(L: LimitSolution) -> dict:
    return {"regime": L.regime, "grid": L.grid, "eigenvalues": L.eigenvalues.tolist(),
            "norm_target": L.norm_target.tolist(), "clusters": L.clusters}


def _pairing(plan: SweepPlan, mesh: DomainMesh, ext: Extension, corr: CorrectorField,
             model: HomogenizedModel, eps: float) -> dict:
    """Scaled pairing with ψ = ψ0(x) ρ(y) χ_{Y*}(y), ψ0 = sin(πx1) sin(πx2), against its two-scale limit."""
    filled = ext.filled
    psi0 = np.sin(np.pi * filled.vertices[:, 0]) * np.sin(np.pi * filled.vertices[:, 1])
    cell_s = mesh.cell_mesh()
    dens_s = preset_density(plan.density_case, cell_s)
    fcell = cell_s.filled()
    hole = plan.geometry(plan.s).hole_mask(plan.s)
    ts = fcell.grid.tri_square
    inside = ~hole[ts[:, 0], ts[:, 1]]
    rho_filled = np.zeros(fcell.n_triangles)
    # both cell meshes list triangles square by square in the same order
    rho_filled[inside] = dens_s.values
    value = two_scale_pairing(filled, ext.values, psi0, rho_filled, "element") / eps
    # ∫ψ0(x) ∫_{Y*} u1(x,y) ρ(y) dy dx with u1 = λ0 u0 χ^0 - Σ ∂_j u0 χ^j
    grid = corr.u0_mesh
    gpsi = np.sin(np.pi * grid.vertices[:, 0]) * np.sin(np.pi * grid.vertices[:, 1])
    r = np.asarray(model.extras["rho_chi"])
    Mg = _mass(grid)
    a1 = corr.lam0 * model.nu2 * float(gpsi @ (Mg @ corr.u0))
    du0 = p1_gradient(grid, corr.u0)
    psi_mean = gpsi[grid.triangles].mean(1) * grid.areas
    a2 = float(psi_mean @ (du0 @ r))
    target = a1 - a2
    return {"scaled": value, "limit": target, "abs_err": abs(value - target)}


# ---------------------------------------------------------------- output

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def report_csv(report: ConvergenceReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in report.rows:
        w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def _svg_loglog(title: str, series: dict) -> str:
    """Log-log line chart, one polyline per series ``{label: [(x, y), ...]}``."""
    W, H, pad = 480, 360, 50
    pts = [(x, y) for s in series.values() for x, y in s if x > 0 and y > 0]
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           f'<text x="{W // 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
           f'<rect x="{pad}" y="{pad}" width="{W - 2 * pad}" height="{H - 2 * pad}" fill="none" stroke="black"/>']
    if pts:
        lx = np.log10([p[0] for p in pts])
        ly = np.log10([p[1] for p in pts])
        x0, x1 = lx.min(), lx.max()
        y0, y1 = ly.min(), ly.max()
        x1 = x1 if x1 > x0 else x0 + 1
        y1 = y1 if y1 > y0 else y0 + 1

        def px(x, y):
            u = pad + (np.log10(x) - x0) / (x1 - x0) * (W - 2 * pad)
            v = H - pad - (np.log10(y) - y0) / (y1 - y0) * (H - 2 * pad)
            return f"{u:.2f},{v:.2f}"
        for idx, (label, s) in enumerate(series.items()):
            good = [(x, y) for x, y in s if x > 0 and y > 0]
            c = colors[idx % len(colors)]
            out.append(f'<polyline fill="none" stroke="{c}" points="{" ".join(px(x, y) for x, y in good)}">'
                       f'<title>{label}</title></polyline>')
            out.append(f'<text x="{W - pad + 4}" y="{pad + 14 * (idx + 1)}" font-size="10" fill="{c}">{label}</text>')
        out.append(f'<text x="{pad}" y="{H - 15}" font-size="10">log10 eps in [{x0:.3g}, {x1:.3g}]</text>')
        out.append(f'<text x="{pad}" y="{pad - 6}" font-size="10">log10 value in [{y0:.3g}, {y1:.3g}]</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def report_svgs(report: ConvergenceReport) -> dict:
    regime = report.plan["regime"]
    out = {}
    for quantity in ("abs_err", "corrector_E", "factor_resid"):
        series = {}
        for r in report.rows:
            if r[quantity] is None:
                continue
            series.setdefault(f"k={r['k']} side={r['side']}", []).append((r["eps"], r[quantity]))
        if series:
            out[f"{regime}_{quantity}.svg"] = _svg_loglog(f"{regime} {quantity}", series)
    return out


def emit_report(report: ConvergenceReport, outdir, formats=("csv", "json", "svg")) -> list:
    """Write ``{regime}_{quantity}.{ext}`` files under ``outdir``; returns the paths."""
    outdir = Path(outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {outdir}: {exc}") from exc
    regime = report.plan["regime"]
    files = {}
    if "csv" in formats:
        files[f"{regime}_eigenvalues.csv"] = report_csv(report)
    if "json" in formats:
        files[f"{regime}_report.json"] = report.to_json()
        files[f"{regime}_timing.json"] = json.dumps(report.timings, indent=1, sort_keys=True)
    if "svg" in formats:
        files.update(report_svgs(report))
    written = []
    for name, text in files.items():
        p = outdir / name
        p.write_text(text)
        written.append(p)
    return written
