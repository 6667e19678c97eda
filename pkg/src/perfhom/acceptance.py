"""The thirteen acceptance checks, shared by ``perfhom check`` and the test suite.

Each check returns a :class:`CriterionResult`; nothing here loosens a
threshold.  The three ε-sweeps are computed once per :class:`AcceptanceRun`.
"""
from __future__ import annotations

import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .cell import (build_model, homogenized_tensor, local_spectrum, rho_theta_squared,
                   solve_cell_corrector, weighted_cell_data)
from .geometry import CellGeometry, build_cell_mesh
from .harness import SweepPlan, emit_report, run_sweep
from .limits import limit_negative, limit_orthonormality_check, limit_pencil, limit_positive
from .materials import preset_coefficients, preset_density
from .pencilsolve import solve_indefinite_pencil

SWEEP_NS = (2, 4, 8)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] criterion {self.number:2d}: {self.title} -- {self.detail}"


def strictly_decreasing(xs) -> bool:
    return all(b < a for a, b in zip(xs, xs[1:]))


def _fmt(xs) -> str:
    return "[" + ", ".join(f"{x:.4g}" for x in xs) + "]"


@dataclass
class AcceptanceRun:
    ns: tuple = SWEEP_NS
    m: int = 8
    s: int = 8
    limit_grid: int = 128
    _cache: dict = field(default_factory=dict)

    def plan(self, regime: str) -> SweepPlan:
        return SweepPlan(regime=regime, ns=self.ns, m=self.m, s=self.s, limit_grid=self.limit_grid)

    def sweep(self, regime: str):
        if regime not in self._cache:
            self._cache[regime] = run_sweep(self.plan(regime))
        return self._cache[regime]

    # ------------------------------------------------------------ criteria

    def c1_tensor_exactness(self) -> CriterionResult:
        ident = build_cell_mesh(CellGeometry("square", None, 8))
        a = preset_coefficients("identity", ident)
        q_id = homogenized_tensor(ident, a, [solve_cell_corrector(ident, a, j) for j in (1, 2)])
        e_id = float(np.abs(q_id - np.eye(2)).max())
        lay = build_cell_mesh(CellGeometry("square", None, 64))
        b = preset_coefficients("layered", lay)
        q_l = homogenized_tensor(lay, b, [solve_cell_corrector(lay, b, j) for j in (1, 2)])
        ref = np.diag([np.sqrt(3.0), 2.0])
        rel = float(np.abs(np.diag(q_l) - np.diag(ref)).max() / np.sqrt(3.0))
        off = float(abs(q_l[0, 1]))
        ok = e_id <= 1e-12 and rel <= 1e-6 and off <= 1e-6
        return CriterionResult(1, "tensor exactness", ok,
                               f"identity max err {e_id:.2e} (tol 1e-12); layered m=64 rel err {rel:.2e} "
                               f"(tol 1e-6), q11={q_l[0, 0]:.10f}")

    def c2_tensor_structure(self) -> CriterionResult:
        worst_asym, worst_min = 0.0, np.inf
        for m in (8, 16):
            for hole in (None, (0.375, 0.625, 0.375, 0.625)):
                cell = build_cell_mesh(CellGeometry("square", hole, m))
                for cname in ("identity", "layered"):
                    a = preset_coefficients(cname, cell)
                    chis = [solve_cell_corrector(cell, a, j) for j in (1, 2)]
                    tensors = [homogenized_tensor(cell, a, chis, symmetrize=False)]
                    for case in ("positive_avg", "negative_avg"):
                        d = preset_density(case, cell)
                        dd = d if d.M > 0 else -d
                        _, theta = local_spectrum(cell, a, dd)
                        wd = weighted_cell_data(cell, a, dd, theta)
                        tensors.append(homogenized_tensor(cell, wd.coeff, wd.chi, symmetrize=False))
                    for q in tensors:
                        worst_asym = max(worst_asym, abs(q[0, 1] - q[1, 0]))
                        worst_min = min(worst_min, float(np.linalg.eigvalsh(0.5 * (q + q.T))[0]))
        ok = worst_asym <= 1e-10 and worst_min > 0
        return CriterionResult(2, "tensor structure", ok,
                               f"max |q12-q21| {worst_asym:.2e} (tol 1e-10); min eigenvalue {worst_min:.4g}")

    def c3_pencil_oracle(self, instances: int = 100, seed: int = 20240601) -> CriterionResult:
        rng = np.random.default_rng(seed)
        worst, sign_bad = 0.0, 0
        for _ in range(instances):
            n = int(rng.integers(2, 31))
            A = rng.standard_normal((n, n))
            K = A @ A.T + n * np.eye(n)
            B = rng.standard_normal((n, n))
            B = B + B.T
            w = sla.eig(K, B, right=False)
            w = np.real(w[np.isfinite(w)])
            pos, neg = np.sort(w[w > 0]), np.sort(w[w < 0])[::-1]
            spec = solve_indefinite_pencil(K, B, len(pos), len(neg))
            for got, ref in ((spec.lam_pos, pos), (spec.lam_neg, neg)):
                if len(got) != len(ref):
                    worst = np.inf
                    continue
                if len(ref):
                    worst = max(worst, float(np.max(np.abs(got - ref) / np.abs(ref))))
            for lam, V in ((spec.lam_pos, spec.vec_pos), (spec.lam_neg, spec.vec_neg)):
                q = np.einsum("ik,ik->k", V, B @ V)
                sign_bad += int(np.sum(np.sign(q) != np.sign(lam)))
        ok = worst <= 1e-10 and sign_bad == 0
        return CriterionResult(3, "indefinite pencil oracle equivalence", ok,
                               f"{instances} instances, max rel diff vs QZ {worst:.2e} (tol 1e-10), "
                               f"sign mismatches {sign_bad}")

    def c4_two_sequences(self) -> CriterionResult:
        missing = []
        for regime in ("M_pos", "M_zero", "M_neg"):
            rep = self.sweep(regime)
            for n in self.ns:
                sides = {r["side"] for r in rep.rows if r["n"] == n}
                pos = [r["lambda_raw"] for r in rep.rows if r["n"] == n and r["side"] == "+"]
                neg = [r["lambda_raw"] for r in rep.rows if r["n"] == n and r["side"] == "-"]
                if sides != {"+", "-"} or not all(x > 0 for x in pos) or not all(x < 0 for x in neg):
                    missing.append(f"{regime} n={n}")
        return CriterionResult(4, "two-sequence existence", not missing,
                               "all solves have both signed sequences" if not missing else f"missing: {missing}")

    def c5_theta_facts(self) -> CriterionResult:
        cell = build_cell_mesh(CellGeometry(m=self.m))
        a = preset_coefficients("identity", cell)
        d = preset_density("positive_avg", cell)
        lam, theta = local_spectrum(cell, a, d)
        rt2 = rho_theta_squared(cell, d, theta)
        w1 = weighted_cell_data(cell, a, d, theta)
        w2 = weighted_cell_data(cell, a, d, 2.0 * theta)
        x1 = limit_negative(w1.q, w1.M, 3, 32).eigenvalues
        x2 = limit_negative(w2.q, w2.M, 3, 32).eigenvalues
        inv = float(np.max(np.abs(x1 - x2) / np.abs(x1)))
        ok = lam < 0 and theta.min() > 0 and rt2 < 0 and inv <= 1e-10
        return CriterionResult(5, "theta facts", ok,
                               f"lambda1- {lam:.6g}, min theta {theta.min():.4g}, int rho theta^2 {rt2:.4g}, "
                               f"xi invariance {inv:.2e} (tol 1e-10)")

    def c6_positive_side(self) -> CriterionResult:
        rep = self.sweep("M_pos")
        err = rep.column("abs_err", "+", 1)
        rel = rep.column("rel_err", "+", 1)[-1]
        ok = strictly_decreasing(err) and rel <= 0.1
        return CriterionResult(6, "M>0 positive side", ok,
                               f"|lambda_eps - lambda_0| {_fmt(err)}, final rel err {rel:.4g} (tol 0.1)")

    def c7_negative_side(self) -> CriterionResult:
        rep = self.sweep("M_pos")
        err = rep.column("abs_err", "-", 1)
        res = rep.column("factor_resid", "-", 1)
        ok = strictly_decreasing(err) and strictly_decreasing(res)
        return CriterionResult(7, "M>0 negative side", ok,
                               f"shifted error {_fmt(err)}, factorization residual {_fmt(res)}")

    def c8_zero_average(self) -> CriterionResult:
        rep = self.sweep("M_zero")
        ep = rep.column("abs_err", "+", 1)
        em = rep.column("abs_err", "-", 1)
        asym = [e["pencil_asymmetry"][0] for e in rep.per_eps]
        scale = [abs(x) for x in rep.column("lambda_transformed", "+", 1)]
        # exact antisymmetry of the preset makes the sum vanish identically; roundoff floor accepted
        at_floor = all(a <= 1e-12 * s for a, s in zip(asym, scale))
        sym_ok = strictly_decreasing(asym) or at_floor
        model = self._model("zero_avg")
        L = limit_pencil(model.q, model.nu2, 2, 64)
        G = np.diag(L.gram())
        target = 1.0 / (np.sqrt(L.mu) * np.sqrt(model.nu2))
        nerr = float(np.max(np.abs(G - target) / target))
        ok = strictly_decreasing(ep) and strictly_decreasing(em) and sym_ok and nerr <= 1e-6
        return CriterionResult(8, "M=0 pencil limit", ok,
                               f"+ err {_fmt(ep)}, - err {_fmt(em)}, |eps(l+ + l-)| {_fmt(asym)}"
                               f"{' (roundoff floor)' if at_floor else ''}, normalization rel err {nerr:.2e}")

    def c9_corrector_decay(self) -> CriterionResult:
        parts, ok = [], True
        for regime, sides in (("M_pos", ("+",)), ("M_zero", ("+", "-"))):
            rep = self.sweep(regime)
            for side in sides:
                E = rep.column("corrector_E", side, 1)
                E0 = rep.per_eps[-1]["corrector_E_without"][side]
                good = strictly_decreasing(E) and E[-1] < E0
                ok &= good
                parts.append(f"{regime}{side} E {_fmt(E)} vs no-corrector {E0:.4g}")
        return CriterionResult(9, "corrector decay", ok, "; ".join(parts))

    def c10_scaled_pairing(self) -> CriterionResult:
        rep = self.sweep("M_zero")
        parts, ok = [], True
        for side in ("+", "-"):
            err = [e["pairing"][side]["abs_err"] for e in rep.per_eps]
            ok &= strictly_decreasing(err)
            parts.append(f"{side}: {_fmt(err)}")
        return CriterionResult(10, "scaled two-scale pairing", ok, "; ".join(parts))

    def c11_normalizations(self) -> CriterionResult:
        worst = 0.0
        for regime in ("M_pos", "M_zero", "M_neg"):
            rep = self.sweep(regime)
            for e in rep.per_eps:
                scale = e["eps"] if regime == "M_zero" else 1.0
                worst = max(worst, max(e["normalization_error"].values()) / scale)
                if "weighted_normalization_error" in e:
                    worst = max(worst, e["weighted_normalization_error"])
        pos_model = self._model("positive_avg")
        zero_model = self._model("zero_avg")
        reps = [limit_orthonormality_check(limit_positive(pos_model.q, pos_model.M, 4, 64)),
                limit_orthonormality_check(limit_negative(pos_model.q_tilde, pos_model.M_tilde, 4, 64)),
                limit_orthonormality_check(limit_pencil(zero_model.q, zero_model.nu2, 4, 64))]
        gram_err = max(r.max_abs_error / np.abs(np.diag(r.expected)).max() for r in reps)
        ok = worst <= 1e-8 and gram_err <= 1e-6
        return CriterionResult(11, "normalization identities", ok,
                               f"fine-scale max deviation {worst:.2e} (tol 1e-8), limit Gram rel {gram_err:.2e} (tol 1e-6)")

    def c12_negative_reduction(self) -> CriterionResult:
        a, b = self.sweep("M_pos"), self.sweep("M_neg")
        worst = 0.0
        for ra in a.rows:
            rb = next(r for r in b.rows if r["n"] == ra["n"] and r["k"] == ra["k"] and r["side"] != ra["side"])
            for key in ("lambda_raw", "lambda_transformed", "limit"):
                worst = max(worst, abs(ra[key] + rb[key]) / abs(ra[key]))
            for key in ("abs_err", "rel_err", "corrector_E", "factor_resid"):
                if (ra[key] is None) != (rb[key] is None):
                    worst = np.inf
                elif ra[key] is not None:
                    worst = max(worst, abs(ra[key] - rb[key]) / max(abs(ra[key]), 1e-300))
        return CriterionResult(12, "M<0 reduction", worst <= 1e-12,
                               f"max rel row difference {worst:.2e} (tol 1e-12)")

    def c13_determinism(self) -> CriterionResult:
        first = self.sweep("M_zero")
        second = run_sweep(self.plan("M_zero"))
        with tempfile.TemporaryDirectory() as tmp:
            d1, d2 = Path(tmp) / "a", Path(tmp) / "b"
            emit_report(first, d1, ("csv", "json"))
            emit_report(second, d2, ("csv", "json"))
            names = ("M_zero_eigenvalues.csv", "M_zero_report.json")
            same = all((d1 / n).read_bytes() == (d2 / n).read_bytes() for n in names)
        return CriterionResult(13, "determinism", same,
                               "CSV and JSON byte-identical across runs" if same else "outputs differ")

    # ------------------------------------------------------------ helpers

    def _model(self, case: str):
        key = ("model", case)
        if key not in self._cache:
            cell = build_cell_mesh(CellGeometry(m=self.m))
            self._cache[key] = build_model(cell, preset_coefficients("identity", cell), preset_density(case, cell))
        return self._cache[key]

    def checks(self) -> list:
        return [self.c1_tensor_exactness, self.c2_tensor_structure, self.c3_pencil_oracle,
                self.c4_two_sequences, self.c5_theta_facts, self.c6_positive_side, self.c7_negative_side,
                self.c8_zero_average, self.c9_corrector_decay, self.c10_scaled_pairing,
                self.c11_normalizations, self.c12_negative_reduction, self.c13_determinism]


def run_all(emit: Callable[[str], None] = print) -> list:
    run = AcceptanceRun()
    results = []
    for num, check in enumerate(run.checks(), 1):
        try:
            res = check()
        except Exception as exc:  # a crash is a failed criterion, reported on its line
            res = CriterionResult(num, check.__name__, False, f"raised {type(exc).__name__}: {exc}")
        emit(res.line())
        results.append(res)
    return results
