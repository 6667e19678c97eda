import csv
import io
import json

import numpy as np
import pytest

from perfhom.geometry import CellGeometry, build_domain_mesh
from perfhom.harness import (CSV_COLUMNS, PlanError, SweepPlan, emit_report, factorization_residual,
                             load_report, report_csv, run_sweep)

SMALL = dict(ns=(1, 2), limit_grid=32)


@pytest.fixture(scope="module")
def small_pos():
    return run_sweep(SweepPlan(regime="M_pos", **SMALL))


@pytest.fixture(scope="module")
def small_zero():
    return run_sweep(SweepPlan(regime="M_zero", **SMALL))


def test_rows_layout(small_pos):
    rows = small_pos.rows
    assert len(rows) == 2 * 2 * 2
    assert [r["eps"] for r in rows] == sorted((r["eps"] for r in rows), reverse=True)
    for r in rows:
        assert set(r) == set(CSV_COLUMNS)
        assert (r["corrector_E"] is not None) == (r["k"] == 1 and r["side"] == "+")
        assert (r["factor_resid"] is not None) == (r["side"] == "-")
        assert r["abs_err"] == pytest.approx(abs(r["lambda_transformed"] - r["limit"]))


def test_negative_side_is_shifted(small_pos):
    lam1 = small_pos.limits["cell"]["lambda1neg"]
    for r in small_pos.rows:
        if r["side"] == "-":
            assert r["lambda_transformed"] == pytest.approx(r["lambda_raw"] - lam1 / r["eps"] ** 2)
            assert r["limit"] < 0


def test_zero_average_rows(small_zero):
    for r in small_zero.rows:
        assert r["lambda_transformed"] == pytest.approx(r["eps"] * r["lambda_raw"])
        assert r["factor_resid"] is None
    for info in small_zero.per_eps:
        assert max(info["normalization_error"].values()) < 1e-10
        assert set(info["pairing"]) == {"+", "-"}


def test_csv_matches_rows(small_pos):
    text = report_csv(small_pos)
    reader = list(csv.reader(io.StringIO(text)))
    assert tuple(reader[0]) == CSV_COLUMNS
    for row, rec in zip(reader[1:], small_pos.rows):
        assert float(row[CSV_COLUMNS.index("lambda_raw")]) == rec["lambda_raw"]
        assert (row[CSV_COLUMNS.index("corrector_E")] == "") == (rec["corrector_E"] is None)


def test_json_roundtrip(small_pos):
    back = load_report(small_pos.to_json())
    assert back == json.loads(json.dumps(small_pos.to_dict()))
    assert back["rows"] == small_pos.rows
    assert "timings" not in back


def test_emit_files(tmp_path, small_pos):
    paths = emit_report(small_pos, tmp_path)
    names = sorted(p.name for p in paths)
    assert names == ["M_pos_abs_err.svg", "M_pos_corrector_E.svg", "M_pos_eigenvalues.csv",
                     "M_pos_factor_resid.svg", "M_pos_report.json", "M_pos_timing.json"]
    svg = (tmp_path / "M_pos_abs_err.svg").read_text()
    assert svg.count("<polyline") == 4 and svg.startswith("<svg")
    assert (tmp_path / "M_pos_corrector_E.svg").read_text().count("<polyline") == 1
    only_csv = emit_report(small_pos, tmp_path / "c", ("csv",))
    assert [p.name for p in only_csv] == ["M_pos_eigenvalues.csv"]


def test_sweep_is_deterministic(small_zero):
    again = run_sweep(SweepPlan(regime="M_zero", **SMALL))
    assert again.to_json() == small_zero.to_json()
    assert report_csv(again) == report_csv(small_zero)


def test_negative_regime_mirrors_positive(small_pos):
    neg = run_sweep(SweepPlan(regime="M_neg", **SMALL))
    flip = {"+": "-", "-": "+"}
    for a in small_pos.rows:
        b = next(r for r in neg.rows if r["n"] == a["n"] and r["k"] == a["k"] and r["side"] == flip[a["side"]])
        assert b["lambda_raw"] == pytest.approx(-a["lambda_raw"], rel=1e-12)
        assert b["abs_err"] == pytest.approx(a["abs_err"], rel=1e-9, abs=1e-12)


def test_plan_collects_every_problem():
    plan = SweepPlan(regime="M_zero", ns=(4, 2), density="positive_avg", limit_grid=30, count=0,
                     diagnostics=("corrector", "magic"), zero_avg_amplitude="half")
    with pytest.raises(PlanError) as info:
        plan.validate()
    text = "\n".join(info.value.problems)
    for needle in ("does not belong", "strictly increasing", "count", "magic", "zero_avg_amplitude"):
        assert needle in text
    assert len(info.value.problems) >= 5


def test_plan_budget_and_grid():
    with pytest.raises(PlanError, match="budget"):
        SweepPlan(ns=(2, 64), budget=10_000).validate()
    with pytest.raises(PlanError, match="multiple"):
        SweepPlan(ns=(3,), limit_grid=128).validate()
    SweepPlan(ns=(3,), limit_grid=96).validate()


def test_regime_density_mismatch_at_run():
    with pytest.raises(PlanError):
        run_sweep(SweepPlan(regime="M_bogus", **SMALL))


def test_factorization_residual_exact_product():
    mesh = build_domain_mesh(2, 8, CellGeometry(m=8))
    x = mesh.vertices
    theta = 1.0 + 0.5 * np.cos(2 * np.pi * x[:, 0])
    v = np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])
    assert factorization_residual(theta * v, theta, v, mesh) < 1e-15
    assert factorization_residual(-theta * v, theta, v, mesh) < 1e-15
    assert factorization_residual(theta * v, theta, 0 * v, mesh) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        factorization_residual(v[:-1], theta, v, mesh)
