import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from perfhom.cell import build_model
from perfhom.limits import (LimitError, corrector_field, corrector_residual, limit_negative,
                            limit_orthonormality_check, limit_pencil, limit_positive)
from perfhom.materials import preset_coefficients, preset_density

TWO_PI2 = 2 * np.pi ** 2


@pytest.fixture(scope="module")
def lap():
    return limit_positive(np.eye(2), 1.0, 3, grid=64)


def test_laplacian_eigenvalues(lap):
    assert abs(lap.eigenvalues[0] - TWO_PI2) / TWO_PI2 < 0.01
    assert np.allclose(lap.eigenvalues[1:], 5 * np.pi ** 2, rtol=0.02)
    assert np.array_equal(lap.mu, lap.eigenvalues)


def test_average_scales_eigenvalues(lap):
    half = limit_positive(np.eye(2), 0.5, 3, grid=64)
    assert np.allclose(half.eigenvalues, 2 * lap.eigenvalues, rtol=1e-12)
    assert np.allclose(np.diag(half.gram()), 2.0, rtol=1e-10)
    q3 = limit_positive(3 * np.eye(2), 1.0, 3, grid=64)
    assert np.allclose(q3.eigenvalues, 3 * lap.eigenvalues, rtol=1e-10)


def test_negative_side_sign():
    sol = limit_negative(np.eye(2), -0.25, 2, grid=32)
    assert np.all(sol.eigenvalues < 0)
    assert np.allclose(sol.eigenvalues, -4 * sol.mu)
    assert np.allclose(np.diag(sol.gram()), 4.0, rtol=1e-10)


def test_pencil_branches():
    sol = limit_pencil(np.eye(2), 1.0, 2, grid=64)
    assert abs(sol.eigenvalues[0] - np.pi * np.sqrt(2)) < 0.03
    assert np.array_equal(sol.eigenvalues_neg, -sol.eigenvalues)
    assert np.allclose(np.diag(sol.gram()), 1.0 / sol.eigenvalues, rtol=1e-10)
    nu = 0.5
    sol4 = limit_pencil(np.eye(2), nu ** 2, 2, grid=64)
    assert np.allclose(sol4.eigenvalues, sol.eigenvalues / nu, rtol=1e-12)


@pytest.mark.parametrize("make", [lambda: limit_positive(np.diag([1.0, 2.0]), 0.4, 4, 32),
                                  lambda: limit_negative(np.eye(2), -0.3, 4, 32),
                                  lambda: limit_pencil(np.eye(2), 0.02, 4, 32)])
def test_orthonormality(make):
    rep = limit_orthonormality_check(make())
    assert rep.ok, (rep.max_abs_error, rep.max_rel_diag_error)


def test_first_mode_is_positive_and_symmetric(lap):
    u = lap.vectors[:, 0]
    mesh = lap.get_mesh()
    assert u.min() > -1e-12
    key = {tuple(k): i for i, k in enumerate(np.round(mesh.vertices * 64).astype(int).tolist())}
    flipped = np.array([u[key[(64 - i, 64 - j)]] for i, j in np.round(mesh.vertices * 64).astype(int)])
    assert np.allclose(u, flipped, atol=1e-10)


def test_rejects_bad_inputs():
    with pytest.raises(LimitError):
        limit_positive(np.eye(2), 0.0, 1, 8)
    with pytest.raises(LimitError):
        limit_negative(np.eye(2), 0.1, 1, 8)
    with pytest.raises(LimitError):
        limit_pencil(np.eye(2), 0.0, 1, 8)
    with pytest.raises(LimitError):
        limit_positive(np.array([[1.0, 0.5], [0.0, 1.0]]), 1.0, 1, 8)
    with pytest.raises(LimitError):
        limit_positive(np.diag([1.0, -1.0]), 1.0, 1, 8)


def test_to_dict_is_json(lap):
    d = json.loads(json.dumps(limit_pencil(np.eye(2), 0.5, 1, 8).to_dict()))
    assert d["regime"] == "M_zero" and len(d["vectors"]) == 1


def _periodic_test_field(cell, a, b):
    y = cell.vertices
    return np.cos(2 * np.pi * a * y[:, 0]) + np.sin(2 * np.pi * b * y[:, 1]) * np.cos(2 * np.pi * y[:, 0])


@settings(max_examples=20, deadline=None)
@given(d1=st.floats(-5, 5), d2=st.floats(-5, 5), u0=st.floats(-2, 2), lam=st.floats(-20, 20),
       a=st.integers(1, 3), b=st.integers(1, 3))
def test_corrector_cell_residual(models, d1, d2, u0, lam, a, b):
    """The first-order corrector solves its cell equation for every (D u0, u0, λ0)."""
    zero = models["zero_avg"]
    cell = zero.cell_mesh()
    coeff = preset_coefficients("identity", cell)
    v = _periodic_test_field(cell, a, b)
    r = corrector_residual(zero, coeff, preset_density("zero_avg", cell), np.array([d1, d2]), u0, lam, v)
    assert abs(r) < 1e-8
    pos = models["positive_avg"]
    r = corrector_residual(pos, coeff, None, np.array([d1, d2]), u0, 0.0, v)
    assert abs(r) < 1e-8


def test_corrector_vanishes_without_microstructure(plain8):
    model = build_model(plain8, preset_coefficients("identity", plain8), preset_density("positive_avg", plain8))
    assert max(np.abs(c).max() for c in model.chi) < 1e-12
    sol = limit_positive(model.q, model.M, 1, 16)
    corr = corrector_field("M_pos_plus", sol, 0, model)
    x = np.array([[0.3, 0.4], [0.71, 0.2]])
    assert np.allclose(corr.oscillating_gradient(x, 0.25), corr.oscillating_gradient(x, 0.25, False), atol=1e-12)
    assert np.allclose(corr.u1(x, x / 0.25), 0.0, atol=1e-12)


def test_zero_average_corrector_terms(models):
    z = models["zero_avg"]
    sol = limit_pencil(z.q, z.nu2, 1, 16)
    cp = corrector_field("M_zero", sol, 0, z, "+")
    cm = corrector_field("M_zero", sol, 0, z, "-")
    assert cp.lam0 == -cm.lam0 > 0
    x = np.array([[0.5, 0.5]])            # D u0 = 0 at the symmetric peak up to grid error
    y = np.array([[0.1, 0.2]])
    diff = cp.u1(x, y) - cm.u1(x, y)
    assert abs(diff[0]) > 1e-3


def test_corrector_regime_mismatch(models, lap):
    with pytest.raises(LimitError):
        corrector_field("M_zero", lap, 0, models["positive_avg"])
    with pytest.raises(LimitError):
        corrector_field("M_pos_minus", lap, 0, models["positive_avg"])
    with pytest.raises(LimitError):
        corrector_field("bogus", lap, 0, models["positive_avg"])
