from types import SimpleNamespace

import numpy as np
import pytest

from perfhom.assembly import (AssemblyError, assemble_functionals, assemble_stiffness,
                              assemble_weighted_mass, dirichlet_dofmap, element_stiffness, full_dofmap,
                              gradients, mean_weights, periodic_dofmap, read_coo, write_coo)
from perfhom.geometry import CellGeometry, build_domain_mesh, unit_square_mesh
from perfhom.materials import CoefficientField, DensityField, preset_coefficients, preset_density
from perfhom.pencilsolve import dense_eig_oracle


def _ref_triangle():
    return SimpleNamespace(vertices=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
                           triangles=np.array([[0, 1, 2]]), areas=np.array([0.5]))


def test_reference_stiffness():
    t = _ref_triangle()
    K = element_stiffness(t, CoefficientField(np.eye(2)[None], 1.0))[0]
    assert np.allclose(K, [[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]], atol=1e-15)


def test_reference_anisotropic_stiffness():
    t = _ref_triangle()
    a = np.array([[[2.0, 0.0], [0.0, 3.0]]])
    K = element_stiffness(t, CoefficientField(a, 2.0))[0]
    G = gradients(t)[0]
    assert np.allclose(K, 0.5 * G @ a[0] @ G.T)
    assert np.allclose(K, [[2.5, -1, -1.5], [-1, 1, 0], [-1.5, 0, 1.5]])


def test_reference_mass():
    t = _ref_triangle()
    B = assemble_weighted_mass(t, DensityField(np.array([-2.0]), -1.0), full_dofmap(t)).dense()
    assert np.allclose(B, -2.0 * 0.5 / 12 * (np.ones((3, 3)) + np.eye(3)))


def test_constants_in_kernel(cell8):
    dm = periodic_dofmap(cell8)
    K = assemble_stiffness(cell8, preset_coefficients("layered", cell8), dm)
    assert np.abs(K @ np.ones(dm.n_dofs)).max() < 1e-12


def test_exact_symmetry(cell8):
    dm = periodic_dofmap(cell8)
    for op in (assemble_stiffness(cell8, preset_coefficients("layered", cell8), dm),
               assemble_weighted_mass(cell8, preset_density("positive_avg", cell8), dm)):
        assert (op.matrix != op.matrix.T).nnz == 0


@pytest.mark.parametrize("case,M", [("positive_avg", 15 / 32), ("zero_avg", 0.0)])
def test_mass_total_equals_average(cell8, case, M):
    dm = periodic_dofmap(cell8)
    d = preset_density(case, cell8)
    B = assemble_weighted_mass(cell8, d, dm)
    one = np.ones(dm.n_dofs)
    assert abs(one @ (B @ one) - M) < 1e-13
    assert abs(assemble_functionals(cell8, preset_coefficients("identity", cell8), d, dm)["l0"].sum() - M) < 1e-13


def test_linear_function_quadratic_forms(cell8):
    dm = full_dofmap(cell8)
    x = cell8.vertices[:, 0]
    K = assemble_stiffness(cell8, preset_coefficients("identity", cell8), dm)
    B = assemble_weighted_mass(cell8, None, dm)
    assert abs(x @ (K @ x) - 15 / 16) < 1e-13
    # int over [0,1]^2 minus hole of y1^2; P1 mass is exact for linear u
    hole = (0.625 ** 3 - 0.375 ** 3) / 3 * 0.25
    assert abs(x @ (B @ x) - (1 / 3 - hole)) < 1e-13


def test_functionals_vanish_on_constants(cell8):
    dm = periodic_dofmap(cell8)
    f = assemble_functionals(cell8, preset_coefficients("layered", cell8), None, dm)
    assert abs(f["l1"].sum()) < 1e-13 and abs(f["l2"].sum()) < 1e-13
    assert "l0" not in f


def test_functionals_vanish_without_hole(plain8):
    f = assemble_functionals(plain8, preset_coefficients("identity", plain8), None, periodic_dofmap(plain8))
    assert np.abs(f["l1"]).max() < 1e-13


def test_l0_of_linear_ramp(cell8):
    """int rho (y1 - 1/2) is negative: the positive part of rho sits on the left."""
    dm = periodic_dofmap(cell8)
    d = preset_density("zero_avg", cell8)
    l0 = assemble_functionals(cell8, preset_coefficients("identity", cell8), d, full_dofmap(cell8))["l0"]
    val = l0 @ (cell8.vertices[:, 0] - 0.5)
    assert val < 0
    assert dm.n_dofs == 80 - 17   # 2(m+1) - 1 periodic replicas


def test_mean_weights_integrate(cell8):
    dm = periodic_dofmap(cell8)
    assert abs(mean_weights(cell8, dm).sum() - 15 / 16) < 1e-13


def test_dirichlet_stiffness_is_positive_definite():
    mesh = unit_square_mesh(6)
    dm = dirichlet_dofmap(mesh)
    assert dm.n_dofs == 25
    K = assemble_stiffness(mesh, CoefficientField(np.broadcast_to(np.eye(2), (72, 2, 2)).copy(), 1.0), dm)
    w, _ = dense_eig_oracle(K.dense())
    assert w[0] > 0.1


def test_periodic_kernel_is_one_dimensional(cell8):
    dm = periodic_dofmap(cell8)
    K = assemble_stiffness(cell8, preset_coefficients("identity", cell8), dm)
    w, V = dense_eig_oracle(K.dense())
    assert abs(w[0]) < 1e-10 and w[1] > 1e-3
    assert np.allclose(np.abs(V[:, 0]), 1 / np.sqrt(dm.n_dofs), atol=1e-8)


def test_domain_dirichlet_elimination():
    dm_mesh = build_domain_mesh(2, 8, CellGeometry(m=8))
    dm = dirichlet_dofmap(dm_mesh)
    assert dm.n_dofs == dm_mesh.n_vertices - len(dm_mesh.dirichlet_boundary)
    u = np.arange(dm.n_dofs, dtype=float)
    assert np.array_equal(dm.restrict(dm.expand(u)), u)


def test_mismatched_field_rejected(cell8, plain8):
    with pytest.raises(AssemblyError):
        assemble_stiffness(cell8, preset_coefficients("identity", plain8), periodic_dofmap(cell8))


def test_coo_roundtrip(tmp_path, cell8):
    K = assemble_stiffness(cell8, preset_coefficients("layered", cell8), periodic_dofmap(cell8))
    write_coo(tmp_path / "K.txt", K)
    R = read_coo(tmp_path / "K.txt")
    assert (R != K.matrix).nnz == 0
