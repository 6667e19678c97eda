import mpmath
import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from perfhom.assembly import assemble_stiffness, assemble_weighted_mass, dirichlet_dofmap
from perfhom.geometry import unit_square_mesh
from perfhom.materials import CoefficientField
from perfhom.pencilsolve import (PencilError, clusters, deflate_constants, dense_eig_oracle,
                                 sign_convention, solve_indefinite_pencil, solve_sparse_indefinite,
                                 solve_spd_pencil)


def _instance(seed, n=8):
    r = np.random.default_rng(seed)
    A = r.standard_normal((n, n))
    K = A @ A.T + n * np.eye(n)
    S = r.standard_normal((n, n))
    B = S + S.T
    return K, B


def test_diagonal_example():
    sp = solve_indefinite_pencil(np.eye(4), np.diag([2.0, -1.0, 0.5, -4.0]), 2, 2)
    assert np.allclose(sp.lam_pos, [0.5, 2.0])
    assert np.allclose(sp.lam_neg, [-0.25, -1.0])
    for s, sign in (("+", 1), ("-", -1)):
        lam, V = sp.side(s)
        assert np.allclose(np.einsum("ik,ij,jk->k", V, np.diag([2.0, -1.0, 0.5, -4.0]), V), sign)


def test_singular_weight_side_missing():
    with pytest.raises(PencilError):
        solve_indefinite_pencil(np.eye(2), np.diag([1.0, 0.0]), 1, 1)
    sp = solve_indefinite_pencil(np.eye(2), np.diag([1.0, 0.0]), 1, 0)
    assert np.allclose(sp.lam_pos, [1.0]) and sp.lam_neg.size == 0


def test_non_spd_stiffness_rejected():
    with pytest.raises(PencilError):
        solve_indefinite_pencil(np.diag([1.0, -1.0]), np.eye(2), 1, 0)


def test_dirichlet_laplacian():
    mesh = unit_square_mesh(32)
    dm = dirichlet_dofmap(mesh)
    coeff = CoefficientField(np.broadcast_to(np.eye(2), (len(mesh.triangles), 2, 2)).copy(), 1.0)
    K = assemble_stiffness(mesh, coeff, dm)
    B = assemble_weighted_mass(mesh, None, dm)
    lam, V = solve_spd_pencil(K, B, 3)
    assert abs(lam[0] - 2 * np.pi ** 2) / (2 * np.pi ** 2) < 0.01
    # the (1,2)/(2,1) pair splits slightly: only the diagonal reflection is a mesh symmetry
    assert np.allclose(lam[1:], 5 * np.pi ** 2, rtol=0.02) and lam[1] < lam[2]
    assert np.allclose(V.T @ (B @ V), np.eye(3), atol=1e-10)
    lam_s, _ = solve_spd_pencil(K, B, 3, dense_max=10)
    assert np.allclose(lam_s, lam, rtol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_matches_qz(seed):
    K, B = _instance(seed)
    w = sla.eig(K, B, right=False)
    w = np.sort(w[np.isfinite(w)].real)
    sp = solve_indefinite_pencil(K, B, 2, 2)
    assert np.allclose(sp.lam_pos, w[w > 0][:2], rtol=1e-10)
    assert np.allclose(sp.lam_neg, w[w < 0][::-1][:2], rtol=1e-10)


def test_scaling():
    K, B = _instance(7)
    a = solve_indefinite_pencil(K, B, 2, 2)
    b = solve_indefinite_pencil(3 * K, 0.5 * B, 2, 2)
    assert np.allclose(b.lam_pos, 6 * a.lam_pos) and np.allclose(b.lam_neg, 6 * a.lam_neg)


def test_rotation_invariance():
    K, B = _instance(8)
    Q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal(K.shape))
    a = solve_indefinite_pencil(K, B, 3, 3)
    b = solve_indefinite_pencil(Q.T @ K @ Q, Q.T @ B @ Q, 3, 3)
    assert np.allclose(a.lam_pos, b.lam_pos) and np.allclose(a.lam_neg, b.lam_neg)


def test_rescaled():
    K, B = _instance(2)
    sp = solve_indefinite_pencil(K, B, 1, 1).rescaled(B, 0.25)
    assert np.isclose(sp.vec_pos[:, 0] @ B @ sp.vec_pos[:, 0], 0.25)
    assert np.isclose(sp.vec_neg[:, 0] @ B @ sp.vec_neg[:, 0], -0.25)


def test_sparse_variant_agrees():
    K, B = _instance(3, n=40)
    a = solve_indefinite_pencil(K, B, 2, 2)
    b = solve_sparse_indefinite(K, B, 2, 2)
    assert np.allclose(a.lam_pos, b.lam_pos, rtol=1e-9) and np.allclose(a.lam_neg, b.lam_neg, rtol=1e-9)


def test_jacobi_two_by_two():
    w, V = dense_eig_oracle(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert np.allclose(w, [1.0, 3.0], atol=1e-14)
    assert np.allclose(np.abs(V), np.sqrt(0.5))


def test_jacobi_hilbert_against_high_precision():
    n = 5
    H = np.array([[1.0 / (i + j + 1) for j in range(n)] for i in range(n)])
    mpmath.mp.dps = 40
    ref = sorted(float(x) for x in mpmath.eigsy(mpmath.matrix([[mpmath.mpf(1) / (i + j + 1) for j in range(n)]
                                                                for i in range(n)]))[0])
    w, V = dense_eig_oracle(H)
    assert np.allclose(w, ref, rtol=1e-9, atol=1e-16)
    assert abs(w[0] - 3.2879287721718e-06) < 1e-15
    assert np.allclose(V.T @ V, np.eye(n), atol=1e-12)


def test_jacobi_rejects_nonsymmetric():
    with pytest.raises(PencilError):
        dense_eig_oracle(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_deflation_ring():
    n = 6
    K = 2 * np.eye(n) - np.roll(np.eye(n), 1, 0) - np.roll(np.eye(n), -1, 0)
    w = np.array([1.0, 2.0, 1.0, 3.0, 1.0, 2.0])
    B = np.diag(w)
    d = deflate_constants(K, B)
    assert d.basis.shape == (n, n - 1)
    assert np.allclose(d.basis.T @ (B @ np.ones(n)), 0)
    full = sla.eigh(K, B, eigvals_only=True)
    red = sla.eigh(d.K, d.B, eigvals_only=True)
    assert np.allclose(red, full[1:])


def test_deflation_needs_nonzero_total():
    with pytest.raises(PencilError):
        deflate_constants(np.eye(2), np.diag([1.0, -1.0]))


def test_clusters_and_signs():
    assert clusters(np.array([1.0, 1.0 + 1e-12, 2.0])) == [[0, 1], [2]]
    v = sign_convention(np.array([[0.0, 1.0], [-2.0, -1.0]]))
    assert v[1, 0] == 2.0 and v[0, 1] == 1.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(3, 12))
def test_pencil_invariants(seed, n):
    K, B = _instance(seed, n)
    inertia = np.linalg.eigvalsh(B)
    npos, nneg = int((inertia > 1e-8).sum()), int((inertia < -1e-8).sum())
    if not npos or not nneg:
        return
    sp = solve_indefinite_pencil(K, B, 1, 1)
    up, um = sp.vec_pos[:, 0], sp.vec_neg[:, 0]
    assert sp.lam_pos[0] > 0 > sp.lam_neg[0]
    assert np.isclose(up @ B @ up, 1) and np.isclose(um @ B @ um, -1)
    assert np.isclose(up @ K @ up, sp.lam_pos[0]) and np.isclose(um @ K @ um, -sp.lam_neg[0])
    assert abs(up @ B @ um) < 1e-8 and abs(up @ K @ um) < 1e-8 * sp.lam_pos[0]
    # B -> -B swaps the sides and negates
    sw = solve_indefinite_pencil(K, -B, 1, 1)
    assert np.isclose(sw.lam_pos[0], -sp.lam_neg[0]) and np.isclose(sw.lam_neg[0], -sp.lam_pos[0])
