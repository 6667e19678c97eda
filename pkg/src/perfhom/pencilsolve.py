"""Symmetric generalized eigenproblems ``K u = lambda B u``.

Three regimes are covered: ``B`` positive definite (limit problems), ``B``
indefinite with ``K`` positive definite (the fine-scale problem), and ``K``
semidefinite with constant kernel (the periodic cell problem, via
:func:`deflate_constants`).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DENSE_BUDGET = 4000
CLUSTER_RTOL = 1e-8


class PencilError(RuntimeError):
    pass


def _dense(A) -> np.ndarray:
    if sp.issparse(A):
        return A.toarray()
    if hasattr(A, "matrix"):
        return _dense(A.matrix)
    return np.asarray(A, dtype=float)


def _sparse(A):
    if hasattr(A, "matrix"):
        A = A.matrix
    return sp.csr_matrix(A)


def sign_convention(vecs: np.ndarray) -> np.ndarray:
    """Flip columns so that the first clearly nonzero component is positive."""
    vecs = np.array(vecs, dtype=float, copy=True)
    if vecs.ndim == 1:
        return sign_convention(vecs[:, None])[:, 0]
    for k in range(vecs.shape[1]):
        v = vecs[:, k]
        big = np.abs(v) > 1e-8 * np.abs(v).max(initial=0.0)
        if big.any() and v[np.argmax(big)] < 0:
            vecs[:, k] = -v
    return vecs


def clusters(values: np.ndarray, rtol: float = CLUSTER_RTOL) -> list:
    """Group consecutive (sorted) eigenvalues that agree to ``rtol``."""
    groups = []
    for i, v in enumerate(values):
        if groups and abs(v - values[groups[-1][-1]]) <= rtol * max(abs(v), abs(values[groups[-1][-1]])):
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


# ---------------------------------------------------------------- oracle

def dense_eig_oracle(A, tol: float = 1e-12, max_sweeps: int = 100):
    """All eigenpairs of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(w, V)`` with ``w`` ascending.  Iterates until the off-diagonal
    Frobenius norm is below ``tol * ||A||_F``.
    """
    A = np.array(_dense(A), dtype=float, copy=True)
    n = A.shape[0]
    if A.ndim != 2 or A.shape != (n, n):
        raise PencilError("oracle needs a square matrix")
    if n > DENSE_BUDGET:
        raise PencilError(f"oracle size {n} exceeds the dense budget {DENSE_BUDGET}")
    if not np.allclose(A, A.T, rtol=0, atol=1e-13 * max(1.0, np.abs(A).max(initial=0))):
        raise PencilError("oracle matrix is not symmetric")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    scale = np.linalg.norm(A)
    if scale == 0 or n == 1:
        return np.diag(A).copy(), V
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(A * A) - np.sum(np.diag(A) ** 2), 0.0))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                tau = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                ap, aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap, aq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                A[p, q] = A[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        raise PencilError("Jacobi iteration did not converge")
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


# ---------------------------------------------------------------- spectra

@dataclass
class TwoSidedSpectrum:
    """Positive (ascending) and negative (descending) eigenvalue sequences.

    Eigenvectors are stored column-wise and normalised according to
    ``normalization``: ``("B", c)`` means ``u^T B u = +-c`` with the sign of
    the eigenvalue, ``("L2", None)`` means unit Euclidean norm.
    """

    lam_pos: np.ndarray
    vec_pos: np.ndarray
    lam_neg: np.ndarray
    vec_neg: np.ndarray
    normalization: tuple = ("B", 1.0)

    @property
    def mu_pos(self) -> np.ndarray:
        return 1.0 / self.lam_pos

    @property
    def mu_neg(self) -> np.ndarray:
        return 1.0 / self.lam_neg

    def side(self, s: str):
        return (self.lam_pos, self.vec_pos) if s == "+" else (self.lam_neg, self.vec_neg)

    def clusters(self, s: str) -> list:
        return clusters(self.side(s)[0])

    def rescaled(self, B, c: float) -> "TwoSidedSpectrum":
        """Renormalise so that ``u^T B u = +-c``."""
        B = _sparse(B)
        out = []
        for V in (self.vec_pos, self.vec_neg):
            q = np.einsum("ik,ik->k", V, B @ V)
            out.append(V * np.sqrt(c / np.abs(q)))
        return replace(self, vec_pos=out[0], vec_neg=out[1], normalization=("B", c))


def _residual_ok(K, B, lam, V, rtol):
    K, B = _sparse(K), _sparse(B)
    for k in range(V.shape[1]):
        Ku = K @ V[:, k]
        r = np.linalg.norm(Ku - lam[k] * (B @ V[:, k]))
        if r > rtol * max(np.linalg.norm(Ku), 1e-300):
            return False
    return True


def solve_spd_pencil(K, B, count: int, dense_max: int = 2500):
    """Smallest ``count`` eigenpairs of ``K u = lambda B u`` with ``B`` SPD.

    Returns ``(lam, V)`` ascending with ``V^T B V = I``.  Dense Cholesky
    reduction up to ``dense_max`` unknowns, shift-invert Lanczos beyond.
    """
    n = _sparse(K).shape[0]
    if count < 1 or count > n:
        raise PencilError(f"cannot return {count} eigenpairs of a pencil of size {n}")
    if n <= dense_max:
        Kd, Bd = _dense(K), _dense(B)
        try:
            L = sla.cholesky(Bd, lower=True)
        except np.linalg.LinAlgError as exc:
            raise PencilError("B is not positive definite") from exc
        X = sla.solve_triangular(L, Kd, lower=True)
        C = sla.solve_triangular(L, X.T, lower=True)
        C = 0.5 * (C + C.T)
        lam, Y = sla.eigh(C, subset_by_index=[0, count - 1])
        V = sla.solve_triangular(L.T, Y, lower=False)
    else:
        Ks, Bs = _sparse(K).tocsc(), _sparse(B).tocsc()
        if Bs.diagonal().min() <= 0:
            raise PencilError("B is not positive definite")
        v0 = np.ones(n) / np.sqrt(n)
        lam, V = spla.eigsh(Ks, k=count, M=Bs, sigma=0.0, which="LM", v0=v0, tol=1e-13)
        order = np.argsort(lam)
        lam, V = lam[order], V[:, order]
        q = np.einsum("ik,ik->k", V, Bs @ V)
        V = V / np.sqrt(q)
    V = sign_convention(V)
    if not _residual_ok(K, B, lam, V, 1e-8):
        raise PencilError("eigenpair residual above 1e-8")
    return lam, V


def solve_indefinite_pencil(K, B, count_pos: int, count_neg: int) -> TwoSidedSpectrum:
    """Two signed eigenvalue sequences of ``K u = lambda B u``, ``K`` SPD, ``B`` indefinite.

    The pencil is rewritten as ``C y = mu y`` with ``C = L^{-1} B L^{-T}``,
    ``K = L L^T`` and ``mu = 1/lambda``; the largest positive and most negative
    ``mu`` give the first positive and negative eigenvalues.  Eigenvectors
    satisfy ``u^T B u = sign(lambda)``.
    """
    Kd, Bd = _dense(K), _dense(B)
    n = Kd.shape[0]
    if n > DENSE_BUDGET:
        raise PencilError(f"pencil size {n} exceeds the dense budget {DENSE_BUDGET}")
    try:
        L = sla.cholesky(Kd, lower=True)
    except np.linalg.LinAlgError as exc:
        raise PencilError("K is not positive definite on the constrained space") from exc
    X = sla.solve_triangular(L, Bd, lower=True)
    C = sla.solve_triangular(L, X.T, lower=True)
    C = 0.5 * (C + C.T)
    del X
    sides = {}
    mus = []
    for s, cnt in (("+", count_pos), ("-", count_neg)):
        if cnt == 0:
            sides[s] = (np.empty(0), np.empty((n, 0)))
            continue
        if cnt > n:
            raise PencilError(f"requested {cnt} eigenvalues of a pencil of size {n}")
        idx = [n - cnt, n - 1] if s == "+" else [0, cnt - 1]
        mu, Y = sla.eigh(C, subset_by_index=idx)
        if s == "+":
            mu, Y = mu[::-1], Y[:, ::-1]
        sides[s] = (mu, Y)
        mus.append(mu)
    # |mu| is measured against the norm of the transformed operator (B in the K-inner product)
    allmu = np.concatenate(mus) if mus else np.zeros(1)
    tol = 1e-12 * max(np.abs(allmu).max(initial=0.0), 1e-300)
    out = {}
    for s in ("+", "-"):
        mu, Y = sides[s]
        good = mu > tol if s == "+" else mu < -tol
        if not good.all():
            raise PencilError(
                f"requested {len(mu)} eigenvalues on the {s} side but only {int(good.sum())} "
                f"nonzero mu are available")
        V = sla.solve_triangular(L.T, Y, lower=False) / np.sqrt(np.abs(mu))
        out[s] = (1.0 / mu, sign_convention(V))
    return TwoSidedSpectrum(out["+"][0], out["+"][1], out["-"][0], out["-"][1], ("B", 1.0))


@dataclass(frozen=True, eq=False)
class DeflatedPencil:
    K: np.ndarray
    B: np.ndarray
    basis: np.ndarray        # (n, n-1) orthonormal basis of {u : 1^T B u = 0}

    def lift(self, c: np.ndarray) -> np.ndarray:
        return self.basis @ c


def deflate_constants(K, B) -> DeflatedPencil:
    """Restrict a pencil whose ``K`` kills constants to ``{u : 1^T B u = 0}``.

    Every eigenvector with nonzero eigenvalue lies there (test the equation
    with the constant vector), and ``K`` is positive definite on it.
    """
    Kd, Bd = _dense(K), _dense(B)
    n = Kd.shape[0]
    b = Bd @ np.ones(n)
    total = b.sum()
    if abs(total) <= 1e-13 * max(np.abs(Bd).sum(), 1e-300):
        raise PencilError("1^T B 1 = 0: deflation direction undefined")
    # Householder reflector mapping b onto e_0; its other columns span b-perp
    v = b.copy()
    v[0] += np.copysign(np.linalg.norm(b), b[0])
    H = np.eye(n) - 2.0 * np.outer(v, v) / np.dot(v, v)
    Z = H[:, 1:]
    Kr = Z.T @ Kd @ Z
    Br = Z.T @ Bd @ Z
    return DeflatedPencil(0.5 * (Kr + Kr.T), 0.5 * (Br + Br.T), Z)


def solve_sparse_indefinite(K, B, count_pos: int, count_neg: int) -> TwoSidedSpectrum:
    """Shift-invert Lanczos variant for exploration on large meshes.

    Uses ``B u = mu K u`` with a sparse LU of ``K``; not used by the
    acceptance runs, which stay on the dense path.
    """
    Ks, Bs = _sparse(K).tocsc(), _sparse(B).tocsc()
    n = Ks.shape[0]
    lu = spla.splu(Ks)
    op = spla.LinearOperator((n, n), matvec=lambda x: lu.solve(Bs @ x), dtype=float)
    v0 = np.ones(n) / np.sqrt(n)
    out = {}
    for s, cnt, which in (("+", count_pos, "LA"), ("-", count_neg, "SA")):
        if cnt == 0:
            out[s] = (np.empty(0), np.empty((n, 0)))
            continue
        # K^{-1} B is K-self-adjoint; use the symmetric form on the K inner product
        mu, Y = spla.eigs(op, k=cnt, which="LR" if s == "+" else "SR", v0=v0, tol=1e-12)
        mu, Y = mu.real, Y.real
        order = np.argsort(-mu) if s == "+" else np.argsort(mu)
        mu, Y = mu[order], Y[:, order]
        q = np.einsum("ik,ik->k", Y, Bs @ Y)
        out[s] = (1.0 / mu, sign_convention(Y / np.sqrt(np.abs(q))))
    return TwoSidedSpectrum(out["+"][0], out["+"][1], out["-"][0], out["-"][1], ("B", 1.0))
