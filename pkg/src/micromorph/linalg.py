"""Sparse symmetric storage, preconditioned CG and inverse iteration.

Storage is scipy's CSR (canonical: sorted, duplicate-free). Reductions use
numpy's pairwise summation in a fixed order so iteration counts and results
are reproducible run to run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

SparseSymMatrix = sp.csr_matrix


class SolverError(RuntimeError):
    """CG did not converge; ``history`` holds the relative residuals."""

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = list(history or [])


class BreakdownError(SolverError):
    """Non-positive curvature p^T A p <= 0: the operator is not SPD."""


def dot(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.add.reduce(a * b))


def from_triplets(rows, cols, vals, n: int) -> SparseSymMatrix:
    """Canonical CSR from COO triplets; duplicates summed in input order.

    The stable sort makes the summation order of every entry depend only on
    the triplet order, so mirrored entries of symmetric element matrices add
    up bit-identically.
    """
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    vals = np.asarray(vals, dtype=float).ravel()
    keys = rows * n + cols
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    if len(keys) == 0:
        return sp.csr_matrix((n, n))
    starts = np.concatenate([[0], np.nonzero(np.diff(keys))[0] + 1])
    data = np.add.reduceat(vals[order], starts)
    ukeys = keys[starts]
    indptr = np.concatenate([[0], np.cumsum(np.bincount(ukeys // n, minlength=n))])
    A = sp.csr_matrix((data, (ukeys % n).astype(np.int32), indptr), shape=(n, n))
    A.has_sorted_indices = True
    return A


def check_structure(A: SparseSymMatrix) -> None:
    if not A.has_sorted_indices or not A.has_canonical_format:
        raise ValueError("matrix not in canonical CSR form")
    pattern = A.copy()
    pattern.data = np.ones_like(pattern.data)
    if (pattern - pattern.T).count_nonzero():
        raise ValueError("matrix is not structurally symmetric")


def apply_dirichlet(A: SparseSymMatrix, b: np.ndarray | None, dofs: np.ndarray):
    """Symmetric elimination of homogeneous constraints.

    Constrained rows and columns are zeroed and given a unit diagonal; the
    matching right-hand-side entries are set to zero.
    """
    keep = np.ones(A.shape[0])
    keep[dofs] = 0.0
    D = sp.diags(keep)
    fixed = sp.diags(1.0 - keep)
    out = (D @ A @ D + fixed).tocsr()
    out.eliminate_zeros()
    out.sort_indices()
    if b is None:
        return out
    b = b.copy()
    b[dofs] = 0.0
    return out, b


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float  # final relative residual ||Ax - b|| / ||b||
    history: list = field(default_factory=list)
    energy_errors: list = field(default_factory=list)


def cg_solve(
    A,
    b: np.ndarray,
    rel_tol: float = 1e-10,
    max_iter: int | None = None,
    jacobi_precondition: bool = True,
    x0: np.ndarray | None = None,
    x_exact: np.ndarray | None = None,
) -> CGResult:
    """Jacobi-preconditioned conjugate gradients.

    Stops once ``||b - A x||_2 <= rel_tol * ||b||_2`` (true residual, checked
    on the recursively updated one). Passing ``x_exact`` records the energy
    norm of the error per iteration, used for diagnostics only.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    max_iter = 10 * n if max_iter is None else max_iter
    bnorm = np.sqrt(dot(b, b))
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return CGResult(np.zeros(n), 0, 0.0, [0.0])

    if jacobi_precondition:
        d = A.diagonal() if hasattr(A, "diagonal") else np.diag(A)
        if np.any(d <= 0):
            raise BreakdownError("non-positive diagonal entry; operator is not SPD")
        inv_d = 1.0 / d
    else:
        inv_d = None

    r = b - A @ x
    z = r * inv_d if inv_d is not None else r.copy()
    p = z.copy()
    rz = dot(r, z)
    history = [np.sqrt(dot(r, r)) / bnorm]
    energy = []

    def _energy():
        if x_exact is not None:
            e = x_exact - x
            energy.append(np.sqrt(max(dot(e, A @ e), 0.0)))

    _energy()
    k = 0
    while history[-1] > rel_tol:
        if k >= max_iter:
            raise SolverError(f"CG did not converge in {max_iter} iterations (residual {history[-1]:.3e})", history)
        Ap = A @ p
        curv = dot(p, Ap)
        if curv <= 0.0:
            raise BreakdownError(f"non-positive curvature {curv:.3e} at iteration {k}; operator is not SPD", history)
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        z = r * inv_d if inv_d is not None else r
        rz_new = dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        k += 1
        history.append(np.sqrt(dot(r, r)) / bnorm)
        _energy()
        if history[-1] <= rel_tol:
            # guard against drift of the recursive residual
            true_res = np.sqrt(dot(b - A @ x, b - A @ x)) / bnorm
            history[-1] = true_res
            if true_res > rel_tol:
                r = b - A @ x
                z = r * inv_d if inv_d is not None else r.copy()
                p = z.copy()
                rz = dot(r, z)
    return CGResult(x, k, history[-1], history, energy)


@dataclass
class EigenResult:
    value: float
    vector: np.ndarray
    iterations: int
    history: list


def block_cg_solve(A, B: np.ndarray, rel_tol: float = 1e-12, max_iter: int | None = None,
                   X0: np.ndarray | None = None) -> tuple[np.ndarray, int]:
    """Jacobi-PCG applied column-wise to ``A X = B``.

    The columns are independent CG runs advanced in lock-step so each step
    costs one sparse-times-block product; converged columns are frozen.
    """
    n, k = B.shape
    max_iter = 10 * n if max_iter is None else max_iter
    inv_d = 1.0 / A.diagonal()
    X = np.zeros((n, k)) if X0 is None else np.array(X0, dtype=float)
    bnorm = np.sqrt(np.add.reduce(B * B, axis=0))
    bnorm[bnorm == 0] = 1.0
    R = B - A @ X
    Z = R * inv_d[:, None]
    P = Z.copy()
    rz = np.add.reduce(R * Z, axis=0)
    active = np.sqrt(np.add.reduce(R * R, axis=0)) / bnorm > rel_tol
    it = 0
    while active.any():
        if it >= max_iter:
            raise SolverError(f"block CG did not converge in {max_iter} iterations")
        AP = A @ P
        curv = np.add.reduce(P * AP, axis=0)
        if np.any(curv[active] <= 0):
            raise BreakdownError("non-positive curvature in block CG; operator is not SPD")
        alpha = np.where(active, rz / np.where(active, curv, 1.0), 0.0)
        X += alpha * P
        R -= alpha * AP
        Z = R * inv_d[:, None]
        rz_new = np.add.reduce(R * Z, axis=0)
        beta = np.where(active, rz_new / np.where(rz == 0, 1.0, rz), 0.0)
        P = Z + beta * P
        rz = rz_new
        it += 1
        active &= np.sqrt(np.add.reduce(R * R, axis=0)) / bnorm > rel_tol
    return X, it


def smallest_generalized_eigenvalue(
    K,
    M,
    tol: float = 1e-7,
    max_iter: int = 2000,
    block_size: int = 64,
    seed: int = 0,
    cg_tol: float = 1e-10,
) -> EigenResult:
    """Smallest eigenpair of ``K x = lam M x`` by inverse subspace iteration.

    Each step applies ``K^-1 M`` to a block of vectors (inner Jacobi-PCG,
    no shift) followed by a Rayleigh-Ritz projection; ``block_size=1`` is
    plain inverse power iteration. Stops when the eigen-residual
    ``||K x - lam M x|| / (lam ||M x||)`` drops below ``tol``; the eigenvalue
    error is then of order ``tol**2 / gap``.
    """
    K = sp.csr_matrix(K)
    n = K.shape[0]
    k = max(1, min(block_size, n))
    if np.any(K.diagonal() <= 0):
        raise BreakdownError("non-positive diagonal entry; K is not SPD")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, k))
    theta = None
    history = []
    for it in range(1, max_iter + 1):
        MX = np.asarray(M @ X)
        guess = None if theta is None else X / theta[None, :]
        Y, _ = block_cg_solve(K, MX, rel_tol=cg_tol, X0=guess)
        Kr = Y.T @ np.asarray(K @ Y)
        Mr = Y.T @ np.asarray(M @ Y)
        vals, vecs = scipy.linalg.eigh(0.5 * (Kr + Kr.T), 0.5 * (Mr + Mr.T))
        if vals[0] <= 0:
            raise BreakdownError(f"non-positive Ritz value {vals[0]:.3e}; K is not SPD")
        X = Y @ vecs
        X /= np.sqrt(np.einsum("ij,ij->j", X, np.asarray(M @ X)))[None, :]
        theta = vals
        lam = float(vals[0])
        vec = X[:, 0]
        Mv = M @ vec
        res = np.linalg.norm(K @ vec - lam * Mv) / (lam * np.linalg.norm(Mv))
        history.append(lam)
        if res <= tol:
            return EigenResult(lam, vec, it, history)
    raise SolverError(f"inverse iteration did not converge in {max_iter} steps", history)


def rayleigh_quotient(K, M, x: np.ndarray) -> float:
    return dot(x, K @ x) / dot(x, M @ x)
