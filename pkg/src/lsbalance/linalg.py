"""Sparse symmetric positive definite solves.

The direct path uses the PARDISO Cholesky factorization (real SPD matrix
type) when the MKL runtime is available and falls back to SuperLU with
symmetric-mode ordering and no row pivoting otherwise.  Both report a
non-positive pivot as ``NotSPD``.
"""
from __future__ import annotations

import glob
import logging
import os
import sys

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

PIVOT_RTOL = 1e-14
RESIDUAL_RTOL = 1e-10


class NotSPD(np.linalg.LinAlgError):
    """Factorization met a non-positive pivot."""


class MaxIter(RuntimeError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(f"CG did not converge in {iterations} iterations (relative residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


def _find_mkl_rt():
    if os.environ.get("PYPARDISO_MKL_RT"):
        return
    roots = [os.path.join(sys.prefix, "lib"), "/usr/local/lib", "/usr/lib", "/usr/lib/x86_64-linux-gnu"]
    for r in roots:
        hits = sorted(glob.glob(os.path.join(r, "libmkl_rt.so*")))
        if hits:
            os.environ["PYPARDISO_MKL_RT"] = hits[0]
            return


def _load_pardiso():
    if os.environ.get("LSBALANCE_NO_PARDISO"):
        return None
    _find_mkl_rt()
    try:
        from pypardiso.pardiso_wrapper import PyPardisoError, PyPardisoSolver
    except (ImportError, OSError) as exc:  # MKL runtime missing
        log.info("PARDISO unavailable (%s); using SuperLU", exc)
        return None
    return PyPardisoSolver, PyPardisoError


_PARDISO = _load_pardiso()


def backend() -> str:
    return "pardiso" if _PARDISO is not None else "superlu"


def _as_csr(A) -> sp.csr_matrix:
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.sort_indices()
    return A


class _SymOp:
    """Products with U + U^T - diag(U) without forming the full matrix."""

    def __init__(self, U):
        self.U = U
        self.d = U.diagonal()
        self.nnz = U.nnz

    def __matmul__(self, x):
        return self.U @ x + self.U.T @ x - self.d * x

    def row_abs_max(self) -> float:
        a = abs(self.U)
        return float(np.max(a.sum(axis=1).A1 + a.sum(axis=0).A1 - np.abs(self.d), initial=0.0))


def _residual_ok(A, x, b, rtol=RESIDUAL_RTOL) -> tuple[bool, float]:
    r = A @ x - b
    if isinstance(A, _SymOp):
        normA = A.row_abs_max()
    else:
        normA = abs(A).sum(axis=1).max() if A.nnz else 0.0
    bound = rtol * (normA * np.abs(x).max(initial=0.0) + np.abs(b).max(initial=0.0))
    res = np.abs(r).max(initial=0.0)
    return res <= bound, res


class CholeskyFactor:
    """Factorization of an SPD matrix, reusable for several right-hand sides.

    ``A`` is the full symmetric matrix unless ``upper=True``, in which case
    only its upper triangle (diagonal included) is given.
    """

    def __init__(self, A, upper: bool = False):
        A = _as_csr(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        self.n = A.shape[0]
        U = A if upper else sp.triu(A, format="csr")
        U.sort_indices()
        self.upper = U
        self._full = None if upper else A
        d = U.diagonal()
        if self.n and (np.any(d <= 0) or not np.all(np.isfinite(d))):
            raise NotSPD("matrix has a non-positive diagonal entry")
        self.backend = backend()
        if self.n == 0:
            return
        if self.backend == "pardiso":
            self._factor_pardiso()
        else:
            self._factor_superlu()

    @property
    def full(self) -> sp.csr_matrix:
        if self._full is None:
            U = self.upper
            self._full = (U + U.T - sp.diags(U.diagonal())).tocsr()
        return self._full

    def _factor_pardiso(self):
        Solver, Err = _PARDISO
        s = Solver(mtype=2, size_limit_storage=0)
        s.set_iparm(1, 1)    # user-supplied iparm
        s.set_iparm(2, 2)    # nested dissection ordering
        s.set_iparm(8, 2)    # max iterative refinement steps
        s.set_iparm(10, 13)  # pivot perturbation 1e-13 (reported, never silently accepted)
        s.set_iparm(24, 0)
        s.set_iparm(35, 0)
        self._solver = s
        self._err = Err
        try:
            s.factorize(self.upper)
        except Err as exc:
            if getattr(exc, "value", None) == -4 or "-4" in str(exc):
                raise NotSPD("PARDISO Cholesky met a non-positive pivot") from exc
            raise
        if s.get_iparm(14) > 0 or s.get_iparm(30) > 0:
            raise NotSPD("PARDISO Cholesky met a zero or negative pivot")

    def _factor_superlu(self):
        A = self.full.tocsc()
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options=dict(SymmetricMode=True))
        piv = lu.U.diagonal()
        if np.any(piv <= PIVOT_RTOL * np.abs(A.diagonal()).max()):
            raise NotSPD("Cholesky pivot is not positive")
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise NotSPD("factorization needed row interchanges")
        self._lu = lu

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if self.n == 0:
            return np.zeros_like(b)
        if self.backend == "pardiso":
            x = self._solver.solve(self.upper, b)
        else:
            x = self._lu.solve(b)
        return x

    def free(self):
        if self.backend == "pardiso" and self.n:
            self._solver.free_memory(everything=True)


def cholesky_solve(A, b, upper: bool = False, check: bool = True) -> np.ndarray:
    """Solve the SPD system A x = b by sparse Cholesky.

    With ``check`` the result satisfies |Ax - b| <= 1e-10 (|A| |x| + |b|) in
    the max norm; a few refinement sweeps are applied if needed.
    """
    F = CholeskyFactor(A, upper=upper)
    try:
        x = F.solve(b)
        if check:
            M = _SymOp(F.upper) if upper else F.full
            for _ in range(3):
                ok, _ = _residual_ok(M, x, b)
                if ok:
                    break
                x = x + F.solve(b - M @ x)
            ok, res = _residual_ok(M, x, b)
            if not ok:
                raise np.linalg.LinAlgError(f"Cholesky residual {res:.3e} violates the accuracy bound")
    finally:
        F.free()
    return x


def cg_solve(A, b, tol: float = 1e-10, maxit: int | None = None, x0=None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients; stops on ||r|| <= tol ||b||."""
    A = _as_csr(A)
    b = np.asarray(b, dtype=float)
    n = len(b)
    maxit = 10 * n if maxit is None else maxit
    d = A.diagonal()
    if np.any(d <= 0):
        raise NotSPD("matrix has a non-positive diagonal entry")
    dinv = 1.0 / d
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros(n)
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for it in range(maxit + 1):
        rel = np.linalg.norm(r) / nb
        if rel <= tol:
            return x
        if it == maxit:
            break
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise NotSPD("CG met a direction of non-positive curvature")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise MaxIter(maxit, rel)


def export_matrix_market(path, A, comment: str = "") -> None:
    """Write ``A`` in Matrix Market coordinate format (symmetric storage if symmetric)."""
    A = sp.csr_matrix(A)
    sym = "symmetric" if (A - A.T).count_nonzero() == 0 else "general"
    scipy.io.mmwrite(str(path), A, comment=comment, symmetry=sym)
