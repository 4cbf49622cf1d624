"""Krylov solvers with Jacobi preconditioning and a dense LU reference solver.

Convergence is always judged on the true (unpreconditioned) residual:
``||b - A x|| <= max(rel_tol * ||b - A x0||, atol)``.  The optional absolute
floor ``atol`` exists for warm starts whose initial residual is already near
roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LinearSolverError

__all__ = ["SolveStats", "cg_solve", "bicgstab_solve", "dense_lu_solve", "relative_residual"]


@dataclass(frozen=True)
class SolveStats:
    iterations: int
    final_residual: float
    converged: bool


def relative_residual(A, b, x, x0):
    r0 = np.linalg.norm(b - A @ x0)
    return 0.0 if r0 == 0 else float(np.linalg.norm(b - A @ x) / r0)


def _prepare(A, b, x0, max_iter):
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"matrix shape {A.shape} does not match rhs length {n}")
    x0 = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    d = np.asarray(A.diagonal(), dtype=float)
    if not np.all(np.isfinite(d)) or np.any(d == 0):
        raise LinearSolverError("Jacobi preconditioner needs a finite nonzero diagonal")
    return b, x0, 1.0 / d, (10 * n if max_iter is None else int(max_iter))


def _finish(A, b, x, x0, it, rel_tol, atol):
    r0 = np.linalg.norm(b - A @ x0)
    res = relative_residual(A, b, x, x0)
    if not np.isfinite(res):
        raise LinearSolverError("NaN/Inf in Krylov iterate")
    return x, SolveStats(it, res, res <= rel_tol or res * r0 <= atol)


def cg_solve(A, b, x0=None, rel_tol=1e-10, max_iter=None, atol=0.0):
    """Jacobi-preconditioned conjugate gradients for SPD ``A``.

    Returns ``(x, SolveStats)``.  Non-convergence is reported in the stats;
    NaN contamination or loss of positive definiteness raises
    :class:`LinearSolverError`.
    """
    b, x0, dinv, max_iter = _prepare(A, b, x0, max_iter)
    x = x0.copy()
    r = b - A @ x
    r0 = np.linalg.norm(r)
    if r0 == 0.0 or r0 <= atol:
        return x, SolveStats(0, 0.0 if r0 == 0.0 else 1.0, True)
    target = max(rel_tol * r0, atol)
    z = dinv * r
    p = z.copy()
    rz = r @ z
    it = 0
    while it < max_iter:
        it += 1
        Ap = A @ p
        pAp = p @ Ap
        if not np.isfinite(pAp):
            raise LinearSolverError("NaN/Inf in CG")
        if pAp <= 0.0:
            raise LinearSolverError(f"CG breakdown: p'Ap = {pAp:.3e} (matrix not SPD?)")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= target:
            # the recurrence residual drifts; confirm on the true one
            r = b - A @ x
            if np.linalg.norm(r) <= target:
                break
            z = dinv * r
            p = z.copy()
            rz = r @ z
            continue
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return _finish(A, b, x, x0, it, rel_tol, atol)


def bicgstab_solve(A, b, x0=None, rel_tol=1e-10, max_iter=None, atol=0.0):
    """Right-preconditioned (Jacobi) BiCGStab for general nonsingular ``A``.

    A vanishing shadow inner product restarts the iteration once from the
    current iterate; a second breakdown raises :class:`LinearSolverError`.
    """
    b, x0, dinv, max_iter = _prepare(A, b, x0, max_iter)
    x = x0.copy()
    r = b - A @ x
    r0 = np.linalg.norm(r)
    if r0 == 0.0 or r0 <= atol:
        return x, SolveStats(0, 0.0 if r0 == 0.0 else 1.0, True)
    target = max(rel_tol * r0, atol)
    restarted = False

    def fresh(res):
        return res.copy(), 1.0, 1.0, 1.0, np.zeros_like(res), np.zeros_like(res)

    rhat, rho, alpha, omega, v, p = fresh(r)
    it = 0
    while it < max_iter:
        it += 1
        rho_new = rhat @ r
        if not np.isfinite(rho_new):
            raise LinearSolverError("NaN/Inf in BiCGStab")
        if abs(rho_new) <= 1e-15 * np.linalg.norm(rhat) * np.linalg.norm(r) or omega == 0.0:
            if restarted:
                raise LinearSolverError("BiCGStab breakdown after restart")
            restarted = True
            r = b - A @ x
            rhat, rho, alpha, omega, v, p = fresh(r)
            rho_new = rhat @ r
        p = r + (rho_new / rho) * (alpha / omega) * (p - omega * v)
        rho = rho_new
        ph = dinv * p
        v = A @ ph
        denom = rhat @ v
        if denom == 0.0 or not np.isfinite(denom):
            if restarted:
                raise LinearSolverError("BiCGStab breakdown after restart")
            restarted = True
            r = b - A @ x
            rhat, rho, alpha, omega, v, p = fresh(r)
            continue
        alpha = rho / denom
        s = r - alpha * v
        if np.linalg.norm(s) <= target:
            x += alpha * ph
            r = b - A @ x
            if np.linalg.norm(r) <= target:
                break
            continue
        sh = dinv * s
        t = A @ sh
        tt = t @ t
        omega = (t @ s) / tt if tt > 0 else 0.0
        x += alpha * ph + omega * sh
        r = s - omega * t
        if np.linalg.norm(r) <= target:
            r = b - A @ x
            if np.linalg.norm(r) <= target:
                break
    return _finish(A, b, x, x0, it, rel_tol, atol)


def dense_lu_solve(A, b):
    """Solve ``A x = b`` by LU factorisation with partial pivoting (n <= 2000)."""
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or b.shape[0] != n:
        raise ValueError("dense_lu_solve needs a square matrix and matching rhs")
    if n > 2000:
        raise ValueError(f"dense_lu_solve is limited to n <= 2000 (got {n})")
    scale = np.abs(A).max() if A.size else 0.0
    perm = np.arange(n)
    for k in range(n):
        piv = k + int(np.argmax(np.abs(A[k:, k])))
        if abs(A[piv, k]) <= n * np.finfo(float).eps * scale or scale == 0.0:
            raise LinearSolverError(f"singular matrix: no usable pivot in column {k}")
        if piv != k:
            A[[k, piv]] = A[[piv, k]]
            perm[[k, piv]] = perm[[piv, k]]
        A[k + 1:, k] /= A[k, k]
        A[k + 1:, k + 1:] -= np.outer(A[k + 1:, k], A[k, k + 1:])
    y = b[perm]
    for k in range(n):
        y[k] -= A[k, :k] @ y[:k]
    for k in range(n - 1, -1, -1):
        y[k] = (y[k] - A[k, k + 1:] @ y[k + 1:]) / A[k, k]
    return y
