import numpy as np
import pytest
import scipy.sparse as sp

from porous.errors import LinearSolverError
from porous.linalg import bicgstab_solve, cg_solve, dense_lu_solve


def spd(rng, n=50):
    B = rng.standard_normal((n, n))
    return B.T @ B + np.eye(n)


class TestCG:
    def test_identity(self, rng):
        b = rng.standard_normal(7)
        x, st = cg_solve(sp.identity(7, format="csr"), b)
        np.testing.assert_allclose(x, b)
        assert st.iterations <= 1 and st.converged

    def test_diagonal(self):
        x, _ = cg_solve(sp.diags([1.0, 2.0, 4.0]).tocsr(), np.array([1.0, 2.0, 4.0]))
        np.testing.assert_allclose(x, 1.0)

    def test_random_spd_matches_lu(self, rng):
        A = spd(rng)
        b = rng.standard_normal(50)
        x, st = cg_solve(sp.csr_matrix(A), b, rel_tol=1e-13)
        assert st.converged and st.final_residual <= 1e-13
        np.testing.assert_allclose(x, dense_lu_solve(A, b), atol=1e-9)

    def test_nonconvergence_reported(self, rng):
        A = spd(rng)
        _, st = cg_solve(sp.csr_matrix(A), rng.standard_normal(50), rel_tol=1e-14, max_iter=2)
        assert not st.converged and st.iterations == 2

    def test_indefinite_breaks_down(self):
        with pytest.raises(LinearSolverError, match="breakdown"):
            cg_solve(sp.diags([1.0, -1.0]).tocsr(), np.array([1.0, 1.0]))

    def test_nan_rhs(self):
        with pytest.raises(LinearSolverError):
            cg_solve(sp.identity(2, format="csr") * 2.0, np.array([np.nan, 1.0]))

    def test_zero_rhs(self):
        x, st = cg_solve(sp.identity(3, format="csr"), np.zeros(3))
        assert st.iterations == 0 and np.all(x == 0)

    def test_absolute_floor(self, rng):
        A = sp.csr_matrix(spd(rng, 20))
        b = rng.standard_normal(20)
        x_ref = dense_lu_solve(A.toarray(), b)
        x0 = x_ref + 1e-15
        _, st = cg_solve(A, b, x0=x0, rel_tol=1e-14, atol=1e-10)
        assert st.converged


class TestBiCGStab:
    def test_identity(self, rng):
        b = rng.standard_normal(5)
        x, st = bicgstab_solve(sp.identity(5, format="csr"), b)
        np.testing.assert_allclose(x, b)

    def test_agrees_with_cg(self, rng):
        A = sp.csr_matrix(spd(rng))
        b = rng.standard_normal(50)
        x1, _ = cg_solve(A, b, rel_tol=1e-13)
        x2, _ = bicgstab_solve(A, b, rel_tol=1e-13)
        np.testing.assert_allclose(x1, x2, atol=1e-9)

    def test_nonsymmetric_matches_lu(self, rng):
        n = 50
        A = rng.standard_normal((n, n))
        A += np.diag(np.abs(A).sum(axis=1) + 1)
        b = rng.standard_normal(n)
        x, st = bicgstab_solve(sp.csr_matrix(A), b, rel_tol=1e-13)
        assert st.converged
        np.testing.assert_allclose(x, dense_lu_solve(A, b), atol=1e-9)

    def test_zero_diagonal_rejected(self):
        with pytest.raises(LinearSolverError, match="diagonal"):
            bicgstab_solve(sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]])), np.ones(2))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            bicgstab_solve(sp.identity(3, format="csr"), np.ones(2))


class TestDenseLU:
    def test_pivoting(self):
        x = dense_lu_solve(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([2.0, 3.0]))
        np.testing.assert_allclose(x, [3.0, 2.0])

    def test_residual(self, rng):
        A = spd(rng, 30)
        b = rng.standard_normal(30)
        x = dense_lu_solve(A, b)
        assert np.linalg.norm(A @ x - b) <= 1e-12 * np.linalg.norm(b) * np.linalg.cond(A)

    def test_singular(self):
        with pytest.raises(LinearSolverError, match="singular"):
            dense_lu_solve(np.array([[1.0, 2.0], [2.0, 4.0]]), np.ones(2))

    def test_size_guard(self):
        with pytest.raises(ValueError, match="2000"):
            dense_lu_solve(np.eye(2001), np.ones(2001))


class TestDenseLUExamples:
    def test_scalar(self):
        assert dense_lu_solve(np.array([[2.0]]), np.array([4.0]))[0] == 2.0

    def test_hilbert_against_rational_solution(self):
        from fractions import Fraction

        n = 4
        H = [[Fraction(1, i + j + 1) for j in range(n)] for i in range(n)]
        # exact Gauss-Jordan in rationals
        aug = [row[:] + [Fraction(1)] for row in H]
        for k in range(n):
            piv = aug[k][k]
            aug[k] = [v / piv for v in aug[k]]
            for r in range(n):
                if r != k:
                    f = aug[r][k]
                    aug[r] = [a - f * b for a, b in zip(aug[r], aug[k])]
        exact = np.array([float(row[-1]) for row in aug])
        x = dense_lu_solve(np.array(H, dtype=float), np.ones(n))
        assert np.linalg.norm(x - exact) / np.linalg.norm(exact) <= 1e-9

    def test_permutation(self, rng):
        P = np.eye(5)[[3, 0, 4, 1, 2]]
        b = rng.standard_normal(5)
        np.testing.assert_allclose(dense_lu_solve(P, b), P.T @ b)

    def test_reported_residual_reproducible(self, rng):
        A = sp.csr_matrix(spd(rng, 30))
        b = rng.standard_normal(30)
        x0 = rng.standard_normal(30)
        x, st = cg_solve(A, b, x0=x0)
        indep = np.linalg.norm(b - A @ x) / np.linalg.norm(b - A @ x0)
        assert abs(st.final_residual - indep) <= 1e-14
