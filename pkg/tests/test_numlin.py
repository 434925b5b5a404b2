import numpy as np
import pytest

from poisonlens.exceptions import (
    DimensionMismatch,
    NotPositiveDefinite,
    RankDeficient,
)
from poisonlens.numlin import (
    LinearOperator,
    lanczos,
    operator_from_matrix,
    qr_economy,
    solve_spd,
    symmetry_residual,
    symtrid_eig,
)


class TestSolveSpd:
    def test_identity_system(self):
        x = solve_spd(np.eye(3), np.array([1.0, 2.0, 3.0]), 0.0)
        np.testing.assert_allclose(x, [1.0, 2.0, 3.0])

    def test_diagonal_system(self):
        x = solve_spd(np.diag([2.0, 4.0]), np.array([2.0, 8.0]), 0.0)
        np.testing.assert_allclose(x, [1.0, 2.0])

    def test_random_spd_residual(self, rng):
        A = rng.standard_normal((20, 20))
        A = A.T @ A + np.eye(20)
        b = rng.standard_normal(20)
        x = solve_spd(A, b)
        resid = np.linalg.norm(A @ x - b) / np.linalg.norm(b)
        assert resid <= 1e-10

    def test_matrix_rhs(self, rng):
        A = rng.standard_normal((8, 8))
        A = A.T @ A + np.eye(8)
        B = rng.standard_normal((8, 3))
        X = solve_spd(A, B)
        assert np.linalg.norm(A @ X - B) <= 1e-9

    def test_jitter_rescues_singular(self):
        # Gram of two exact duplicates is singular; jitter makes it solvable.
        A = np.ones((2, 2))
        with pytest.raises(NotPositiveDefinite):
            solve_spd(A, np.ones(2), 0.0)
        x = solve_spd(A, np.ones(2), jitter=1e-10)
        assert np.isfinite(x).all()

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            solve_spd(np.eye(3), np.ones(4))
        with pytest.raises(DimensionMismatch):
            solve_spd(np.ones((3, 2)), np.ones(3))


class TestQrEconomy:
    def test_identity(self):
        Q, R = qr_economy(np.eye(2))
        np.testing.assert_allclose(Q, np.eye(2))
        np.testing.assert_allclose(R, np.eye(2))

    def test_single_column_normalization(self):
        Q, R = qr_economy(np.array([[3.0], [4.0]]))
        np.testing.assert_allclose(Q, [[0.6], [0.8]])
        np.testing.assert_allclose(R, [[5.0]])

    def test_reconstruction(self, rng):
        A = rng.standard_normal((50, 5))
        Q, R = qr_economy(A)
        np.testing.assert_allclose(Q.T @ Q, np.eye(5), atol=1e-10)
        assert np.linalg.norm(Q @ R - A) / np.linalg.norm(A) <= 1e-10
        assert np.all(np.diag(R) > 0)

    def test_annihilator_idempotent(self, rng):
        # M_X = I - Q Q^T must be a projection.
        X = rng.standard_normal((30, 4))
        Q, _ = qr_economy(X)
        M = np.eye(30) - Q @ Q.T
        assert np.linalg.norm(M @ M - M) <= 1e-10

    def test_rank_deficient(self, rng):
        col = rng.standard_normal(10)
        A = np.column_stack([col, 2.0 * col])
        with pytest.raises(RankDeficient):
            qr_economy(A)

    def test_needs_tall_matrix(self, rng):
        with pytest.raises(DimensionMismatch):
            qr_economy(rng.standard_normal((3, 5)))


class TestSymtridEig:
    def test_single_entry(self):
        vals, vecs = symtrid_eig([5.0], [])
        np.testing.assert_allclose(vals, [5.0])
        np.testing.assert_allclose(vecs, [[1.0]])

    def test_two_by_two_symmetric(self):
        vals, _ = symtrid_eig([0.0, 0.0], [1.0])
        np.testing.assert_allclose(vals, [1.0, -1.0], atol=1e-12)

    def test_matches_dense(self, rng):
        alpha = rng.standard_normal(10)
        beta = rng.standard_normal(9)
        vals, vecs = symtrid_eig(alpha, beta)
        T = np.diag(alpha) + np.diag(beta, 1) + np.diag(beta, -1)
        dense = np.linalg.eigvalsh(T)[::-1]
        np.testing.assert_allclose(vals, dense, atol=1e-10)
        # Residual of the returned eigenpairs.
        assert np.linalg.norm(T @ vecs - vecs @ np.diag(vals)) <= 1e-10

    def test_length_mismatch(self):
        with pytest.raises(DimensionMismatch):
            symtrid_eig([1.0, 2.0], [1.0, 2.0])


class TestLanczos:
    def test_diagonal_operator(self):
        op = operator_from_matrix(np.diag([3.0, 2.0, 1.0]))
        res = lanczos(op, iterations=3, seed=7)
        assert abs(res.eigenvalues[0] - 3.0) <= 1e-6
        vec = res.eigenvectors[:, 0]
        np.testing.assert_allclose(np.abs(vec), [1.0, 0.0, 0.0], atol=1e-6)

    def test_identity_breaks_down(self):
        op = operator_from_matrix(np.eye(10))
        res = lanczos(op, iterations=10, seed=0)
        assert res.breakdown
        assert res.iterations_run == 1
        np.testing.assert_allclose(res.eigenvalues, [1.0], atol=1e-12)

    def test_rank_one_operator(self, rng):
        v = rng.standard_normal(12)
        v /= np.linalg.norm(v)
        op = operator_from_matrix(np.outer(v, v))
        res = lanczos(op, iterations=10, seed=3)
        assert abs(res.eigenvalues[0] - 1.0) <= 1e-8
        top = res.eigenvectors[:, 0]
        assert min(np.linalg.norm(top - v), np.linalg.norm(top + v)) <= 1e-6

    def test_full_iterations_match_dense(self, rng):
        # At iterations == dim the Krylov space is complete, any spectrum.
        for _ in range(5):
            dim = int(rng.integers(5, 25))
            A = rng.standard_normal((dim, dim))
            A = 0.5 * (A + A.T)
            res = lanczos(operator_from_matrix(A), iterations=dim, seed=11)
            dense = np.linalg.eigvalsh(A)[::-1]
            np.testing.assert_allclose(res.eigenvalues, dense, atol=1e-8)

    def test_topk_with_extra_iterations(self, rng):
        # Decaying spectrum, k+10 iterations recover the top-k Ritz values.
        dim, k = 120, 3
        eigs = 5.0 * 0.8 ** np.arange(dim)
        basis, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        A = basis @ np.diag(eigs) @ basis.T
        res = lanczos(operator_from_matrix(A), iterations=k + 10, seed=5)
        np.testing.assert_allclose(res.eigenvalues[:k], eigs[:k], rtol=1e-6)

    def test_ritz_vectors_orthonormal(self, rng):
        A = rng.standard_normal((40, 40))
        A = 0.5 * (A + A.T)
        res = lanczos(operator_from_matrix(A), iterations=25, seed=2)
        gram = res.eigenvectors.T @ res.eigenvectors
        assert np.max(np.abs(gram - np.eye(gram.shape[0]))) <= 1e-6

    def test_plain_recurrence_top_value(self, rng):
        # Without reorthogonalization the top Ritz value is still accurate
        # at modest iteration counts.
        eigs = np.concatenate([[10.0, 6.0], rng.uniform(0, 1, 30)])
        basis, _ = np.linalg.qr(rng.standard_normal((32, 32)))
        A = basis @ np.diag(eigs) @ basis.T
        res = lanczos(operator_from_matrix(A), iterations=10, seed=4,
                      reorthogonalize=False)
        assert abs(res.eigenvalues[0] - 10.0) / 10.0 <= 1e-6

    def test_seed_reproducible(self, rng):
        A = rng.standard_normal((15, 15))
        A = 0.5 * (A + A.T)
        op = operator_from_matrix(A)
        r1 = lanczos(op, iterations=8, seed=9)
        r2 = lanczos(op, iterations=8, seed=9)
        np.testing.assert_array_equal(r1.eigenvalues, r2.eigenvalues)
        np.testing.assert_array_equal(r1.eigenvectors, r2.eigenvectors)

    def test_eigenvalues_sorted_descending(self, rng):
        A = rng.standard_normal((20, 20))
        A = 0.5 * (A + A.T)
        res = lanczos(operator_from_matrix(A), iterations=12, seed=1)
        assert np.all(np.diff(res.eigenvalues) <= 0)


class TestLinearOperator:
    def test_symmetry_residual_small_for_symmetric(self, rng):
        A = rng.standard_normal((25, 25))
        A = 0.5 * (A + A.T)
        assert symmetry_residual(operator_from_matrix(A)) <= 1e-6

    def test_symmetry_residual_flags_asymmetric(self, rng):
        A = rng.standard_normal((25, 25))  # generic, not symmetric
        assert symmetry_residual(operator_from_matrix(A)) > 1e-3

    def test_shape_validation(self):
        op = LinearOperator(dim=3, apply=lambda v: v)
        with pytest.raises(DimensionMismatch):
            op(np.ones(4))

    def test_materialize(self):
        A = np.arange(9.0).reshape(3, 3)
        np.testing.assert_array_equal(operator_from_matrix(A).materialize(), A)
