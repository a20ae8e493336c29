import numpy as np
import pytest

from adafish.fisher import (
    classification_fisher,
    fisher_gram,
    fisher_hessian_gap,
    natural_dir_left,
    natural_dir_right,
    softmax_probs,
    verify_fisher_hessian,
    verify_kronecker_second_moment,
)
from adafish.linalg import SeededRng


def orthonormal_rows(r, n, seed):
    q, _ = np.linalg.qr(SeededRng(seed).gaussian_matrix(n, r))
    return q.T[:r]


class TestFisherGram:
    def test_orthonormal_rows_left_is_identity(self):
        g = orthonormal_rows(3, 8, 0)
        gram = fisher_gram(g, "left", batch_size=1).gram
        np.testing.assert_allclose(gram, np.eye(3), atol=1e-14)

    def test_zero_gradient(self):
        for side, dim in (("left", 2), ("right", 5)):
            gram = fisher_gram(np.zeros((2, 5)), side).gram
            np.testing.assert_array_equal(gram, np.zeros((dim, dim)))

    def test_left_matches_double_loop_oracle(self):
        g = SeededRng(1).gaussian_matrix(2, 5)
        want = np.zeros((2, 2))
        for i in range(2):
            for j in range(2):
                for k in range(5):
                    want[i, j] += g[i, k] * g[j, k]
        got = fisher_gram(g, "left", batch_size=3).gram
        np.testing.assert_allclose(got, 3.0 * want, atol=1e-14)

    def test_right_gram_rank_at_most_r(self):
        g = SeededRng(2).gaussian_matrix(2, 5)
        gram = fisher_gram(g, "right").gram
        eigvals = np.sort(np.linalg.eigvalsh(gram))[::-1]
        assert eigvals[2] <= 1e-10 * np.trace(gram)

    def test_gram_is_bitwise_symmetric(self):
        g = SeededRng(3).gaussian_matrix(4, 9)
        for side in ("left", "right"):
            gram = fisher_gram(g, side).gram
            np.testing.assert_array_equal(gram, gram.T)

    def test_batch_scale_recorded(self):
        out = fisher_gram(np.ones((1, 2)), "left", batch_size=7)
        assert out.sample_count == 7
        np.testing.assert_array_equal(out.gram, [[14.0]])

    def test_validation(self):
        with pytest.raises(ValueError, match="side"):
            fisher_gram(np.ones((1, 2)), "middle")
        with pytest.raises(ValueError, match="batch_size"):
            fisher_gram(np.ones((1, 2)), "left", batch_size=0)


class TestNaturalDirections:
    def test_zero_gradient(self):
        np.testing.assert_array_equal(natural_dir_left(np.zeros((2, 4)), 1.0, 1.0), np.zeros((2, 4)))
        np.testing.assert_array_equal(natural_dir_right(np.zeros((2, 4)), 1.0, 1.0), np.zeros((2, 4)))

    def test_orthonormal_halving(self):
        g = orthonormal_rows(2, 6, 4)
        np.testing.assert_allclose(natural_dir_left(g, 1.0, 1.0), g / 2.0, rtol=1e-13)

    def test_scalar_oracle(self):
        g = np.array([[2.0]])
        for damping in (0.5, 1.0, 10.0):
            want = 2.0 / (4.0 + damping)
            np.testing.assert_allclose(natural_dir_left(g, 1.0, damping), [[want]], rtol=1e-15)
            np.testing.assert_allclose(natural_dir_right(g, 1.0, damping), [[want]], rtol=1e-15)

    def test_right_row_vector_oracle(self):
        got = natural_dir_right(np.array([[3.0, 4.0]]), 1.0, 1.0)
        np.testing.assert_allclose(got, [[3.0 / 26.0, 4.0 / 26.0]], rtol=1e-15)

    def test_right_matches_direct_inverse(self):
        g = SeededRng(5).gaussian_matrix(3, 10)
        got = natural_dir_right(g, 2.0, 0.7)
        want = g @ np.linalg.inv(2.0 * (g.T @ g) + 0.7 * np.eye(10))
        assert np.linalg.norm(got - want) / np.linalg.norm(want) <= 1e-10

    def test_left_equals_right_under_equal_damping(self):
        rng = SeededRng(6)
        for _ in range(100):
            r = int(rng.integers(1, 9))
            n = int(rng.integers(r, 65))
            g = rng.gaussian_matrix(r, n)
            left = natural_dir_left(g, 1.0, 1.0)
            right = natural_dir_right(g, 1.0, 1.0)
            assert np.linalg.norm(left - right) / max(np.linalg.norm(left), 1e-300) <= 1e-10

    def test_damping_required(self):
        with pytest.raises(ValueError):
            natural_dir_left(np.ones((1, 2)), 1.0, 0.0)
        with pytest.raises(ValueError):
            natural_dir_right(np.ones((1, 2)), 1.0, 0.0)


class TestKroneckerSecondMoment:
    def test_errors_shrink_with_sample_size(self):
        for seed in range(3):
            report = verify_kronecker_second_moment(4, 2, np.eye(2), [1000, 10_000, 100_000], seed=seed)
            errs = report.frobenius_errors
            assert errs[0] > errs[1] > errs[2]

    def test_monte_carlo_ratio_window(self):
        report = verify_kronecker_second_moment(4, 2, np.eye(2), [1000, 100_000], seed=0)
        ratio = report.frobenius_errors[0] / report.frobenius_errors[1]
        assert 5.0 <= ratio <= 20.0

    def test_decay_exponent_near_half(self):
        for seed in range(3):
            report = verify_kronecker_second_moment(4, 2, np.eye(2), [1000, 10_000, 100_000], seed=seed)
            assert -0.65 <= report.decay_exponent <= -0.35

    def test_anisotropic_covariance(self):
        cov = np.array([[2.0, 0.5], [0.5, 1.0]])
        report = verify_kronecker_second_moment(4, 2, cov, [1000, 100_000], seed=1)
        assert report.frobenius_errors[0] > report.frobenius_errors[1]

    def test_determinism(self):
        a = verify_kronecker_second_moment(4, 2, np.eye(2), [1000], seed=5).frobenius_errors
        b = verify_kronecker_second_moment(4, 2, np.eye(2), [1000], seed=5).frobenius_errors
        assert a == b

    def test_materialization_cap(self):
        with pytest.raises(ValueError, match="too large"):
            verify_kronecker_second_moment(40, 2, np.eye(2), [100], seed=0)

    def test_csv_serialization(self, tmp_path):
        report = verify_kronecker_second_moment(4, 2, np.eye(2), [1000, 10_000], seed=0)
        path = tmp_path / "kron_moment.csv"
        report.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "N,frobenius_error"
        assert lines[1].startswith("1000,")
        assert float(lines[1].split(",")[1]) == report.frobenius_errors[0]


class TestFisherHessian:
    def test_zero_inputs_give_zero_gap(self):
        theta = SeededRng(7).gaussian_matrix(3, 3)
        assert fisher_hessian_gap(np.zeros((5, 3)), theta) == 0.0

    def test_binary_logistic_closed_form_block(self):
        # At theta = 0 each class-diagonal block of the two-class second
        # moment is 0.25 * E[x x^T].
        x = SeededRng(8).gaussian_matrix(12, 3)
        fisher = classification_fisher(x, np.zeros((3, 2)))
        want = 0.25 * (x.T @ x) / 12.0
        np.testing.assert_allclose(fisher[:3, :3], want, atol=1e-12)
        np.testing.assert_allclose(fisher[3:, 3:], want, atol=1e-12)
        np.testing.assert_allclose(fisher[:3, 3:], -want, atol=1e-12)

    def test_binary_closed_form_vs_finite_difference_hessian(self):
        x = SeededRng(9).gaussian_matrix(10, 3)
        assert fisher_hessian_gap(x, np.zeros((3, 2))) <= 1e-8

    def test_random_three_class(self):
        assert verify_fisher_hessian(feature_dim=3, num_classes=3, num_points=20, seed=0) <= 1e-5

    def test_gap_invariant_to_class_relabeling(self):
        rng = SeededRng(10)
        x = rng.gaussian_matrix(15, 3)
        theta = rng.gaussian_matrix(3, 4, stddev=0.5)
        base = fisher_hessian_gap(x, theta)
        permuted = fisher_hessian_gap(x, theta[:, [2, 0, 3, 1]])
        assert abs(base - permuted) <= 1e-12

    def test_probs_are_normalized(self):
        rng = SeededRng(11)
        p = softmax_probs(rng.gaussian_matrix(6, 3), rng.gaussian_matrix(3, 4))
        np.testing.assert_allclose(p.sum(axis=1), np.ones(6), rtol=1e-12)
        assert np.all(p > 0)
