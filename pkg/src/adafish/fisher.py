"""Gram-matrix curvature: left/right Fisher grams and natural directions.

For a matrix-shaped gradient g (r x n) the left gram g g^T is r x r and the
right gram g^T g is n x n with rank at most r. Damped inverses of either
side precondition the gradient; the right side is applied through the
push-through identity so only an r x r system is ever factored, and the two
sides coincide when given the same damping:

    (c g g^T + d I)^{-1} g  ==  g (c g^T g + d I)^{-1}.

The two ``verify_*`` routines are numerical experiments used by the check
suite: one measures how fast the empirical vectorized second moment of a
gradient with iid zero-mean columns collapses onto its Kronecker form, the
other checks the exact softmax-model second moment against a
finite-difference Hessian of the marginalized loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import SeededRng, ShapeError, as_matrix, push_through_solve, spd_solve

_MAX_MATERIALIZED = 64  # largest n*r for which an (nr)^2 matrix may be formed

_MOMENT_CHUNK = 20_000


@dataclass
class FisherGram:
    """One side of the gradient gram, with the batch-size scale recorded."""

    side: str  # "left" or "right"
    gram: np.ndarray
    sample_count: int


def fisher_gram(g, side: str, batch_size: int = 1) -> FisherGram:
    """batch_size * g g^T (left, r x r) or batch_size * g^T g (right, n x n)."""
    g = as_matrix(g, "g")
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    raw = g @ g.T if side == "left" else g.T @ g
    # Exact symmetry survives the EMA downstream; float addition commutes.
    gram = 0.5 * (raw + raw.T) * batch_size
    return FisherGram(side=side, gram=gram, sample_count=batch_size)


def natural_dir_left(g, scale: float, damping: float) -> np.ndarray:
    """(scale * g g^T + damping * I)^{-1} g, an r x r solve."""
    g = as_matrix(g, "g")
    if damping <= 0.0:
        raise ValueError(f"damping must be positive, got {damping}")
    return spd_solve(scale * (g @ g.T), g, damping)


def natural_dir_right(g, scale: float, damping: float) -> np.ndarray:
    """g (scale * g^T g + damping * I)^{-1} without forming the n x n gram."""
    g = as_matrix(g, "g")
    if damping <= 0.0:
        raise ValueError(f"damping must be positive, got {damping}")
    return push_through_solve(g, scale, damping)


@dataclass
class KroneckerMomentReport:
    """Kronecker-collapse errors of the vectorized second moment vs sample size."""

    sample_sizes: list[int]
    frobenius_errors: list[float]
    decay_exponent: float

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("N,frobenius_error\n")
            for n, err in zip(self.sample_sizes, self.frobenius_errors):
                fh.write(f"{n},{err:.17g}\n")

    def summary(self) -> str:
        return (
            f"kronecker-collapse decay exponent {self.decay_exponent:.3f} "
            f"over N={self.sample_sizes}"
        )


def verify_kronecker_second_moment(n: int, r: int, covariance, sample_sizes, seed: int = 0) -> KroneckerMomentReport:
    """Measure || E_N[vec(g) vec(g)^T] - I_n (x) avg(g g^T / n) ||_F per N.

    Gradient samples are r x n with columns drawn iid N(0, covariance), the
    setting in which both sides converge to I_n (x) covariance; the gap is a
    Monte Carlo residual expected to decay like N^(-1/2). The (nr)^2 moment
    matrix is materialized, so n*r is capped at 64. Sampling is chunked with
    per-chunk derived seeds and summed in chunk order, which keeps the result
    deterministic for a given seed.
    """
    if n * r > _MAX_MATERIALIZED:
        raise ValueError(
            f"n*r = {n * r} too large to materialize the ({n * r})^2 moment matrix "
            f"(cap {_MAX_MATERIALIZED})"
        )
    cov = as_matrix(covariance, "covariance")
    if cov.shape != (r, r):
        raise ShapeError(f"covariance must be {r} x {r}, got {cov.shape}")
    chol = np.linalg.cholesky(cov)
    sizes = [int(s) for s in sample_sizes]
    if any(s < 2 for s in sizes):
        raise ValueError("sample sizes must be >= 2")

    root = SeededRng(seed)
    errors = []
    eye_n = np.eye(n)
    for size_index, total in enumerate(sizes):
        vec_moment = np.zeros((n * r, n * r))
        gram_sum = np.zeros((r, r))
        done = 0
        chunk_index = 0
        while done < total:
            m = min(_MOMENT_CHUNK, total - done)
            rng = root.derive(size_index * 10_000 + chunk_index)
            z = rng.gaussian_matrix(r, n * m).reshape(r, m, n).transpose(1, 0, 2)
            g = np.einsum("ij,mjn->min", chol, z)  # m samples of r x n
            # Column-major vec: sample rows are [g[:,0]; g[:,1]; ...].
            vecs = g.transpose(0, 2, 1).reshape(m, n * r)
            vec_moment += vecs.T @ vecs
            gram_sum += np.einsum("mij,mkj->ik", g, g)
            done += m
            chunk_index += 1
        vec_moment /= total
        kron_form = np.kron(eye_n, gram_sum / (total * n))
        errors.append(float(np.linalg.norm(vec_moment - kron_form)))

    exponent = float("nan")
    if len(sizes) >= 2:
        slope = np.polyfit(np.log(np.array(sizes, dtype=float)), np.log(errors), 1)[0]
        exponent = float(slope)
    return KroneckerMomentReport(sample_sizes=sizes, frobenius_errors=errors, decay_exponent=exponent)


def softmax_probs(x, theta) -> np.ndarray:
    """Row-wise class probabilities of a linear softmax model."""
    logits = as_matrix(x, "x") @ as_matrix(theta, "theta")
    shifted = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(shifted)
    return p / p.sum(axis=1, keepdims=True)


def classification_fisher(x, theta) -> np.ndarray:
    """Exact second moment of the per-sample log-probability gradient.

    Labels are marginalized under the model itself, giving
    (1/m) sum_x (diag(p) - p p^T) (x) x x^T over the vectorized parameter
    (column-major), a (d*C)^2 matrix.
    """
    x = as_matrix(x, "x")
    p = softmax_probs(x, theta)
    d = x.shape[1]
    c = p.shape[1]
    fisher = np.zeros((d * c, d * c))
    for xi, pi in zip(x, p):
        fisher += np.kron(np.diag(pi) - np.outer(pi, pi), np.outer(xi, xi))
    return fisher / x.shape[0]


def _marginalized_nll_grad(x, theta, soft_labels) -> np.ndarray:
    """Gradient of (1/m) sum_x sum_y q(y|x) * (-log p(y|x; theta)).

    ``soft_labels`` q is held fixed, so this is a cross-entropy against
    frozen soft targets; at the point the targets were taken from, its
    Hessian is the model's second moment above.
    """
    p = softmax_probs(x, theta)
    return x.T @ (p - soft_labels) / x.shape[0]


def fisher_hessian_gap(x, theta, epsilon: float = 1e-5) -> float:
    """Max relative entrywise gap between the exact second moment and the
    central-finite-difference Hessian of the marginalized loss."""
    x = as_matrix(x, "x")
    theta = as_matrix(theta, "theta")
    d, c = theta.shape
    soft = softmax_probs(x, theta)
    fisher = classification_fisher(x, theta)

    dim = d * c
    hessian = np.zeros((dim, dim))
    for j in range(dim):
        row, col = j % d, j // d  # column-major coordinate
        probe = theta.copy()
        probe[row, col] += epsilon
        up = _marginalized_nll_grad(x, probe, soft)
        probe[row, col] -= 2.0 * epsilon
        down = _marginalized_nll_grad(x, probe, soft)
        hessian[:, j] = ((up - down) / (2.0 * epsilon)).flatten(order="F")

    return float(np.max(np.abs(fisher - hessian) / np.maximum(1.0, np.abs(fisher))))


def verify_fisher_hessian(
    feature_dim: int, num_classes: int, num_points: int, seed: int = 0, epsilon: float = 1e-5
) -> float:
    """fisher_hessian_gap on a random softmax regression instance."""
    rng = SeededRng(seed)
    x = rng.gaussian_matrix(num_points, feature_dim)
    theta = rng.gaussian_matrix(feature_dim, num_classes, 0.0, 0.5)
    return fisher_hessian_gap(x, theta, epsilon)
