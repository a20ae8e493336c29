"""Dense linear algebra primitives for small Gram systems.

Everything is float64 and row-major (C order). Matrices are plain numpy
arrays; the helpers here add the shape/symmetry checking, the damped SPD
solve with jitter escalation, and the low-rank push-through solve that the
optimizer and Fisher code build on. Randomness comes from PCG64 with
Gaussians generated by Box-Muller on the raw uniforms, so a seed pins the
output stream bit-for-bit.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg

__all__ = [
    "ShapeError",
    "SingularMatrixError",
    "SeededRng",
    "as_matrix",
    "matmul",
    "spd_solve",
    "push_through_solve",
    "seeded_gaussian",
    "save_matrix_text",
    "load_matrix_text",
]

# Jitter ladder for the SPD solve: retry factorization at 1e-12, escalate
# x10 until 1e-4, then give up. EMA Gram matrices can be numerically
# semidefinite, so a bare Cholesky is not enough.
_JITTER_START = 1e-12
_JITTER_MAX = 1e-4

_ASYMMETRY_TOL = 1e-12


class ShapeError(ValueError):
    """Operands have incompatible dimensions."""


class SingularMatrixError(np.linalg.LinAlgError):
    """Factorization failed even after maximum jitter escalation."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 C-order array, rejecting non-finite entries."""
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out.ndim == 1:
        out = out.reshape(1, -1)
    if out.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    return out


def matmul(a, b) -> np.ndarray:
    """Matrix product with explicit conformability checking."""
    a = as_matrix(a, "A")
    b = as_matrix(b, "B")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def spd_solve(s, b, damping: float = 0.0, *, escalate_jitter: bool = True) -> np.ndarray:
    """Solve (S + damping*I) X = B for symmetric positive (semi)definite S.

    S is symmetrized internally (floating-point EMA accumulation breaks
    exact symmetry), then factored by Cholesky. If the factorization fails
    and ``escalate_jitter`` is set, the solve retries with an added jitter
    of 1e-12 escalating x10 up to 1e-4 before raising SingularMatrixError.
    """
    s = as_matrix(s, "S")
    b = as_matrix(b, "B")
    if s.shape[0] != s.shape[1]:
        raise ShapeError(f"S must be square, got {s.shape}")
    if s.shape[0] != b.shape[0]:
        raise ShapeError(f"S is {s.shape} but B has {b.shape[0]} rows")
    if damping < 0.0:
        raise ValueError(f"damping must be nonnegative, got {damping}")

    scale = np.max(np.abs(s)) if s.size else 0.0
    asym = np.max(np.abs(s - s.T)) if s.size else 0.0
    if asym > _ASYMMETRY_TOL * max(1.0, scale):
        raise ValueError(
            f"S is not symmetric: max |S - S^T| = {asym:.3e} exceeds "
            f"{_ASYMMETRY_TOL:.0e} * max(1, |S|)"
        )
    sym = 0.5 * (s + s.T)
    if damping:
        sym = sym + damping * np.eye(sym.shape[0])

    rungs = [0.0]
    if escalate_jitter:
        rungs += [_JITTER_START * 10.0 ** k for k in range(9)]  # 1e-12 .. 1e-4
    for jitter in rungs:
        try:
            system = sym if jitter == 0.0 else sym + jitter * np.eye(sym.shape[0])
            factor = scipy.linalg.cho_factor(system, lower=True)
            return scipy.linalg.cho_solve(factor, b)
        except np.linalg.LinAlgError:
            last_jitter = jitter
    raise SingularMatrixError(
        f"Cholesky failed for {sym.shape[0]}x{sym.shape[0]} system "
        f"(damping={damping:.3e}, final jitter tried={last_jitter:.3e})"
    )


def push_through_solve(g, scale: float, damping: float) -> np.ndarray:
    """Compute g (scale*g^T g + damping*I_n)^{-1} without forming the n x n system.

    Uses the push-through identity
    g (scale*g^T g + damping*I_n)^{-1} = (scale*g g^T + damping*I_r)^{-1} g,
    so only an r x r system is solved. ``g`` is r x n with r <= n expected;
    larger r is still correct but defeats the point, so it only warns.
    With damping == 0 a rank-deficient g raises SingularMatrixError.
    """
    g = as_matrix(g, "g")
    if scale <= 0.0:
        raise ValueError(f"scale must be positive, got {scale}")
    if damping < 0.0:
        raise ValueError(f"damping must be nonnegative, got {damping}")
    r, n = g.shape
    if r > n:
        warnings.warn(
            f"push_through_solve expects r <= n, got {r} x {n}; the small side "
            "of the solve is now n",
            stacklevel=2,
        )
    gram = scale * (g @ g.T)
    return spd_solve(gram, g, damping, escalate_jitter=damping > 0.0)


class SeededRng:
    """Deterministic random source: PCG64 stream identified by its seed.

    One instance per worker; instances are not thread-safe. ``derive``
    gives an independent child stream from a splitmix64 hash of
    (seed, index), so chunked Monte Carlo loops stay reproducible under
    any chunk schedule as long as results are combined in index order.
    """

    algorithm = "pcg64"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniforms(self, count: int) -> np.ndarray:
        """count doubles in [0, 1)."""
        return self._gen.random(count)

    def integers(self, low: int, high: int, count: int | None = None):
        return self._gen.integers(low, high, size=count)

    def permutation(self, count: int) -> np.ndarray:
        return self._gen.permutation(count)

    def gaussian_matrix(self, rows: int, cols: int, mean: float = 0.0, stddev: float = 1.0) -> np.ndarray:
        """rows x cols matrix of N(mean, stddev^2) via Box-Muller."""
        if stddev < 0.0:
            raise ValueError(f"stddev must be nonnegative, got {stddev}")
        count = rows * cols
        if stddev == 0.0:
            return np.full((rows, cols), float(mean))
        pairs = (count + 1) // 2
        # 1 - u keeps the log argument strictly positive.
        u1 = 1.0 - self._gen.random(pairs)
        u2 = self._gen.random(pairs)
        radius = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([radius * np.cos(2.0 * np.pi * u2), radius * np.sin(2.0 * np.pi * u2)])[:count]
        return (mean + stddev * z).reshape(rows, cols)

    def derive(self, index: int) -> "SeededRng":
        """Independent child stream for chunk/worker ``index``."""
        return SeededRng(_splitmix64(self.seed * 0x9E3779B97F4A7C15 + index + 1))


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return x ^ (x >> 31)


def seeded_gaussian(rows: int, cols: int, seed: int, mean: float = 0.0, stddev: float = 1.0) -> np.ndarray:
    """Deterministic Gaussian matrix: fixed (rows, cols, seed) fixes every bit."""
    return SeededRng(seed).gaussian_matrix(rows, cols, mean, stddev)


def save_matrix_text(path, a) -> None:
    """Write a matrix as text: one row per line, 17 significant digits."""
    a = as_matrix(a, "matrix")
    with open(path, "w") as fh:
        for row in a:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_matrix_text(path) -> np.ndarray:
    with open(path) as fh:
        rows = [[float(tok) for tok in line.split()] for line in fh if line.strip()]
    if not rows:
        raise ValueError(f"{path}: empty matrix file")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError(f"{path}: ragged rows")
    return np.array(rows, dtype=np.float64)
