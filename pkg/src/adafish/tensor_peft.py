"""Low-rank 3-tensor reparameterizations of stacked weight updates.

A stack of L weight updates lives in one third-order tensor. Two compressed
forms are supported: a full core contracted with one factor matrix per mode
(entry formula s * sum_{t1,t2,t3} core[t1,t2,t3] P[t1,i] A[t2,j] B[t3,k]),
and the diagonal-core special case (sum_t w[t] P[t,i] A[t,j] B[t,k]).
Factor matrices are stored with rank as the leading axis; note the entry
formulas index them as [t, i], i.e. transposed relative to the reconstruction
products. Alongside reconstruction there are exact factor gradients (for the
synthetic fine-tuning demo), parameter counts, and the flop/storage model for
keeping gram-matrix optimizer state on a sliced core.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import ShapeError, as_matrix


def as_tensor3(t, name: str = "tensor") -> np.ndarray:
    out = np.ascontiguousarray(t, dtype=np.float64)
    if out.ndim != 3:
        raise ShapeError(f"{name} must be 3-D, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    return out


def mode_product(t, m, mode: int) -> np.ndarray:
    """Contract matrix m against the given mode (1, 2 or 3) of a 3-tensor."""
    t = as_tensor3(t)
    m = as_matrix(m, "m")
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode}")
    if m.shape[1] != t.shape[mode - 1]:
        raise ShapeError(
            f"mode-{mode} product needs m.cols == {t.shape[mode - 1]}, got m {m.shape}"
        )
    if mode == 1:
        return np.einsum("ai,ijk->ajk", m, t)
    if mode == 2:
        return np.einsum("aj,ijk->iak", m, t)
    return np.einsum("ak,ijk->ija", m, t)


@dataclass
class TuckerFactors:
    """Scaled core r x r x r with one rank-leading factor matrix per mode."""

    s: float
    core: np.ndarray  # r x r x r
    p: np.ndarray     # r x d1
    a: np.ndarray     # r x d2
    b: np.ndarray     # r x d3

    def __post_init__(self):
        self.core = as_tensor3(self.core, "core")
        self.p = as_matrix(self.p, "p")
        self.a = as_matrix(self.a, "a")
        self.b = as_matrix(self.b, "b")
        r = self.core.shape[0]
        if self.core.shape != (r, r, r):
            raise ShapeError(f"core must be cubical, got {self.core.shape}")
        for name, f in (("p", self.p), ("a", self.a), ("b", self.b)):
            if f.shape[0] != r:
                raise ShapeError(f"factor {name} has {f.shape[0]} rows, core rank is {r}")

    @property
    def rank(self) -> int:
        return self.core.shape[0]


@dataclass
class CpFactors:
    """Diagonal-core form: weights w plus rank-leading factor matrices."""

    weights: np.ndarray  # length r
    p: np.ndarray        # r x d1
    a: np.ndarray        # r x d2
    b: np.ndarray        # r x d3

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        self.p = as_matrix(self.p, "p")
        self.a = as_matrix(self.a, "a")
        self.b = as_matrix(self.b, "b")
        r = self.weights.shape[0]
        for name, f in (("p", self.p), ("a", self.a), ("b", self.b)):
            if f.shape[0] != r:
                raise ShapeError(f"factor {name} has {f.shape[0]} rows, weight count is {r}")

    @property
    def rank(self) -> int:
        return self.weights.shape[0]


def tucker_reconstruct(f: TuckerFactors) -> np.ndarray:
    """s * core x1 p^T x2 a^T x3 b^T, via chained mode products."""
    out = mode_product(f.core, f.p.T, 1)
    out = mode_product(out, f.a.T, 2)
    out = mode_product(out, f.b.T, 3)
    return f.s * out


def cp_reconstruct(f: CpFactors) -> np.ndarray:
    """Entry (i,j,k) = sum_t w[t] p[t,i] a[t,j] b[t,k]."""
    return np.einsum("t,ti,tj,tk->ijk", f.weights, f.p, f.a, f.b)


def tucker_grads(f: TuckerFactors, grad_tensor) -> dict[str, np.ndarray]:
    """Exact gradients of <grad_tensor, reconstruction> w.r.t. every factor."""
    g = as_tensor3(grad_tensor, "grad_tensor")
    recon_unit = tucker_reconstruct(TuckerFactors(1.0, f.core, f.p, f.a, f.b))
    return {
        "s": float(np.sum(recon_unit * g)),
        "core": f.s * np.einsum("ti,uj,vk,ijk->tuv", f.p, f.a, f.b, g),
        "p": f.s * np.einsum("tuv,uj,vk,ijk->ti", f.core, f.a, f.b, g),
        "a": f.s * np.einsum("tuv,ti,vk,ijk->uj", f.core, f.p, f.b, g),
        "b": f.s * np.einsum("tuv,ti,uj,ijk->vk", f.core, f.p, f.a, g),
    }


def cp_grads(f: CpFactors, grad_tensor) -> dict[str, np.ndarray]:
    g = as_tensor3(grad_tensor, "grad_tensor")
    return {
        "weights": np.einsum("ti,tj,tk,ijk->t", f.p, f.a, f.b, g),
        "p": np.einsum("t,tj,tk,ijk->ti", f.weights, f.a, f.b, g),
        "a": np.einsum("t,ti,tk,ijk->tj", f.weights, f.p, f.b, g),
        "b": np.einsum("t,ti,tj,ijk->tk", f.weights, f.p, f.a, g),
    }


def param_count(kind: str, stack_depth_l: int, d: int, r: int, per_stack: bool = True) -> int:
    """Trainable-parameter counts for a 12L x d x d update stack.

    full-core form: r^3 + (12L + 2d) r;  diagonal-core form: (12L + 2d + 1) r.
    For the matrix-wise baseline the natural unit is one matrix (2 d r);
    ``per_stack`` multiplies it across all 12L matrices. The tensor forms are
    inherently whole-stack, so ``per_stack`` is ignored for them.
    """
    if min(stack_depth_l, d, r) < 0:
        raise ValueError("arguments must be nonnegative")
    if kind == "tucker":
        return r ** 3 + (12 * stack_depth_l + 2 * d) * r
    if kind == "cp":
        return (12 * stack_depth_l + 2 * d + 1) * r
    if kind == "lora":
        per_matrix = 2 * d * r
        return 12 * stack_depth_l * per_matrix if per_stack else per_matrix
    raise ValueError(f"unknown kind {kind!r}")


@dataclass
class SliceCost:
    """Per-iteration cost of forming gram second moments on a sliced core.

    ``flops``/``storage`` cover the sliced-core scheme (one r x r gram per
    core slice plus one for each of the two side factors); the ``matrixwise_*``
    fields are the per-matrix baseline quoted for comparison. Which is smaller
    depends on (l, n, k, r), so both are reported.
    """

    flops: int
    storage: int
    matrixwise_flops: int
    matrixwise_storage: int


def slice_cost_model(stack_depth: int, n: int, k: int, r: int) -> SliceCost:
    """((n + k + l*r) r^2, (l + 2) r^2) plus the matrix-wise comparison totals."""
    if min(stack_depth, n, k, r) < 0:
        raise ValueError("arguments must be nonnegative")
    return SliceCost(
        flops=(n + k + stack_depth * r) * r * r,
        storage=(stack_depth + 2) * r * r,
        matrixwise_flops=stack_depth * (n + k) * r * r,
        matrixwise_storage=2 * stack_depth * r * r,
    )


@dataclass
class SliceFisherState:
    """Gram second moments for a sliced core plus its two side factors.

    Exactly (l + 2) grams of size r x r, matching the storage count of
    ``slice_cost_model``.
    """

    core_grams: list[np.ndarray]
    u_gram: np.ndarray
    v_gram: np.ndarray

    @classmethod
    def fresh(cls, stack_depth: int, r: int) -> "SliceFisherState":
        return cls(
            core_grams=[np.zeros((r, r)) for _ in range(stack_depth)],
            u_gram=np.zeros((r, r)),
            v_gram=np.zeros((r, r)),
        )

    def update(self, core_grad, u_grad, v_grad, beta2: float) -> None:
        """EMA each gram with the matching slice of the core gradient."""
        core_grad = as_tensor3(core_grad, "core_grad")
        if len(self.core_grams) != core_grad.shape[0]:
            raise ShapeError(
                f"state holds {len(self.core_grams)} slices, gradient has {core_grad.shape[0]}"
            )
        for i, g in enumerate(core_grad):
            raw = beta2 * self.core_grams[i] + (1.0 - beta2) * (g @ g.T)
            self.core_grams[i] = 0.5 * (raw + raw.T)
        for attr, g in (("u_gram", as_matrix(u_grad, "u_grad")), ("v_gram", as_matrix(v_grad, "v_grad"))):
            raw = beta2 * getattr(self, attr) + (1.0 - beta2) * (g @ g.T)
            setattr(self, attr, 0.5 * (raw + raw.T))

    @property
    def storage_entries(self) -> int:
        return (len(self.core_grams) + 2) * self.u_gram.shape[0] ** 2


def save_tensor_text(path, t) -> None:
    """Header line 'd1 d2 d3', then one entry per line in C layout order."""
    t = as_tensor3(t)
    with open(path, "w") as fh:
        fh.write(f"{t.shape[0]} {t.shape[1]} {t.shape[2]}\n")
        for v in t.ravel():
            fh.write(f"{v:.17g}\n")


def load_tensor_text(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: expected 'd1 d2 d3' header")
        dims = tuple(int(v) for v in header)
        values = [float(line) for line in fh if line.strip()]
    if len(values) != dims[0] * dims[1] * dims[2]:
        raise ValueError(f"{path}: expected {dims[0] * dims[1] * dims[2]} entries, got {len(values)}")
    return np.array(values).reshape(dims)
