"""LoRA-adapted linear layers and a small MLP with exact manual backprop.

A layer keeps its pretrained weight ``w0`` frozen (numpy read-only) and
trains the low-rank factors ``u`` (r x n) and ``v`` (r x k); the effective
weight is ``w0 + scale * u.T @ v``. Losses are negative log-probabilities
(softmax cross-entropy, Gaussian squared error), and every gradient here is
hand-derived and checked against central finite differences in the tests.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .linalg import SeededRng, ShapeError, as_matrix

ACTIVATIONS = ("tanh", "relu")


@dataclass
class LoraLinear:
    """Frozen base weight plus trainable rank-r factors."""

    w0: np.ndarray  # n x k, frozen
    u: np.ndarray   # r x n
    v: np.ndarray   # r x k
    scale: float = 1.0

    def __post_init__(self):
        self.w0 = as_matrix(self.w0, "w0")
        self.u = as_matrix(self.u, "u")
        self.v = as_matrix(self.v, "v")
        n, k = self.w0.shape
        r = self.u.shape[0]
        if self.u.shape != (r, n) or self.v.shape != (r, k):
            raise ShapeError(
                f"factor shapes {self.u.shape} / {self.v.shape} do not match "
                f"base {self.w0.shape} (expected {r} x {n} and {r} x {k})"
            )
        if r > min(n, k):
            raise ValueError(f"rank {r} exceeds min(n, k) = {min(n, k)}")
        self.w0 = self.w0.copy()
        self.w0.flags.writeable = False

    @property
    def rank(self) -> int:
        return self.u.shape[0]

    @property
    def in_dim(self) -> int:
        return self.w0.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w0.shape[1]


@dataclass
class MlpModel:
    """Stack of LoraLinear layers with one bias vector per layer."""

    layers: list[LoraLinear]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if len(self.biases) != len(self.layers):
            raise ShapeError("need exactly one bias vector per layer")
        self.biases = [np.asarray(b, dtype=np.float64).reshape(-1) for b in self.biases]
        for i, (layer, bias) in enumerate(zip(self.layers, self.biases)):
            if bias.shape[0] != layer.out_dim:
                raise ShapeError(f"bias {i} has length {bias.shape[0]}, layer emits {layer.out_dim}")
            if i + 1 < len(self.layers) and layer.out_dim != self.layers[i + 1].in_dim:
                raise ShapeError(
                    f"layer {i} emits {layer.out_dim} features but layer {i + 1} "
                    f"takes {self.layers[i + 1].in_dim}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim


@dataclass
class Batch:
    """Inputs plus integer class labels or a float target matrix."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = as_matrix(self.x, "x")
        self.y = np.asarray(self.y)
        if self.y.ndim == 1 and np.issubdtype(self.y.dtype, np.integer):
            if self.y.shape[0] != self.x.shape[0]:
                raise ShapeError("label count does not match batch size")
            if self.y.size and self.y.min() < 0:
                raise ValueError("class labels must be nonnegative")
        else:
            self.y = as_matrix(self.y, "y")
            if self.y.shape[0] != self.x.shape[0]:
                raise ShapeError("target rows do not match batch size")

    @property
    def size(self) -> int:
        return self.x.shape[0]


def lora_materialize(layer: LoraLinear) -> np.ndarray:
    """Effective weight w0 + scale * u^T v; never mutates the layer."""
    return layer.w0 + layer.scale * (layer.u.T @ layer.v)


def lora_grads(layer: LoraLinear, grad_w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Factor gradients from the full-weight gradient.

    With effective weight w0 + scale * u^T v and G = dLoss/dW (n x k):
    dLoss/du = scale * v G^T (r x n), dLoss/dv = scale * u G (r x k).
    """
    grad_w = as_matrix(grad_w, "grad_w")
    if grad_w.shape != layer.w0.shape:
        raise ShapeError(f"grad_w is {grad_w.shape}, base weight is {layer.w0.shape}")
    return layer.scale * (layer.v @ grad_w.T), layer.scale * (layer.u @ grad_w)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def _act_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return (z > 0.0).astype(np.float64)


def forward(model: MlpModel, x) -> tuple[np.ndarray, list]:
    """Run the net; returns logits and the activation cache for backprop.

    The cache holds, per layer, the layer input and pre-activation.
    """
    a = as_matrix(x, "x")
    if a.shape[1] != model.in_dim:
        raise ShapeError(f"input has {a.shape[1]} features, model takes {model.in_dim}")
    cache = []
    last = len(model.layers) - 1
    for i, (layer, bias) in enumerate(zip(model.layers, model.biases)):
        z = a @ lora_materialize(layer) + bias
        cache.append((a, z))
        a = z if i == last else _act(z, model.activation)
    return a, cache


def backward(model: MlpModel, cache: list, grad_logits: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of the loss w.r.t. every trainable parameter.

    ``grad_logits`` is dLoss/dlogits from one of the loss functions below.
    Returns a flat dict keyed like ``named_parameters``.
    """
    grads: dict[str, np.ndarray] = {}
    dz = as_matrix(grad_logits, "grad_logits")
    for i in range(len(model.layers) - 1, -1, -1):
        a_in, z = cache[i]
        layer = model.layers[i]
        dw = a_in.T @ dz
        du, dv = lora_grads(layer, dw)
        grads[f"layer{i}.u"] = du
        grads[f"layer{i}.v"] = dv
        grads[f"layer{i}.bias"] = dz.sum(axis=0)
        if i > 0:
            da = dz @ lora_materialize(layer).T
            dz = da * _act_grad(cache[i - 1][1], model.activation)
    return grads


def nll_loss_and_grad(logits, y) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its logit gradient, log-sum-exp stabilized."""
    logits = as_matrix(logits, "logits")
    y = np.asarray(y)
    batch = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(lse - shifted[np.arange(batch), y]))
    softmax = np.exp(shifted)
    softmax /= softmax.sum(axis=1, keepdims=True)
    grad = softmax
    grad[np.arange(batch), y] -= 1.0
    return loss, grad / batch


def mse_loss_and_grad(preds, targets) -> tuple[float, np.ndarray]:
    """Half squared error summed over outputs, averaged over the batch."""
    preds = as_matrix(preds, "preds")
    targets = as_matrix(targets, "targets")
    if preds.shape != targets.shape:
        raise ShapeError(f"predictions {preds.shape} vs targets {targets.shape}")
    diff = preds - targets
    batch = preds.shape[0]
    return float(0.5 * np.sum(diff * diff) / batch), diff / batch


def batch_loss(model: MlpModel, batch: Batch) -> float:
    logits, _ = forward(model, batch.x)
    if _is_classification(batch):
        return nll_loss_and_grad(logits, batch.y)[0]
    return mse_loss_and_grad(logits, batch.y)[0]


def batch_loss_and_grads(model: MlpModel, batch: Batch) -> tuple[float, dict[str, np.ndarray]]:
    """One forward/backward pass; loss kind follows the label dtype."""
    logits, cache = forward(model, batch.x)
    if _is_classification(batch):
        loss, grad_logits = nll_loss_and_grad(logits, batch.y)
    else:
        loss, grad_logits = mse_loss_and_grad(logits, batch.y)
    return loss, backward(model, cache, grad_logits)


def _is_classification(batch: Batch) -> bool:
    return batch.y.ndim == 1


def named_parameters(model: MlpModel) -> dict[str, np.ndarray]:
    """Trainable parameters only; frozen base weights are not listed."""
    params: dict[str, np.ndarray] = {}
    for i, (layer, bias) in enumerate(zip(model.layers, model.biases)):
        params[f"layer{i}.u"] = layer.u
        params[f"layer{i}.v"] = layer.v
        params[f"layer{i}.bias"] = bias
    return params


def set_parameter(model: MlpModel, name: str, value: np.ndarray) -> None:
    layer_part, kind = name.split(".")
    i = int(layer_part.removeprefix("layer"))
    if kind == "u":
        model.layers[i].u = value
    elif kind == "v":
        model.layers[i].v = value
    elif kind == "bias":
        model.biases[i] = value
    else:
        raise KeyError(name)


def build_mlp(
    dims: tuple[int, ...] | list[int],
    rank: int,
    seed: int,
    activation: str = "tanh",
    scale: float = 1.0,
    v_stddev: float = 0.02,
) -> MlpModel:
    """Fresh model: w0 ~ N(0, 1/n) per layer, u = 0, v ~ N(0, v_stddev^2).

    With u = 0 the adapter contributes nothing, so a fresh model computes
    exactly what its base weights compute.
    """
    if len(dims) < 2:
        raise ValueError("need at least input and output dims")
    root = SeededRng(seed)
    layers, biases = [], []
    for i in range(len(dims) - 1):
        n, k = dims[i], dims[i + 1]
        rng = root.derive(i)
        w0 = rng.gaussian_matrix(n, k, 0.0, 1.0 / np.sqrt(n))
        v = rng.gaussian_matrix(rank, k, 0.0, v_stddev)
        layers.append(LoraLinear(w0=w0, u=np.zeros((rank, n)), v=v, scale=scale))
        biases.append(np.zeros(k))
    return MlpModel(layers=layers, biases=biases, activation=activation)


def clone_model(model: MlpModel) -> MlpModel:
    layers = [
        LoraLinear(w0=l.w0.copy(), u=l.u.copy(), v=l.v.copy(), scale=l.scale)
        for l in model.layers
    ]
    return MlpModel(layers=layers, biases=[b.copy() for b in model.biases], activation=model.activation)


def finite_diff_check(
    model: MlpModel,
    batch: Batch,
    epsilon: float = 1e-6,
    max_entries_per_param: int = 24,
    seed: int = 0,
) -> float:
    """Max relative gap between analytic and central-difference gradients.

    Samples up to ``max_entries_per_param`` coordinates of every trainable
    parameter and returns max |analytic - fd| / max(1, |analytic|).
    """
    if not 1e-8 <= epsilon <= 1e-4:
        warnings.warn(
            f"epsilon {epsilon} outside [1e-8, 1e-4]; truncation or roundoff error "
            "will dominate the comparison",
            stacklevel=2,
        )
    _, grads = batch_loss_and_grads(model, batch)
    rng = SeededRng(seed)
    probe = clone_model(model)
    worst = 0.0
    for name, param in named_parameters(probe).items():
        flat = param.reshape(-1)
        count = min(max_entries_per_param, flat.size)
        idx = rng.permutation(flat.size)[:count]
        analytic = grads[name].reshape(-1)
        for j in idx:
            orig = flat[j]
            flat[j] = orig + epsilon
            up = batch_loss(probe, batch)
            flat[j] = orig - epsilon
            down = batch_loss(probe, batch)
            flat[j] = orig
            fd = (up - down) / (2.0 * epsilon)
            err = abs(analytic[j] - fd) / max(1.0, abs(analytic[j]))
            worst = max(worst, err)
    return worst
