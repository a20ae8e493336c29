"""Scikit-learn style estimators wrapping LoRA networks and the optimizers.

These are the ecosystem-facing entry points: ``fit``/``predict``/``score``
with ``get_params`` from BaseEstimator, so the nets drop into pipelines,
grid search and ``clone``. The numeric machinery lives in the sibling
modules; this layer only validates arrays and drives the training loop.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .datasets import minibatch_indices
from .linalg import SeededRng
from .model import Batch, batch_loss_and_grads, build_mlp, forward, named_parameters, set_parameter
from .optim import Hyperparams, make_optimizer


def _fit_arrays(model, x, y, optimizer_kind, hp_kwargs, batch_size, epochs, seed):
    n = x.shape[0]
    steps_per_epoch = n // min(batch_size, n)
    hp = Hyperparams(total_steps=epochs * steps_per_epoch, **hp_kwargs)
    optimizer = make_optimizer(optimizer_kind, hp)
    rng = SeededRng(seed).derive(7001)
    step = 0
    for _ in range(epochs):
        for idx in minibatch_indices(n, batch_size, rng):
            _, grads = batch_loss_and_grads(model, Batch(x=x[idx], y=y[idx]))
            new_params, _ = optimizer.step(named_parameters(model), grads, step)
            for name, value in new_params.items():
                set_parameter(model, name, value)
            step += 1
    return model


class _LoraNetBase(BaseEstimator):
    def __init__(
        self,
        hidden_dims=(32,),
        rank=4,
        optimizer="adafish",
        lr0=1e-1,
        lr_min=0.0,
        weight_decay=None,
        curvature_scale=2e-4,
        beta1=0.8,
        beta2=0.99,
        damping=1e-15,
        schedule="cosine",
        batch_size=32,
        epochs=100,
        activation="tanh",
        seed=0,
    ):
        self.hidden_dims = hidden_dims
        self.rank = rank
        self.optimizer = optimizer
        self.lr0 = lr0
        self.lr_min = lr_min
        self.weight_decay = weight_decay
        self.curvature_scale = curvature_scale
        self.beta1 = beta1
        self.beta2 = beta2
        self.damping = damping
        self.schedule = schedule
        self.batch_size = batch_size
        self.epochs = epochs
        self.activation = activation
        self.seed = seed

    def _hp_kwargs(self):
        decay = self.weight_decay
        if decay is None:
            decay = 1e-4 if self.optimizer == "adamw" else 1e-1
        return dict(
            lr0=self.lr0,
            lr_min=self.lr_min,
            weight_decay=decay,
            curvature_scale=self.curvature_scale,
            beta1=self.beta1,
            beta2=self.beta2,
            damping=self.damping,
            schedule=self.schedule,
        )

    def _build_and_fit(self, x, y, out_dim):
        dims = [x.shape[1]] + [int(h) for h in self.hidden_dims] + [out_dim]
        model = build_mlp(dims, self.rank, self.seed, activation=self.activation)
        return _fit_arrays(
            model, x, y, self.optimizer, self._hp_kwargs(), self.batch_size, self.epochs, self.seed
        )


class LoraNetClassifier(_LoraNetBase, ClassifierMixin):
    """Softmax MLP with low-rank adapters, trained by the chosen optimizer."""

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        self.n_features_in_ = X.shape[1]
        self.model_ = self._build_and_fit(X, encoded.astype(np.int64), len(self.classes_))
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        logits, _ = forward(self.model_, X)
        return logits

    def predict_proba(self, X):
        logits = self.decision_function(X)
        shifted = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(shifted)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        logits = self.decision_function(X)
        return self.classes_[logits.argmax(axis=1)]


class LoraNetRegressor(_LoraNetBase, RegressorMixin):
    """Linear-output MLP with low-rank adapters, squared-error training."""

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, multi_output=True)
        targets = y.reshape(-1, 1) if y.ndim == 1 else y
        self._single_output = y.ndim == 1
        self.n_features_in_ = X.shape[1]
        self.model_ = self._build_and_fit(X, targets.astype(np.float64), targets.shape[1])
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        out, _ = forward(self.model_, X)
        return out[:, 0] if self._single_output else out
