"""Optimizers: the Gram-preconditioned adaptive method plus baselines.

The main update keeps, per matrix parameter, a first-moment matrix m and an
r x r second-moment gram h (an EMA of g g^T, not elementwise squares). Both
are bias-corrected and the step solves

    theta <- theta - lr * (curvature_scale * h_hat + damping * I)^{-1} m_hat

on the gram side, after a decoupled weight-decay shrink. Baselines are
standard decoupled AdamW and momentum SGD. A routing policy decides per
parameter: matrices whose small side fits the gram cap use the gram update
(transposed if needed so the gram sits on the smaller dimension), vectors
and oversized matrices fall back to AdamW.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import spd_solve

ADAM_EPS = 1e-8

SCHEDULES = ("cosine", "constant")
OPTIMIZERS = ("adafish", "adamw", "sgd")


@dataclass
class Hyperparams:
    """Shared optimizer knobs; defaults are the fine-tuning recipe defaults."""

    lr0: float = 1e-1
    lr_min: float = 0.0
    total_steps: int = 1000
    weight_decay: float = 1e-1
    curvature_scale: float = 2e-4
    beta1: float = 0.8
    beta2: float = 0.99
    damping: float = 1e-15
    schedule: str = "cosine"

    def __post_init__(self):
        if not 0.0 < self.beta1 < 1.0:
            raise ValueError(f"beta1 must be in (0, 1), got {self.beta1}")
        if not 0.0 < self.beta2 < 1.0:
            raise ValueError(f"beta2 must be in (0, 1), got {self.beta2}")
        if self.damping <= 0.0:
            raise ValueError(f"damping must be positive, got {self.damping}")
        if self.curvature_scale < 0.0:
            raise ValueError(f"curvature_scale must be >= 0, got {self.curvature_scale}")
        if self.weight_decay < 0.0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.lr0 <= 0.0 or self.lr_min < 0.0:
            raise ValueError("learning rates must be positive (lr_min >= 0)")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")


@dataclass
class AdaFishState:
    m: np.ndarray  # first moment, r x n
    h: np.ndarray  # gram second moment, r x r
    t: int = 0


@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


@dataclass
class MomentumState:
    m: np.ndarray


def fresh_adafish_state(shape: tuple[int, int]) -> AdaFishState:
    r = shape[0]
    return AdaFishState(m=np.zeros(shape), h=np.zeros((r, r)), t=0)


def fresh_adamw_state(shape) -> AdamWState:
    return AdamWState(m=np.zeros(shape), v=np.zeros(shape), t=0)


def adafish_step(theta, g, state: AdaFishState, hp: Hyperparams, lr: float):
    """One gram-preconditioned step; returns (new_theta, new_state).

    ``theta`` and ``g`` are r x n with r the gram side. Weight decay is
    decoupled and applied first as a multiplicative shrink, so a pure-decay
    run contracts by exactly (1 - lr * weight_decay) per step. ``h`` is
    resymmetrized after the EMA to keep the solve's input exactly symmetric.
    """
    t = state.t + 1
    m = hp.beta1 * state.m + (1.0 - hp.beta1) * g
    h_raw = hp.beta2 * state.h + (1.0 - hp.beta2) * (g @ g.T)
    h = 0.5 * (h_raw + h_raw.T)
    m_hat = m / (1.0 - hp.beta1 ** t)
    h_hat = h / (1.0 - hp.beta2 ** t)
    theta = (1.0 - lr * hp.weight_decay) * theta
    theta = theta - lr * spd_solve(hp.curvature_scale * h_hat, m_hat, hp.damping)
    return theta, AdaFishState(m=m, h=h, t=t)


def adamw_step(theta, g, state: AdamWState, hp: Hyperparams, lr: float):
    """Decoupled-weight-decay adaptive step with bias correction."""
    t = state.t + 1
    m = hp.beta1 * state.m + (1.0 - hp.beta1) * g
    v = hp.beta2 * state.v + (1.0 - hp.beta2) * (g * g)
    m_hat = m / (1.0 - hp.beta1 ** t)
    v_hat = v / (1.0 - hp.beta2 ** t)
    theta = (1.0 - lr * hp.weight_decay) * theta
    theta = theta - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return theta, AdamWState(m=m, v=v, t=t)


def sgd_momentum_step(theta, g, state: MomentumState, beta1: float, lr: float, weight_decay: float):
    """Plain EMA momentum (no bias correction) with decoupled decay."""
    m = beta1 * state.m + (1.0 - beta1) * g
    theta = (1.0 - lr * weight_decay) * theta
    theta = theta - lr * m
    return theta, MomentumState(m=m)


def cosine_lr(step: int, total_steps: int, lr0: float, lr_min: float = 0.0) -> float:
    """Half-cosine from lr0 down to lr_min; steps past the end clamp to lr_min."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if total_steps <= 0:
        return lr0 if step == 0 else lr_min
    if step > total_steps:
        return lr_min
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + np.cos(np.pi * step / total_steps))


def schedule_lr(hp: Hyperparams, step: int) -> float:
    if hp.schedule == "constant":
        return hp.lr0
    return cosine_lr(step, hp.total_steps, hp.lr0, hp.lr_min)


@dataclass
class ParamPolicy:
    """Routing: gram update for matrices with a small side, AdamW otherwise."""

    max_gram_dim: int = 64
    fallback: str = "adamw"

    def uses_gram(self, shape: tuple[int, ...]) -> bool:
        return len(shape) == 2 and min(shape) <= self.max_gram_dim


def orient_gram_side(a: np.ndarray) -> tuple[np.ndarray, bool]:
    """Transpose so rows are the gram (smaller) side; square stays as is."""
    if a.shape[0] > a.shape[1]:
        return a.T, True
    return a, False


@dataclass
class StepDiagnostics:
    """Per-step norms accumulated across all parameters of one optimizer step."""

    grad_norm_sq: float = 0.0
    dyn_grad_norm_sq: float = 0.0
    step_vnorm_sq: float = 0.0


class GramAdaptiveOptimizer:
    """Stateful driver applying the gram update per the routing policy.

    Parameters are addressed by name; state is created lazily on first
    sight. For gram-managed parameters the step also exposes the dynamic
    metric v_t = curvature_scale * h_hat + damping * I used by the
    convergence diagnostics: the dynamic gradient adds weight_decay * v_t
    theta, and step displacements are measured in the v_t norm. Fallback
    parameters contribute their plain gradient and are excluded from the
    v_t-weighted displacement, matching how the diagnostics are defined.
    """

    name = "adafish"

    def __init__(self, hp: Hyperparams, policy: ParamPolicy | None = None):
        self.hp = hp
        self.policy = policy or ParamPolicy()
        self.states: dict[str, tuple[str, object]] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], step_index: int):
        lr = schedule_lr(self.hp, step_index)
        out: dict[str, np.ndarray] = {}
        diag = StepDiagnostics()
        for name, theta in params.items():
            g = grads[name]
            diag.grad_norm_sq += float(np.sum(g * g))
            if self.policy.uses_gram(theta.shape):
                theta_or, transposed = orient_gram_side(theta)
                g_or = g.T if transposed else g
                _, state = self.states.get(name, ("gram", fresh_adafish_state(theta_or.shape)))
                new_or, state = adafish_step(theta_or, g_or, state, self.hp, lr)
                self.states[name] = ("gram", state)
                v = self.hp.curvature_scale * (state.h / (1.0 - self.hp.beta2 ** state.t))
                v[np.diag_indices_from(v)] += self.hp.damping
                dyn = g_or + self.hp.weight_decay * (v @ theta_or)
                diag.dyn_grad_norm_sq += float(np.sum(dyn * dyn))
                delta = theta_or - new_or
                diag.step_vnorm_sq += float(np.trace(delta.T @ v @ delta))
                out[name] = new_or.T if transposed else new_or
            else:
                _, state = self.states.get(name, ("adamw", fresh_adamw_state(theta.shape)))
                new, state = adamw_step(theta, g, state, self.hp, lr)
                self.states[name] = ("adamw", state)
                diag.dyn_grad_norm_sq += float(np.sum(g * g))
                out[name] = new
        return out, diag


class AdamWOptimizer:
    """Elementwise baseline; diagnostics use the identity metric."""

    name = "adamw"

    def __init__(self, hp: Hyperparams, policy: ParamPolicy | None = None):
        self.hp = hp
        self.states: dict[str, tuple[str, AdamWState]] = {}

    def step(self, params, grads, step_index: int):
        lr = schedule_lr(self.hp, step_index)
        out = {}
        diag = StepDiagnostics()
        for name, theta in params.items():
            g = grads[name]
            diag.grad_norm_sq += float(np.sum(g * g))
            diag.dyn_grad_norm_sq += float(np.sum(g * g))
            _, state = self.states.get(name, ("adamw", fresh_adamw_state(theta.shape)))
            new, state = adamw_step(theta, g, state, self.hp, lr)
            self.states[name] = ("adamw", state)
            diag.step_vnorm_sq += float(np.sum((theta - new) ** 2))
            out[name] = new
        return out, diag


class SgdMomentumOptimizer:
    name = "sgd"

    def __init__(self, hp: Hyperparams, policy: ParamPolicy | None = None):
        self.hp = hp
        self.states: dict[str, tuple[str, MomentumState]] = {}

    def step(self, params, grads, step_index: int):
        lr = schedule_lr(self.hp, step_index)
        out = {}
        diag = StepDiagnostics()
        for name, theta in params.items():
            g = grads[name]
            diag.grad_norm_sq += float(np.sum(g * g))
            diag.dyn_grad_norm_sq += float(np.sum(g * g))
            _, state = self.states.get(name, ("sgd", MomentumState(m=np.zeros_like(theta))))
            new, state = sgd_momentum_step(theta, g, state, self.hp.beta1, lr, self.hp.weight_decay)
            self.states[name] = ("sgd", state)
            diag.step_vnorm_sq += float(np.sum((theta - new) ** 2))
            out[name] = new
        return out, diag


def make_optimizer(kind: str, hp: Hyperparams, policy: ParamPolicy | None = None):
    if kind == "adafish":
        return GramAdaptiveOptimizer(hp, policy)
    if kind == "adamw":
        return AdamWOptimizer(hp, policy)
    if kind == "sgd":
        return SgdMomentumOptimizer(hp, policy)
    raise ValueError(f"unknown optimizer {kind!r} (choose from {OPTIMIZERS})")
