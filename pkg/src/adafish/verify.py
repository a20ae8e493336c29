"""Self-check suite: algebraic identities and oracle comparisons.

Each check recomputes a quantity along two independent routes (closed form,
explicit loops, materialized matrices, finite differences) and compares.
Results are machine-readable one-liners; the CLI exits nonzero if any check
fails. ``corrupt_smw`` deliberately breaks the push-through comparison and
is only there to prove the suite can fail.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fisher, linalg, optim, tensor_peft
from .linalg import SeededRng
from .model import Batch, build_mlp, finite_diff_check

SUITES = ("all", "linalg", "fisher", "optim", "tensor")


@dataclass
class CheckResult:
    name: str
    measured: float
    criterion: str
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name} measured={self.measured:.6g} criterion={self.criterion} {status}"


def _smw_instances(trials: int = 100, seed: int = 1234):
    rng = SeededRng(seed)
    for _ in range(trials):
        r = int(rng.integers(1, 9))
        n = int(rng.integers(r, 65))
        yield rng.gaussian_matrix(r, n), 1.0, 1.0


def check_matmul_associativity(trials: int = 50) -> CheckResult:
    rng = SeededRng(7)
    worst = 0.0
    for _ in range(trials):
        dims = [int(d) for d in rng.integers(1, 12, 4)]
        a = rng.gaussian_matrix(dims[0], dims[1])
        b = rng.gaussian_matrix(dims[1], dims[2])
        c = rng.gaussian_matrix(dims[2], dims[3])
        left = linalg.matmul(linalg.matmul(a, b), c)
        right = linalg.matmul(a, linalg.matmul(b, c))
        scale = max(1.0, float(np.linalg.norm(right)))
        worst = max(worst, float(np.linalg.norm(left - right)) / scale)
    return CheckResult("matmul_associativity", worst, "<= 1e-12", worst <= 1e-12)


def check_spd_residual(trials: int = 1000) -> CheckResult:
    rng = SeededRng(8)
    worst = 0.0
    for _ in range(trials):
        dim = int(rng.integers(1, 9))
        a = rng.gaussian_matrix(dim, dim)
        s = a @ a.T + np.eye(dim)
        b = rng.gaussian_matrix(dim, int(rng.integers(1, 5)))
        x = linalg.spd_solve(s, b, 0.0)
        residual = float(np.linalg.norm(s @ x - b)) / max(1.0, float(np.linalg.norm(b)))
        worst = max(worst, residual)
    return CheckResult("spd_solve_residual", worst, "<= 1e-10", worst <= 1e-10)


def check_smw_push_through(corrupt: bool = False) -> CheckResult:
    worst = 0.0
    for g, scale, damping in _smw_instances():
        n = g.shape[1]
        via_small = linalg.push_through_solve(g, scale, damping)
        if corrupt:
            via_small = via_small + 1e-6
        direct = g @ np.linalg.inv(scale * (g.T @ g) + damping * np.eye(n))
        err = float(np.linalg.norm(via_small - direct)) / max(1e-300, float(np.linalg.norm(direct)))
        worst = max(worst, err)
    return CheckResult("smw_push_through", worst, "<= 1e-10", worst <= 1e-10)


def check_kronecker_identity(trials: int = 30) -> CheckResult:
    rng = SeededRng(9)
    worst = 0.0
    for _ in range(trials):
        r = int(rng.integers(1, 7))
        n = int(rng.integers(1, 64 // r + 1))
        a = rng.gaussian_matrix(r, r)
        a = a @ a.T + np.eye(r)  # invertible
        d = rng.gaussian_matrix(r, n)
        columnwise = np.linalg.solve(a, d)
        big = np.kron(np.eye(n), a)
        vec = np.linalg.solve(big, d.flatten(order="F"))
        err = float(np.linalg.norm(columnwise - vec.reshape((r, n), order="F")))
        worst = max(worst, err / max(1.0, float(np.linalg.norm(columnwise))))
    return CheckResult("kronecker_columnwise_solve", worst, "<= 1e-10", worst <= 1e-10)


def check_gaussian_moments() -> CheckResult:
    draw = linalg.seeded_gaussian(1000, 1000, seed=7)
    mean_err = abs(float(draw.mean()))
    std = float(draw.std())
    ok = mean_err <= 0.01 and 0.99 <= std <= 1.01
    return CheckResult("gaussian_moments", max(mean_err, abs(std - 1.0)), "mean/std within 1%", ok)


def check_left_right_directions() -> CheckResult:
    worst = 0.0
    for g, scale, damping in _smw_instances():
        left = fisher.natural_dir_left(g, scale, damping)
        right = fisher.natural_dir_right(g, scale, damping)
        err = float(np.linalg.norm(left - right)) / max(1e-300, float(np.linalg.norm(left)))
        worst = max(worst, err)
    return CheckResult("left_right_direction_identity", worst, "<= 1e-10", worst <= 1e-10)


def check_kronecker_moment(seeds=range(10)) -> list[CheckResult]:
    ratios, exponents = [], []
    for seed in seeds:
        report = fisher.verify_kronecker_second_moment(
            n=4, r=2, covariance=np.eye(2), sample_sizes=[1000, 10_000, 100_000], seed=seed
        )
        ratios.append(report.frobenius_errors[0] / report.frobenius_errors[-1])
        exponents.append(report.decay_exponent)
    ratio_ok = all(5.0 <= v <= 20.0 for v in ratios)
    exp_ok = all(-0.65 <= v <= -0.35 for v in exponents)
    return [
        CheckResult("kron_moment_error_ratio_1e3_vs_1e5", float(np.median(ratios)), "in [5, 20] per seed", ratio_ok),
        CheckResult("kron_moment_decay_exponent", float(np.median(exponents)), "in [-0.65, -0.35] per seed", exp_ok),
    ]


def check_fisher_hessian() -> CheckResult:
    gap = fisher.verify_fisher_hessian(feature_dim=3, num_classes=3, num_points=20, seed=0)
    return CheckResult("fisher_hessian_equivalence", gap, "<= 1e-5", gap <= 1e-5)


def check_right_gram_low_rank(trials: int = 20) -> CheckResult:
    rng = SeededRng(11)
    worst = 0.0
    for _ in range(trials):
        r = int(rng.integers(1, 5))
        n = int(rng.integers(r + 1, 33))
        g = rng.gaussian_matrix(r, n)
        gram = fisher.fisher_gram(g, "right").gram
        eigvals = np.sort(np.linalg.eigvalsh(gram))[::-1]
        if len(eigvals) > r:
            worst = max(worst, float(eigvals[r] / max(np.trace(gram), 1e-300)))
    return CheckResult("right_gram_rank_le_r", worst, "<= 1e-10 of trace", worst <= 1e-10)


def dyadic_gradient(rows: int = 3) -> np.ndarray:
    """Gradient with power-of-two entries on disjoint column pairs per row.

    Scaling and dividing by (1 - beta) is exact for power-of-two values, and
    the disjoint supports keep g g^T diagonal with power-of-two entries, so
    the first-step bias-correction identity holds bitwise, not just to ulps.
    """
    g = np.zeros((rows, 2 * rows))
    for i in range(rows):
        g[i, 2 * i] = 2.0 ** (i - 1)
        g[i, 2 * i + 1] = -(2.0 ** (i - 1))
    return g


def check_bias_correction_t1() -> CheckResult:
    g = dyadic_gradient()
    hp = optim.Hyperparams(weight_decay=0.0, schedule="constant")
    _, state = optim.adafish_step(np.zeros_like(g), g, optim.fresh_adafish_state(g.shape), hp, hp.lr0)
    m_hat = state.m / (1.0 - hp.beta1 ** state.t)
    h_hat = state.h / (1.0 - hp.beta2 ** state.t)
    err = max(float(np.max(np.abs(m_hat - g))), float(np.max(np.abs(h_hat - g @ g.T))))
    return CheckResult("bias_correction_first_step", err, "== 0", err == 0.0)


def check_zero_grad_decay(steps: int = 100) -> CheckResult:
    hp = optim.Hyperparams(lr0=0.1, weight_decay=0.1, schedule="constant")
    theta = SeededRng(13).gaussian_matrix(4, 6)
    g = np.zeros_like(theta)
    state = optim.fresh_adafish_state(theta.shape)
    expected = theta.copy()
    factor = 1.0 - hp.lr0 * hp.weight_decay
    for _ in range(steps):
        theta, state = optim.adafish_step(theta, g, state, hp, hp.lr0)
        expected = factor * expected
    err = float(np.max(np.abs(theta - expected)))
    return CheckResult("zero_grad_decoupled_decay", err, "== 0", err == 0.0)


def check_gamma_zero_reduction(steps: int = 500) -> CheckResult:
    hp = optim.Hyperparams(
        lr0=0.05, weight_decay=0.01, curvature_scale=0.0, damping=1.0, schedule="constant"
    )
    rng = SeededRng(14)
    theta = rng.gaussian_matrix(3, 7)
    ref = theta.copy()
    state = optim.fresh_adafish_state(theta.shape)
    m_ref = np.zeros_like(theta)
    worst = 0.0
    for t in range(1, steps + 1):
        g = rng.gaussian_matrix(3, 7)
        theta, state = optim.adafish_step(theta, g, state, hp, hp.lr0)
        m_ref = hp.beta1 * m_ref + (1.0 - hp.beta1) * g
        ref = (1.0 - hp.lr0 * hp.weight_decay) * ref
        ref = ref - hp.lr0 * (m_ref / (1.0 - hp.beta1 ** t))
        worst = max(worst, float(np.max(np.abs(theta - ref))))
    return CheckResult("gamma_zero_is_momentum", worst, "<= 1e-12", worst <= 1e-12)


def check_cosine_endpoints() -> CheckResult:
    lr0, lr_min, total = 0.1, 0.001, 200
    errs = [
        abs(optim.cosine_lr(0, total, lr0, lr_min) - lr0),
        abs(optim.cosine_lr(total, total, lr0, lr_min) - lr_min),
        abs(optim.cosine_lr(total // 2, total, lr0, lr_min) - 0.5 * (lr0 + lr_min)),
    ]
    worst = max(errs)
    return CheckResult("cosine_schedule_endpoints", worst, "<= 1e-15", worst <= 1e-15)


def check_scaling_covariance(steps: int = 20, factor: float = 32.0) -> CheckResult:
    hp = optim.Hyperparams(weight_decay=0.0, curvature_scale=1.0, damping=1e-30, schedule="constant")
    rng = SeededRng(15)
    grads = [rng.gaussian_matrix(3, 8) for _ in range(steps)]
    theta_a = np.zeros((3, 8))
    theta_b = np.zeros((3, 8))
    state_a = optim.fresh_adafish_state(theta_a.shape)
    state_b = optim.fresh_adafish_state(theta_b.shape)
    worst = 0.0
    for g in grads:
        new_a, state_a = optim.adafish_step(theta_a, g, state_a, hp, hp.lr0)
        new_b, state_b = optim.adafish_step(theta_b, factor * g, state_b, hp, hp.lr0)
        dir_a = theta_a - new_a
        dir_b = theta_b - new_b
        # Inverse-covariance behavior: direction shrinks by the grad scale.
        err = float(np.linalg.norm(factor * dir_b - dir_a)) / max(1e-300, float(np.linalg.norm(dir_a)))
        worst = max(worst, err)
        # With weight_decay 0 the produced direction is independent of theta,
        # so both chains can advance freely on the shared gradient stream.
        theta_a, theta_b = new_a, new_b
    return CheckResult("gradient_scaling_covariance", worst, "<= 1e-8", worst <= 1e-8)


def check_model_gradients(seeds=range(5)) -> CheckResult:
    worst = 0.0
    for seed in seeds:
        model = build_mlp((12, 10, 5), rank=4, seed=seed)
        # Exercise nonzero adapters, not just the fresh u = 0 point.
        for layer in model.layers:
            layer.u = SeededRng(seed).derive(50).gaussian_matrix(*layer.u.shape, stddev=0.1)
        rng = SeededRng(seed).derive(51)
        x = rng.gaussian_matrix(8, 12)
        y = rng.integers(0, 5, 8).astype(np.int64)
        worst = max(worst, finite_diff_check(model, Batch(x=x, y=y), epsilon=1e-6))
    return CheckResult("model_finite_diff_gradients", worst, "<= 1e-5", worst <= 1e-5)


def tucker_loop_oracle(f: tensor_peft.TuckerFactors) -> np.ndarray:
    r = f.rank
    d1, d2, d3 = f.p.shape[1], f.a.shape[1], f.b.shape[1]
    out = np.zeros((d1, d2, d3))
    for i in range(d1):
        for j in range(d2):
            for k in range(d3):
                acc = 0.0
                for t1 in range(r):
                    for t2 in range(r):
                        for t3 in range(r):
                            acc += f.core[t1, t2, t3] * f.p[t1, i] * f.a[t2, j] * f.b[t3, k]
                out[i, j, k] = f.s * acc
    return out


def cp_loop_oracle(f: tensor_peft.CpFactors) -> np.ndarray:
    d1, d2, d3 = f.p.shape[1], f.a.shape[1], f.b.shape[1]
    out = np.zeros((d1, d2, d3))
    for i in range(d1):
        for j in range(d2):
            for k in range(d3):
                acc = 0.0
                for t in range(f.rank):
                    acc += f.weights[t] * f.p[t, i] * f.a[t, j] * f.b[t, k]
                out[i, j, k] = acc
    return out


def check_tucker_oracle(trials: int = 50) -> CheckResult:
    rng = SeededRng(16)
    worst = 0.0
    for _ in range(trials):
        r = int(rng.integers(1, 4))
        dims = [int(d) for d in rng.integers(2, 6, 3)]
        f = tensor_peft.TuckerFactors(
            s=float(rng.gaussian_matrix(1, 1)[0, 0]),
            core=rng.gaussian_matrix(r, r * r).reshape(r, r, r),
            p=rng.gaussian_matrix(r, dims[0]),
            a=rng.gaussian_matrix(r, dims[1]),
            b=rng.gaussian_matrix(r, dims[2]),
        )
        got = tensor_peft.tucker_reconstruct(f)
        want = tucker_loop_oracle(f)
        worst = max(worst, float(np.max(np.abs(got - want))) / max(1.0, float(np.max(np.abs(want)))))
    return CheckResult("tucker_reconstruct_vs_loops", worst, "<= 1e-12", worst <= 1e-12)


def check_cp_oracle(trials: int = 50) -> CheckResult:
    rng = SeededRng(17)
    worst = 0.0
    for _ in range(trials):
        r = int(rng.integers(1, 5))
        dims = [int(d) for d in rng.integers(2, 6, 3)]
        f = tensor_peft.CpFactors(
            weights=rng.gaussian_matrix(1, r)[0],
            p=rng.gaussian_matrix(r, dims[0]),
            a=rng.gaussian_matrix(r, dims[1]),
            b=rng.gaussian_matrix(r, dims[2]),
        )
        got = tensor_peft.cp_reconstruct(f)
        want = cp_loop_oracle(f)
        worst = max(worst, float(np.max(np.abs(got - want))) / max(1.0, float(np.max(np.abs(want)))))
    return CheckResult("cp_reconstruct_vs_loops", worst, "<= 1e-12", worst <= 1e-12)


def check_param_counts() -> CheckResult:
    tucker = tensor_peft.param_count("tucker", 12, 768, 8)
    cp = tensor_peft.param_count("cp", 12, 768, 8)
    ok = tucker == 13952 and cp == 13448
    return CheckResult("tensor_param_counts", float(tucker - 13952 + cp - 13448), "tucker 13952, cp 13448", ok)


def check_slice_cost() -> CheckResult:
    cost = tensor_peft.slice_cost_model(2, 4, 4, 2)
    ok = (cost.flops, cost.storage) == (48, 16)
    return CheckResult("slice_cost_model", float(cost.flops), "(48, 16) for l=2,n=k=4,r=2", ok)


def run_suite(suite: str = "all", corrupt_smw: bool = False) -> tuple[list[CheckResult], bool]:
    if suite not in SUITES:
        raise ValueError(f"suite must be one of {SUITES}, got {suite!r}")
    results: list[CheckResult] = []
    if suite in ("all", "linalg"):
        results.append(check_matmul_associativity())
        results.append(check_spd_residual())
        results.append(check_smw_push_through(corrupt=corrupt_smw))
        results.append(check_kronecker_identity())
        results.append(check_gaussian_moments())
    if suite in ("all", "fisher"):
        results.append(check_left_right_directions())
        results.extend(check_kronecker_moment())
        results.append(check_fisher_hessian())
        results.append(check_right_gram_low_rank())
    if suite in ("all", "optim"):
        results.append(check_bias_correction_t1())
        results.append(check_zero_grad_decay())
        results.append(check_gamma_zero_reduction())
        results.append(check_cosine_endpoints())
        results.append(check_scaling_covariance())
        results.append(check_model_gradients())
    if suite in ("all", "tensor"):
        results.append(check_tucker_oracle())
        results.append(check_cp_oracle())
        results.append(check_param_counts())
        results.append(check_slice_cost())
    return results, all(r.passed for r in results)
