"""Training loop, metrics logging, and convergence diagnostics.

A run is a pure function of (config, seed): per-epoch shuffling, model
init and data all derive from the run seed, and the metrics CSV is written
with fixed 17-significant-digit formatting, so identical configs produce
byte-identical CSVs. Real wall-clock timing is opt-in (``log_wall_time``)
precisely because it would break that reproducibility contract.

Per training step the loop tracks the squared minibatch gradient norm, the
squared norm of the dynamic gradient (the gradient plus weight_decay * v_t
theta on gram-managed parameters, with v_t the damped bias-corrected gram),
and the squared v_t-weighted step displacement. Epoch records carry the
last step's values; running averages over all steps land in the final
diagnostics.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .checkpoint import save_checkpoint
from .config import ExperimentConfig
from .datasets import Dataset, load_csv_dataset, make_synthetic_dataset, minibatch_indices
from .linalg import SeededRng, SingularMatrixError
from .model import (
    MlpModel,
    batch_loss,
    batch_loss_and_grads,
    build_mlp,
    forward,
    named_parameters,
    set_parameter,
)
from .optim import make_optimizer, schedule_lr

METRICS_COLUMNS = (
    "epoch",
    "step",
    "train_loss",
    "test_accuracy",
    "grad_norm_sq",
    "dyn_grad_norm_sq",
    "step_vnorm_sq",
    "lr",
    "wall_ms",
)


@dataclass
class MetricsRecord:
    epoch: int
    step: int
    train_loss: float
    test_accuracy: float
    grad_norm_sq: float
    dyn_grad_norm_sq: float
    step_vnorm_sq: float
    lr: float
    wall_ms: float

    def csv_row(self) -> str:
        return ",".join(
            [str(self.epoch), str(self.step)]
            + [
                f"{v:.17g}"
                for v in (
                    self.train_loss,
                    self.test_accuracy,
                    self.grad_norm_sq,
                    self.dyn_grad_norm_sq,
                    self.step_vnorm_sq,
                    self.lr,
                    self.wall_ms,
                )
            ]
        )


@dataclass
class ConvergenceDiagnostics:
    """Whole-run summaries of the per-step convergence quantities.

    Running averages are plain arithmetic means over all training steps.
    ``dg_estimate`` (max observed minibatch gradient norm) and the variance
    of the per-step gradient norms are empirical stand-ins for the
    boundedness constants of the analysis; they are reported, not verified.
    """

    total_steps: int
    running_avg_dyn_grad_norm_sq: float
    running_avg_step_vnorm_sq: float
    running_avg_grad_norm_sq: float
    final_dyn_grad_norm_sq: float
    final_step_vnorm_sq: float
    dg_estimate: float
    grad_norm_variance: float

    def to_json(self) -> str:
        payload = {k: getattr(self, k) for k in self.__dataclass_fields__}
        return json.dumps(payload, indent=2, sort_keys=True)


@dataclass
class TrainResult:
    config: ExperimentConfig
    status: str  # "ok" or "diverged"
    records: list[MetricsRecord]
    step_records: list[MetricsRecord]
    diagnostics: ConvergenceDiagnostics
    model: MlpModel
    csv_path: str | None = None
    checkpoint_path: str | None = None
    diagnostics_path: str | None = None

    @property
    def final_train_loss(self) -> float:
        return self.records[-1].train_loss


def evaluate(model: MlpModel, dataset: Dataset) -> tuple[float, float]:
    """(loss, metric): accuracy for classification, MSE for regression."""
    batch = dataset.batch()
    loss = batch_loss(model, batch)
    logits, _ = forward(model, batch.x)
    if batch.y.ndim == 1:
        metric = float(np.mean(logits.argmax(axis=1) == batch.y))
    else:
        metric = float(np.mean((logits - batch.y) ** 2))
    return loss, metric


def write_metrics_csv(path, records) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        for record in records:
            fh.write(record.csv_row() + "\n")


def _load_task(config: ExperimentConfig):
    if config.task == "csv-classify":
        train_set, test_set = load_csv_dataset(
            config.csv_path, config.label_column, seed=config.seed
        )
        num_classes = int(max(train_set.y.max(initial=0), test_set.y.max(initial=0))) + 1
        dims = config.model_dims(input_dim=train_set.x.shape[1])
        dims[-1] = num_classes
        return train_set, test_set, dims
    train_set, test_set, _teacher = make_synthetic_dataset(
        config.task,
        config.model_dims(),
        config.teacher_rank,
        config.seed,
        n_samples=config.n_samples,
    )
    return train_set, test_set, config.model_dims()


def train(config: ExperimentConfig, write_outputs: bool = True) -> TrainResult:
    """Run one experiment; emits metrics CSV, checkpoint and diagnostics.

    A non-finite minibatch loss aborts the run with status "diverged" after
    flushing the records logged so far.
    """
    train_set, test_set, dims = _load_task(config)
    model = build_mlp(dims, config.rank, config.seed, activation=config.activation)
    steps_per_epoch = train_set.size // min(config.batch_size, train_set.size)
    total_steps = config.epochs * steps_per_epoch
    hp = config.hyperparams(total_steps)
    optimizer = make_optimizer(config.optimizer, hp)
    shuffle_rng = SeededRng(config.seed).derive(7001)

    t_start = time.perf_counter()

    def wall_ms() -> float:
        return (time.perf_counter() - t_start) * 1000.0 if config.log_wall_time else 0.0

    loss0, metric0 = evaluate(model, train_set)
    _, grads0 = batch_loss_and_grads(model, train_set.batch())
    gnorm0 = float(sum(np.sum(g * g) for g in grads0.values()))
    records = [
        MetricsRecord(
            epoch=0,
            step=0,
            train_loss=loss0,
            test_accuracy=evaluate(model, test_set)[1],
            grad_norm_sq=gnorm0,
            dyn_grad_norm_sq=gnorm0,
            step_vnorm_sq=0.0,
            lr=schedule_lr(hp, 0),
            wall_ms=wall_ms(),
        )
    ]

    step_records: list[MetricsRecord] = []
    sums = {"dyn": 0.0, "vnorm": 0.0, "grad": 0.0, "grad_sq": 0.0}
    dg_estimate = 0.0
    last = None
    global_step = 0
    status = "ok"

    for epoch in range(1, config.epochs + 1):
        for idx in minibatch_indices(train_set.size, config.batch_size, shuffle_rng):
            batch = train_set.batch(idx)
            loss, grads = batch_loss_and_grads(model, batch)
            if not np.isfinite(loss):
                status = "diverged"
                break
            params = named_parameters(model)
            lr = schedule_lr(hp, global_step)
            try:
                new_params, diag = optimizer.step(params, grads, global_step)
            except SingularMatrixError:
                # Gram moments blown far past the jitter ladder's reach.
                status = "diverged"
                break
            for name, value in new_params.items():
                set_parameter(model, name, value)
            global_step += 1
            sums["dyn"] += diag.dyn_grad_norm_sq
            sums["vnorm"] += diag.step_vnorm_sq
            sums["grad"] += diag.grad_norm_sq
            sums["grad_sq"] += diag.grad_norm_sq * diag.grad_norm_sq
            dg_estimate = max(dg_estimate, np.sqrt(diag.grad_norm_sq))
            last = (diag, lr)
            if config.log_every_step:
                step_records.append(
                    MetricsRecord(
                        epoch=epoch,
                        step=global_step,
                        train_loss=loss,
                        test_accuracy=float("nan"),
                        grad_norm_sq=diag.grad_norm_sq,
                        dyn_grad_norm_sq=diag.dyn_grad_norm_sq,
                        step_vnorm_sq=diag.step_vnorm_sq,
                        lr=lr,
                        wall_ms=wall_ms(),
                    )
                )
        if status == "diverged":
            break
        train_loss, _ = evaluate(model, train_set)
        _, test_metric = evaluate(model, test_set)
        diag, lr = last if last is not None else (None, schedule_lr(hp, global_step))
        records.append(
            MetricsRecord(
                epoch=epoch,
                step=global_step,
                train_loss=train_loss,
                test_accuracy=test_metric,
                grad_norm_sq=diag.grad_norm_sq if diag else 0.0,
                dyn_grad_norm_sq=diag.dyn_grad_norm_sq if diag else 0.0,
                step_vnorm_sq=diag.step_vnorm_sq if diag else 0.0,
                lr=lr,
                wall_ms=wall_ms(),
            )
        )

    steps = global_step
    mean_grad = sums["grad"] / steps if steps else 0.0
    diagnostics = ConvergenceDiagnostics(
        total_steps=steps,
        running_avg_dyn_grad_norm_sq=sums["dyn"] / steps if steps else 0.0,
        running_avg_step_vnorm_sq=sums["vnorm"] / steps if steps else 0.0,
        running_avg_grad_norm_sq=mean_grad,
        final_dyn_grad_norm_sq=last[0].dyn_grad_norm_sq if last else 0.0,
        final_step_vnorm_sq=last[0].step_vnorm_sq if last else 0.0,
        dg_estimate=float(dg_estimate),
        grad_norm_variance=max(sums["grad_sq"] / steps - mean_grad * mean_grad, 0.0) if steps else 0.0,
    )

    result = TrainResult(
        config=config,
        status=status,
        records=records,
        step_records=step_records,
        diagnostics=diagnostics,
        model=model,
    )
    if write_outputs:
        prefix = config.out_prefix
        result.csv_path = f"{prefix}.metrics.csv"
        write_metrics_csv(result.csv_path, step_records if config.log_every_step else records)
        if status == "ok":
            result.checkpoint_path = f"{prefix}.ckpt"
            save_checkpoint(result.checkpoint_path, model, optimizer.states)
        result.diagnostics_path = f"{prefix}.diagnostics.json"
        with open(result.diagnostics_path, "w") as fh:
            fh.write(diagnostics.to_json() + "\n")
    return result
