"""Paired-run comparison of optimizers over a shared seed list.

Each config is trained once per seed; the per-seed target loss is the
baseline config's final training loss, and a config's epochs-to-target is
the first logged epoch at or below that target. The headline statistic is
median(baseline epochs-to-target) / median(config epochs-to-target), i.e.
values above 1 mean the config reaches the baseline's final loss in fewer
epochs. The baseline is the unique adamw config if there is one, else the
first config.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

import numpy as np

from .config import ConfigError, ExperimentConfig
from .training import TrainResult, train

_MUST_MATCH = (
    "task",
    "input_dim",
    "hidden_dims",
    "num_classes",
    "output_dim",
    "rank",
    "teacher_rank",
    "n_samples",
    "batch_size",
    "epochs",
    "activation",
    "csv_path",
    "label_column",
)


@dataclass
class RunStats:
    label: str
    seed: int
    final_train_loss: float
    final_test_accuracy: float
    epochs_to_target: int
    status: str


@dataclass
class ComparisonSummary:
    labels: list[str]
    baseline: str
    median_final_loss: dict[str, float]
    median_epochs_to_target: dict[str, float]
    epoch_ratio: dict[str, float]  # baseline median / config median
    final_loss_wins: dict[str, int]  # seeds where config beats baseline
    seeds: list[int]

    def table(self) -> str:
        lines = [
            f"baseline: {self.baseline}  (target = baseline final train loss, per seed)",
            f"{'config':<16} {'med final loss':>16} {'med epochs':>12} {'epoch ratio':>12} {'loss wins':>10}",
        ]
        for label in self.labels:
            wins = (
                f"{self.final_loss_wins[label]}/{len(self.seeds)}"
                if label != self.baseline
                else "-"
            )
            lines.append(
                f"{label:<16} {self.median_final_loss[label]:>16.6e} "
                f"{self.median_epochs_to_target[label]:>12.1f} "
                f"{self.epoch_ratio[label]:>12.3f} {wins:>10}"
            )
        return "\n".join(lines)


def _check_comparable(configs: list[ExperimentConfig]) -> None:
    ref = configs[0]
    for other in configs[1:]:
        for key in _MUST_MATCH:
            if getattr(other, key) != getattr(ref, key):
                raise ConfigError(
                    f"compare configs must differ only in optimizer/hyperparameters; "
                    f"{key!r} differs ({getattr(ref, key)!r} vs {getattr(other, key)!r})"
                )


def _epochs_to_target(result: TrainResult, target: float) -> int:
    for record in result.records:
        if record.train_loss <= target:
            return record.epoch
    return result.records[-1].epoch + 1  # never reached


def compare(
    configs: list[ExperimentConfig],
    labels: list[str],
    seeds: list[int],
    out_dir: str,
) -> tuple[list[RunStats], ComparisonSummary]:
    """Run every config over every seed; write per-run artifacts and a
    comparison CSV under ``out_dir``."""
    if not configs:
        raise ConfigError("no configs to compare")
    if len(labels) != len(set(labels)):
        raise ConfigError(f"duplicate comparison labels: {labels}")
    _check_comparable(configs)
    os.makedirs(out_dir, exist_ok=True)

    adamw_labels = [l for l, c in zip(labels, configs) if c.optimizer == "adamw"]
    baseline = adamw_labels[0] if len(adamw_labels) == 1 else labels[0]

    results: dict[tuple[str, int], TrainResult] = {}
    for label, config in zip(labels, configs):
        for seed in seeds:
            run_cfg = dataclasses.replace(
                config,
                seed=seed,
                out_prefix=os.path.join(out_dir, f"{label}_seed{seed}"),
            )
            results[(label, seed)] = train(run_cfg)

    stats: list[RunStats] = []
    for label in labels:
        for seed in seeds:
            result = results[(label, seed)]
            target = results[(baseline, seed)].final_train_loss
            stats.append(
                RunStats(
                    label=label,
                    seed=seed,
                    final_train_loss=result.final_train_loss,
                    final_test_accuracy=result.records[-1].test_accuracy,
                    epochs_to_target=_epochs_to_target(result, target),
                    status=result.status,
                )
            )

    med_loss, med_epochs, ratios, wins = {}, {}, {}, {}
    base_epochs = [s.epochs_to_target for s in stats if s.label == baseline]
    for label in labels:
        rows = [s for s in stats if s.label == label]
        med_loss[label] = float(np.median([s.final_train_loss for s in rows]))
        med_epochs[label] = float(np.median([s.epochs_to_target for s in rows]))
        ratios[label] = float(np.median(base_epochs) / med_epochs[label])
        wins[label] = sum(
            1
            for s in rows
            if s.final_train_loss < results[(baseline, s.seed)].final_train_loss
        )

    summary = ComparisonSummary(
        labels=list(labels),
        baseline=baseline,
        median_final_loss=med_loss,
        median_epochs_to_target=med_epochs,
        epoch_ratio=ratios,
        final_loss_wins=wins,
        seeds=list(seeds),
    )
    write_comparison_csv(os.path.join(out_dir, "comparison.csv"), stats)
    return stats, summary


def write_comparison_csv(path, stats: list[RunStats]) -> None:
    with open(path, "w") as fh:
        fh.write("config,seed,final_train_loss,final_test_accuracy,epochs_to_target,status\n")
        for s in stats:
            fh.write(
                f"{s.label},{s.seed},{s.final_train_loss:.17g},"
                f"{s.final_test_accuracy:.17g},{s.epochs_to_target},{s.status}\n"
            )
