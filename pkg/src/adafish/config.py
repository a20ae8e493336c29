"""Experiment configuration: JSON key-value files, strictly validated.

Schema (version 1). Unknown keys are hard errors, as are out-of-range
values. All keys except ``task``, ``optimizer`` and ``out_prefix`` have
defaults.

    schema_version   int, must be 1
    task             "synthetic-classify" | "synthetic-lowrank-regress" | "csv-classify"
    optimizer        "adafish" | "adamw" | "sgd"
    out_prefix       path prefix for metrics CSV / checkpoint / diagnostics
    input_dim        synthetic tasks, default 64
    hidden_dims      list of ints, default [32]
    num_classes      synthetic-classify, default 10 (regression: output_dim, default 8)
    output_dim       synthetic-lowrank-regress, default 8
    rank             student adapter rank, default 4
    teacher_rank     synthetic tasks, default = rank
    n_samples        synthetic tasks, default 512
    csv_path         csv-classify only
    label_column     csv-classify only
    activation       "tanh" (default) | "relu"
    batch_size       default 32
    epochs           default 100
    seed             default 0
    lr0, lr_min      default 0.1, 0.0
    weight_decay     default 0.1 (adafish/sgd) or 1e-4 (adamw)
    curvature_scale  default 2e-4
    beta1, beta2     default 0.8, 0.99
    damping          default 1e-15
    schedule         "cosine" (default) | "constant"
    log_every_step   default false (per-epoch records otherwise)
    log_wall_time    default false; true puts real timings in wall_ms and
                     breaks byte-level reproducibility of the CSV
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .datasets import SYNTHETIC_KINDS
from .model import ACTIVATIONS
from .optim import OPTIMIZERS, SCHEDULES, Hyperparams

TASKS = SYNTHETIC_KINDS + ("csv-classify",)

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Configuration file or dict failed validation."""


_DEFAULTS = {
    "input_dim": 64,
    "hidden_dims": [32],
    "num_classes": 10,
    "output_dim": 8,
    "rank": 4,
    "teacher_rank": None,  # defaults to rank
    "n_samples": 512,
    "csv_path": None,
    "label_column": None,
    "activation": "tanh",
    "batch_size": 32,
    "epochs": 100,
    "seed": 0,
    "lr0": 1e-1,
    "lr_min": 0.0,
    "weight_decay": None,  # optimizer-dependent default
    "curvature_scale": 2e-4,
    "beta1": 0.8,
    "beta2": 0.99,
    "damping": 1e-15,
    "schedule": "cosine",
    "log_every_step": False,
    "log_wall_time": False,
}

_REQUIRED = ("schema_version", "task", "optimizer", "out_prefix")


@dataclass
class ExperimentConfig:
    task: str
    optimizer: str
    out_prefix: str
    input_dim: int = 64
    hidden_dims: list = field(default_factory=lambda: [32])
    num_classes: int = 10
    output_dim: int = 8
    rank: int = 4
    teacher_rank: int | None = None
    n_samples: int = 512
    csv_path: str | None = None
    label_column: str | None = None
    activation: str = "tanh"
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    lr0: float = 1e-1
    lr_min: float = 0.0
    weight_decay: float | None = None
    curvature_scale: float = 2e-4
    beta1: float = 0.8
    beta2: float = 0.99
    damping: float = 1e-15
    schedule: str = "cosine"
    log_every_step: bool = False
    log_wall_time: bool = False

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}")
        if self.teacher_rank is None:
            self.teacher_rank = self.rank
        if self.weight_decay is None:
            self.weight_decay = 1e-4 if self.optimizer == "adamw" else 1e-1
        for key in ("input_dim", "num_classes", "output_dim", "rank", "n_samples", "batch_size"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.teacher_rank < 0:
            raise ConfigError("teacher_rank must be >= 0")
        if not isinstance(self.hidden_dims, list) or any(int(h) < 1 for h in self.hidden_dims):
            raise ConfigError("hidden_dims must be a list of positive ints")
        if self.task == "csv-classify" and (not self.csv_path or not self.label_column):
            raise ConfigError("csv-classify requires csv_path and label_column")
        rank_cap = min([self.input_dim] + [int(h) for h in self.hidden_dims] + [self.out_dim()])
        if self.task != "csv-classify" and self.rank > rank_cap:
            raise ConfigError(f"rank {self.rank} exceeds smallest layer dim {rank_cap}")

    def out_dim(self) -> int:
        return self.output_dim if self.task == "synthetic-lowrank-regress" else self.num_classes

    def model_dims(self, input_dim: int | None = None) -> list[int]:
        first = self.input_dim if input_dim is None else input_dim
        return [first] + [int(h) for h in self.hidden_dims] + [self.out_dim()]

    def hyperparams(self, total_steps: int) -> Hyperparams:
        return Hyperparams(
            lr0=self.lr0,
            lr_min=self.lr_min,
            total_steps=total_steps,
            weight_decay=self.weight_decay,
            curvature_scale=self.curvature_scale,
            beta1=self.beta1,
            beta2=self.beta2,
            damping=self.damping,
            schedule=self.schedule,
        )


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    missing = [k for k in _REQUIRED if k not in raw]
    if missing:
        raise ConfigError(f"missing required keys: {missing}")
    if raw["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version {raw['schema_version']!r} unsupported (expected {SCHEMA_VERSION})"
        )
    known = set(_DEFAULTS) | set(_REQUIRED)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    kwargs = {k: v for k, v in raw.items() if k != "schema_version"}
    try:
        return ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(raw)
