"""Synthetic teacher-student datasets and CSV loading.

The synthetic tasks build a frozen base network, hide a low-rank
perturbation of each layer inside a teacher, and label data with the
teacher (sampled class labels for classification, noiseless outputs for
regression). A student fine-tuned from the same base with rank >= the
teacher's can represent the target exactly, which makes losses
interpretable. Everything is a pure function of the seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .linalg import SeededRng
from .model import Batch, LoraLinear, MlpModel, build_mlp, forward

SYNTHETIC_KINDS = ("synthetic-classify", "synthetic-lowrank-regress")


@dataclass
class Dataset:
    """Feature matrix plus integer labels or float targets."""

    x: np.ndarray
    y: np.ndarray

    @property
    def size(self) -> int:
        return self.x.shape[0]

    def batch(self, idx=None) -> Batch:
        if idx is None:
            return Batch(x=self.x, y=self.y)
        return Batch(x=self.x[idx], y=self.y[idx])


class CsvFormatError(ValueError):
    """CSV did not parse into a usable numeric dataset."""


def make_teacher(dims, rank_star: int, seed: int) -> MlpModel:
    """Base network plus a hidden rank-``rank_star`` perturbation per layer.

    With rank_star == 0 the teacher is exactly the base network.
    """
    base = build_mlp(dims, max(rank_star, 1), seed)
    if rank_star == 0:
        return base
    rng = SeededRng(seed).derive(9001)
    layers = []
    for layer in base.layers:
        n, k = layer.w0.shape
        # Perturbation entries scale like the base weights (var 1/n).
        sd = (rank_star * n) ** -0.25
        layers.append(
            LoraLinear(
                w0=layer.w0,
                u=rng.gaussian_matrix(rank_star, n, 0.0, sd),
                v=rng.gaussian_matrix(rank_star, k, 0.0, sd),
                scale=layer.scale,
            )
        )
    return MlpModel(layers=layers, biases=[b.copy() for b in base.biases], activation=base.activation)


def make_synthetic_dataset(
    kind: str,
    dims,
    rank_star: int,
    seed: int,
    n_samples: int = 512,
    test_fraction: float = 0.2,
    label_sharpness: float = 4.0,
) -> tuple[Dataset, Dataset, MlpModel]:
    """(train, test, teacher); labels come from the teacher, split 80/20.

    Classification labels are sampled from softmax(label_sharpness * logits).
    The teacher's raw logits have roughly unit spread, which would make the
    labels close to uniform noise; the sharpness factor keeps the Bayes error
    low so that training losses have somewhere to go.
    """
    if kind not in SYNTHETIC_KINDS:
        raise ValueError(f"kind must be one of {SYNTHETIC_KINDS}, got {kind!r}")
    if rank_star > min(dims):
        raise ValueError(f"rank_star {rank_star} exceeds min model dim {min(dims)}")
    teacher = make_teacher(dims, rank_star, seed)
    rng = SeededRng(seed).derive(9002)
    x = rng.gaussian_matrix(n_samples, dims[0])
    logits, _ = forward(teacher, x)
    if kind == "synthetic-classify":
        shifted = label_sharpness * logits
        shifted -= shifted.max(axis=1, keepdims=True)
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        draws = rng.uniforms(n_samples)
        y = (probs.cumsum(axis=1) < draws[:, None]).sum(axis=1).astype(np.int64)
        y = np.minimum(y, logits.shape[1] - 1)
    else:
        y = logits
    n_test = int(round(n_samples * test_fraction))
    n_train = n_samples - n_test
    return (
        Dataset(x=x[:n_train], y=y[:n_train]),
        Dataset(x=x[n_train:], y=y[n_train:]),
        teacher,
    )


def load_csv_dataset(
    path, label_column: str, seed: int = 0, test_fraction: float = 0.2
) -> tuple[Dataset, Dataset]:
    """Numeric CSV with a header row -> standardized train/test split.

    The split shuffle is driven by ``seed``; feature standardization uses
    train statistics only (constant columns are left unscaled). Labels are
    remapped to 0..C-1 by sorted value.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise CsvFormatError(f"{path}: label column {label_column!r} not in header {header}")
        label_idx = header.index(label_column)
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise CsvFormatError(
                    f"{path}:{line_no}: expected {len(header)} cells, got {len(row)}"
                )
            parsed = []
            for col, cell in zip(header, row):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise CsvFormatError(
                        f"{path}:{line_no}: non-numeric cell {cell!r} in column {col!r}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise CsvFormatError(f"{path}: no data rows (header only)")

    data = np.array(rows, dtype=np.float64)
    labels_raw = data[:, label_idx]
    if not np.all(labels_raw == np.round(labels_raw)):
        raise CsvFormatError(f"{path}: label column {label_column!r} must hold integers")
    features = np.delete(data, label_idx, axis=1)
    classes = np.unique(labels_raw)
    y = np.searchsorted(classes, labels_raw).astype(np.int64)

    perm = SeededRng(seed).derive(9003).permutation(data.shape[0])
    features, y = features[perm], y[perm]
    n_test = int(round(data.shape[0] * test_fraction))
    n_train = data.shape[0] - n_test
    if n_train < 1:
        raise CsvFormatError(f"{path}: not enough rows for a train split")

    mean = features[:n_train].mean(axis=0)
    std = features[:n_train].std(axis=0)
    std[std == 0.0] = 1.0
    features = (features - mean) / std
    return (
        Dataset(x=features[:n_train], y=y[:n_train]),
        Dataset(x=features[n_train:], y=y[n_train:]),
    )


def minibatch_indices(n: int, batch_size: int, rng: SeededRng) -> list[np.ndarray]:
    """Shuffled, equally sized batches; a short remainder is dropped.

    With batch_size >= n the whole (shuffled) dataset is one batch.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    eff = min(batch_size, n)
    perm = rng.permutation(n)
    count = n // eff
    return [perm[i * eff:(i + 1) * eff] for i in range(count)]
