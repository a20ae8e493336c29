import pytest

from adafish.config import config_from_dict


@pytest.fixture
def quick_config(tmp_path):
    """Small, fast, convergent classify config; overrides via kwargs."""

    def factory(**overrides):
        raw = {
            "schema_version": 1,
            "task": "synthetic-classify",
            "optimizer": "adafish",
            "out_prefix": str(tmp_path / "run"),
            "input_dim": 12,
            "hidden_dims": [8],
            "num_classes": 4,
            "rank": 3,
            "teacher_rank": 3,
            "n_samples": 80,
            "batch_size": 16,
            "epochs": 3,
            "seed": 0,
            "lr0": 0.1,
            "curvature_scale": 1.0,
            "damping": 1e-2,
            "weight_decay": 1e-4,
        }
        raw.update(overrides)
        return config_from_dict(raw)

    return factory
