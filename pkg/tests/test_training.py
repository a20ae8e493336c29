import json
import math

import numpy as np
import pytest

from adafish.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from adafish.config import ConfigError, config_from_dict, load_config
from adafish.model import build_mlp, forward
from adafish.optim import AdaFishState
from adafish.training import METRICS_COLUMNS, train, write_metrics_csv


class TestTrainBasics:
    def test_zero_epochs_logs_only_initial_record(self, quick_config):
        result = train(quick_config(epochs=0))
        assert len(result.records) == 1
        assert result.records[0].epoch == 0 and result.records[0].step == 0
        fresh = build_mlp([12, 8, 4], 3, 0)
        for got, want in zip(result.model.layers, fresh.layers):
            np.testing.assert_array_equal(got.u, want.u)
            np.testing.assert_array_equal(got.v, want.v)

    def test_epoch_records_are_monotone(self, quick_config):
        result = train(quick_config(epochs=4))
        pairs = [(r.epoch, r.step) for r in result.records]
        assert pairs == sorted(pairs)
        assert [r.epoch for r in result.records] == [0, 1, 2, 3, 4]

    def test_training_reduces_loss(self, quick_config):
        result = train(quick_config(epochs=20))
        assert result.final_train_loss < result.records[0].train_loss * 0.5

    def test_byte_identical_reruns(self, quick_config, tmp_path):
        a = train(quick_config(out_prefix=str(tmp_path / "a")))
        b = train(quick_config(out_prefix=str(tmp_path / "b")))
        assert open(a.csv_path, "rb").read() == open(b.csv_path, "rb").read()
        assert open(a.diagnostics_path, "rb").read() == open(b.diagnostics_path, "rb").read()
        assert open(a.checkpoint_path, "rb").read() == open(b.checkpoint_path, "rb").read()

    def test_per_step_logging_byte_identical(self, quick_config, tmp_path):
        a = train(quick_config(out_prefix=str(tmp_path / "a"), log_every_step=True))
        b = train(quick_config(out_prefix=str(tmp_path / "b"), log_every_step=True))
        assert open(a.csv_path, "rb").read() == open(b.csv_path, "rb").read()

    def test_frozen_base_untouched_by_training(self, quick_config):
        result = train(quick_config(epochs=5))
        fresh = build_mlp([12, 8, 4], 3, 0)
        for got, want in zip(result.model.layers, fresh.layers):
            np.testing.assert_array_equal(got.w0, want.w0)
        # ...while adapters did move.
        assert any(np.any(l.u != 0.0) for l in result.model.layers)

    def test_csv_schema(self, quick_config):
        result = train(quick_config())
        lines = open(result.csv_path).read().splitlines()
        assert lines[0] == ",".join(METRICS_COLUMNS)
        assert len(lines) == 1 + len(result.records)

    def test_csv_floats_roundtrip_full_precision(self, quick_config):
        result = train(quick_config())
        lines = open(result.csv_path).read().splitlines()[1:]
        for line, record in zip(lines, result.records):
            cells = line.split(",")
            assert float(cells[2]) == record.train_loss
            assert float(cells[5]) == record.dyn_grad_norm_sq

    def test_wall_ms_zero_by_default(self, quick_config):
        result = train(quick_config())
        assert all(r.wall_ms == 0.0 for r in result.records)

    def test_wall_ms_opt_in(self, quick_config):
        result = train(quick_config(log_wall_time=True))
        assert result.records[-1].wall_ms > 0.0


class TestDiagnostics:
    def test_running_average_equals_mean_of_step_logs(self, quick_config):
        result = train(quick_config(epochs=5, log_every_step=True))
        dyn = [r.dyn_grad_norm_sq for r in result.step_records]
        vnorm = [r.step_vnorm_sq for r in result.step_records]
        assert abs(np.mean(dyn) - result.diagnostics.running_avg_dyn_grad_norm_sq) <= 1e-12 * max(
            1.0, abs(np.mean(dyn))
        )
        assert abs(np.mean(vnorm) - result.diagnostics.running_avg_step_vnorm_sq) <= 1e-12 * max(
            1.0, abs(np.mean(vnorm))
        )

    def test_dg_estimate_is_max_step_norm(self, quick_config):
        result = train(quick_config(epochs=4, log_every_step=True))
        want = max(math.sqrt(r.grad_norm_sq) for r in result.step_records)
        assert result.diagnostics.dg_estimate == pytest.approx(want, rel=1e-12)

    def test_diagnostics_json_parses(self, quick_config):
        result = train(quick_config())
        payload = json.load(open(result.diagnostics_path))
        assert payload["total_steps"] == result.diagnostics.total_steps
        assert payload["running_avg_dyn_grad_norm_sq"] >= 0.0

    def test_running_average_trend_on_full_batch_regression(self, tmp_path):
        # Full batch + constant rate: past epoch 5 the running mean of the
        # dynamic gradient norm is non-increasing up to one transient window.
        for seed in range(10):
            cfg = config_from_dict(
                {
                    "schema_version": 1,
                    "task": "synthetic-lowrank-regress",
                    "optimizer": "adafish",
                    "out_prefix": str(tmp_path / f"trend{seed}"),
                    "input_dim": 16,
                    "hidden_dims": [],
                    "output_dim": 8,
                    "rank": 4,
                    "teacher_rank": 4,
                    "n_samples": 64,
                    "batch_size": 64,
                    "epochs": 200,
                    "seed": seed,
                    "schedule": "constant",
                    "lr0": 0.03,
                    "curvature_scale": 1.0,
                    "damping": 0.1,
                    "weight_decay": 0.0,
                    "log_every_step": True,
                }
            )
            result = train(cfg, write_outputs=False)
            dyn = np.array([r.dyn_grad_norm_sq for r in result.step_records])
            running = np.cumsum(dyn) / np.arange(1, len(dyn) + 1)
            increases = running[1:] > running[:-1]
            # Count maximal windows of consecutive increases after epoch 5.
            windows = 0
            inside = False
            for flag in increases[5:]:
                if flag and not inside:
                    windows += 1
                inside = flag
            assert windows <= 1
            # The trend is a genuine decay, not a plateau.
            assert running[-1] <= 0.25 * running.max()


class TestRealizability:
    def test_full_batch_regression_reaches_teacher(self, tmp_path):
        # The teacher's low-rank perturbation is representable whenever the
        # student rank is at least the teacher rank, so full-batch training
        # should drive the train MSE essentially to zero.
        cfg = config_from_dict(
            {
                "schema_version": 1,
                "task": "synthetic-lowrank-regress",
                "optimizer": "adafish",
                "out_prefix": str(tmp_path / "realizable"),
                "input_dim": 16,
                "hidden_dims": [],
                "output_dim": 8,
                "rank": 4,
                "teacher_rank": 4,
                "n_samples": 128,
                "batch_size": 128,
                "epochs": 500,
                "seed": 0,
                "schedule": "cosine",
                "lr0": 0.1,
                "curvature_scale": 1.0,
                "damping": 1e-2,
                "weight_decay": 0.0,
            }
        )
        result = train(cfg, write_outputs=False)
        assert result.status == "ok"
        assert result.final_train_loss <= 1e-4


class TestDivergence:
    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_diverged_run_flushes_partial_csv(self, quick_config):
        cfg = quick_config(
            task="synthetic-lowrank-regress",
            optimizer="sgd",
            lr0=1e12,
            hidden_dims=[],
            num_classes=4,
            output_dim=4,
            epochs=5,
            schedule="constant",
        )
        result = train(cfg)
        assert result.status == "diverged"
        assert result.checkpoint_path is None
        lines = open(result.csv_path).read().splitlines()
        assert lines[0] == ",".join(METRICS_COLUMNS)
        assert len(lines) >= 2  # at least the initial evaluation record


class TestCheckpoint:
    def test_roundtrip_model_and_state(self, quick_config):
        result = train(quick_config(epochs=2))
        model, states = load_checkpoint(result.checkpoint_path)
        for got, want in zip(model.layers, result.model.layers):
            np.testing.assert_array_equal(got.w0, want.w0)
            np.testing.assert_array_equal(got.u, want.u)
            np.testing.assert_array_equal(got.v, want.v)
        for got_b, want_b in zip(model.biases, result.model.biases):
            np.testing.assert_array_equal(got_b, want_b)
        assert states is not None
        kind, state = states["layer0.u"]
        assert kind == "gram" and isinstance(state, AdaFishState)
        assert state.t == result.diagnostics.total_steps

    def test_model_only_roundtrip(self, tmp_path):
        model = build_mlp([6, 5, 3], 2, seed=9)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model)
        loaded, states = load_checkpoint(path)
        assert states is None
        x = np.ones((2, 6))
        np.testing.assert_array_equal(forward(loaded, x)[0], forward(model, x)[0])

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTCKPT0" + b"\x00" * 16)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncated_rejected(self, quick_config):
        result = train(quick_config(epochs=1))
        data = open(result.checkpoint_path, "rb").read()
        trimmed = result.checkpoint_path + ".trimmed"
        with open(trimmed, "wb") as fh:
            fh.write(data[: len(data) // 2])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(trimmed)


class TestConfig:
    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            config_from_dict(
                {
                    "schema_version": 1,
                    "task": "synthetic-classify",
                    "optimizer": "adafish",
                    "out_prefix": "x",
                    "learning_rate": 0.1,
                }
            )

    def test_schema_version_enforced(self):
        with pytest.raises(ConfigError, match="schema_version"):
            config_from_dict(
                {"schema_version": 2, "task": "synthetic-classify", "optimizer": "adafish", "out_prefix": "x"}
            )

    def test_missing_required_keys(self):
        with pytest.raises(ConfigError, match="missing required"):
            config_from_dict({"schema_version": 1})

    def test_weight_decay_default_depends_on_optimizer(self):
        base = {"schema_version": 1, "task": "synthetic-classify", "out_prefix": "x"}
        assert config_from_dict({**base, "optimizer": "adafish"}).weight_decay == 1e-1
        assert config_from_dict({**base, "optimizer": "adamw"}).weight_decay == 1e-4

    def test_csv_task_requires_paths(self):
        with pytest.raises(ConfigError, match="csv_path"):
            config_from_dict(
                {"schema_version": 1, "task": "csv-classify", "optimizer": "adamw", "out_prefix": "x"}
            )

    def test_rank_cap_against_model_dims(self):
        with pytest.raises(ConfigError, match="rank"):
            config_from_dict(
                {
                    "schema_version": 1,
                    "task": "synthetic-classify",
                    "optimizer": "adafish",
                    "out_prefix": "x",
                    "num_classes": 3,
                    "rank": 4,
                }
            )

    def test_load_config_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(path)


class TestCsvTask:
    def test_end_to_end_csv_classification(self, tmp_path, quick_config):
        rng = np.random.default_rng(0)
        rows = ["x1,x2,x3,label"]
        for _ in range(120):
            cls = int(rng.integers(0, 3))
            center = np.array([0.0, 4.0, -4.0])[cls]
            vals = rng.normal(center, 1.0, 3)
            rows.append(",".join(f"{v:.6f}" for v in vals) + f",{cls}")
        data = tmp_path / "blobs.csv"
        data.write_text("\n".join(rows) + "\n")
        cfg = quick_config(
            task="csv-classify",
            csv_path=str(data),
            label_column="label",
            hidden_dims=[6],
            num_classes=3,
            rank=2,
            teacher_rank=2,
            epochs=30,
        )
        result = train(cfg)
        assert result.status == "ok"
        assert result.records[-1].test_accuracy >= 0.8


def test_write_metrics_csv_is_deterministic(tmp_path, quick_config):
    result = train(quick_config())
    alt = tmp_path / "again.csv"
    write_metrics_csv(alt, result.records)
    assert alt.read_bytes() == open(result.csv_path, "rb").read()


def test_identity_preconditioner_matches_momentum_trajectory():
    # curvature_scale 0 with damping 1 reduces the gram update to
    # bias-corrected momentum. Train two models in lockstep on the same
    # batch stream: the real optimizer vs a hand-rolled reference that
    # applies momentum to matrices and the same elementwise fallback to
    # biases. Loss trajectories must agree to 1e-12 (they are bitwise
    # equal in practice).
    from adafish.datasets import make_synthetic_dataset, minibatch_indices
    from adafish.linalg import SeededRng
    from adafish.model import batch_loss_and_grads, build_mlp, clone_model, named_parameters, set_parameter
    from adafish.optim import (
        Hyperparams,
        adamw_step,
        fresh_adamw_state,
        make_optimizer,
        orient_gram_side,
    )

    train_set, _, _ = make_synthetic_dataset("synthetic-classify", [12, 8, 4], 3, seed=0, n_samples=80)
    hp = Hyperparams(
        lr0=0.05, weight_decay=0.01, curvature_scale=0.0, damping=1.0, schedule="constant"
    )
    model_a = build_mlp([12, 8, 4], 3, seed=0)
    model_b = clone_model(model_a)
    opt = make_optimizer("adafish", hp)
    ref_state = {}
    losses_a, losses_b = [], []
    rng_a, rng_b = SeededRng(0).derive(7001), SeededRng(0).derive(7001)
    step = 0
    for _ in range(5):
        batches = minibatch_indices(train_set.size, 16, rng_a)
        assert [b.tolist() for b in batches] == [
            b.tolist() for b in minibatch_indices(train_set.size, 16, rng_b)
        ]
        for idx in batches:
            batch = train_set.batch(idx)
            loss_a, grads_a = batch_loss_and_grads(model_a, batch)
            loss_b, grads_b = batch_loss_and_grads(model_b, batch)
            losses_a.append(loss_a)
            losses_b.append(loss_b)
            new_a, _ = opt.step(named_parameters(model_a), grads_a, step)
            for name, value in new_a.items():
                set_parameter(model_a, name, value)
            for name, theta in named_parameters(model_b).items():
                g = grads_b[name]
                if theta.ndim == 2:
                    theta_or, transposed = orient_gram_side(theta)
                    g_or = g.T if transposed else g
                    m, t = ref_state.get(name, (np.zeros_like(theta_or), 0))
                    t += 1
                    m = hp.beta1 * m + (1.0 - hp.beta1) * g_or
                    ref_state[name] = (m, t)
                    new = (1.0 - hp.lr0 * hp.weight_decay) * theta_or
                    new = new - hp.lr0 * (m / (1.0 - hp.beta1 ** t))
                    set_parameter(model_b, name, new.T if transposed else new)
                else:
                    state = ref_state.get(name) or fresh_adamw_state(theta.shape)
                    new, state = adamw_step(theta, g, state, hp, hp.lr0)
                    ref_state[name] = state
                    set_parameter(model_b, name, new)
            step += 1
    np.testing.assert_allclose(losses_a, losses_b, rtol=1e-12)

