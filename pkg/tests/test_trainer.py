"""Tests for the optimizer, the pretraining loop and downstream probes."""

import dataclasses
import math

import numpy as np
import pytest

from conftest import make_record
from molview.autodiff import ParamStore, Rng, Tensor
from molview.checkpoint import load_checkpoint, save_checkpoint
from molview.errors import CheckpointError, ConfigError, DomainError, GradientError, RecordError
from molview.metrics import roc_auc
from molview.optim import AdamState, adam_step
from molview.trainer import (
    STEP,
    MetricRecord,
    MetricsLog,
    ProbeConfig,
    TrainConfig,
    epoch_batches,
    finetune_probe,
    fit_linear_probe,
    pretrain,
    probe_scores,
    probe_targets,
    random_model,
    score_predictions,
    steps_per_epoch,
    train_test_split,
)


def chain_records(count: int, label_fn) -> list:
    """Chains of 3..12 atoms labeled by ``label_fn(n)``."""
    out = []
    for i in range(count):
        n = 3 + i % 10
        out.append(make_record(n=n, rid=f"c{i}", label=float(label_fn(n))))
    return out


class TestAdam:
    def test_first_step_moves_by_lr(self):
        params = ParamStore()
        params.add("w", [1.0, -2.0, 0.5])
        state = AdamState.fresh(params, lr=0.01)
        adam_step(params, {"w": Tensor([0.5, -3.0, 1e-3])}, state)
        np.testing.assert_allclose(params["w"].data, [0.99, -1.99, 0.49], atol=1e-6)
        assert state.t == 1

    def test_zero_gradient_leaves_params(self):
        params = ParamStore()
        params.add("w", [1.0, 2.0])
        state = AdamState.fresh(params)
        adam_step(params, {"w": Tensor([0.0, 0.0])}, state)
        np.testing.assert_array_equal(params["w"].data, [1.0, 2.0])

    def test_matches_reference_recurrence(self):
        params = ParamStore()
        params.add("w", [0.3, -0.7])
        state = AdamState.fresh(params, lr=0.05)
        theta = np.array([0.3, -0.7])
        m = np.zeros(2)
        v = np.zeros(2)
        for t in range(1, 11):
            g = np.array([np.sin(t), np.cos(3 * t)])
            adam_step(params, {"w": Tensor(g)}, state)
            m = 0.9 * m + (1.0 - 0.9) * g
            v = 0.999 * v + (1.0 - 0.999) * (g * g)
            theta = theta - 0.05 * (m / (1.0 - 0.9**t)) / (np.sqrt(v / (1.0 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(params["w"].data, theta, rtol=1e-14)

    def test_missing_gradient(self):
        params = ParamStore()
        params.add("w", [1.0])
        with pytest.raises(GradientError):
            adam_step(params, {}, AdamState.fresh(params))

    def test_non_finite_gradient(self):
        params = ParamStore()
        params.add("w", [1.0])
        with pytest.raises(GradientError):
            adam_step(params, {"w": Tensor([np.nan])}, AdamState.fresh(params))


class TestConfig:
    def test_nested_from_dict(self):
        config = TrainConfig.from_dict({"gin": {"hidden_dim": 8}, "loss": {"contrastive_kind": "infonce"}})
        assert config.gin.hidden_dim == 8
        assert config.loss.contrastive_kind == "infonce"
        assert config.batch_size == 32

    def test_round_trip(self, tiny_config):
        assert TrainConfig.from_dict(tiny_config.to_dict()) == tiny_config

    @pytest.mark.parametrize("data", [
        {"batchsize": 4},
        {"batch_size": 1},
        {"mask_ratio": 1.5},
        {"gin": {"layers": 2}},
        {"loss": {"variant": "X"}},
    ])
    def test_invalid(self, data):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict(data)

    def test_output_fields_not_part_of_training(self, tiny_config):
        other = dataclasses.replace(tiny_config, log_every=1, wall_time=True)
        assert other.training_dict() == tiny_config.training_dict()


class TestBatching:
    @pytest.mark.parametrize("n, k, expected", [(10, 4, 3), (9, 4, 2), (8, 4, 2), (1, 32, 1), (5, 32, 1)])
    def test_steps_per_epoch(self, n, k, expected):
        assert steps_per_epoch(n, k) == expected

    def test_epoch_batches_are_seeded(self):
        a = epoch_batches(10, 4, seed=3, epoch=1)
        b = epoch_batches(10, 4, seed=3, epoch=1)
        assert [x.tolist() for x in a] == [x.tolist() for x in b]
        assert sorted(np.concatenate(a).tolist()) == list(range(10))

    def test_metrics_steps_must_increase(self):
        log = MetricsLog()
        log.append(MetricRecord(1, 0.5, {}))
        with pytest.raises(DomainError):
            log.append(MetricRecord(1, 0.4, {}))


class TestPretrain:
    def test_deterministic(self, records, tiny_config, tmp_path):
        pretrain(records, tiny_config, metrics_path=tmp_path / "a.jsonl")
        pretrain(records, tiny_config, metrics_path=tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_metrics_and_checkpoint(self, records, tiny_config):
        result = pretrain(records, tiny_config)
        assert len(result.metrics) == 3
        assert [r.step for r in result.metrics] == [1, 2, 3]
        assert set(result.metrics.records[0].terms) == {"ebm_nce", "vrr"}
        assert result.checkpoint.step == 3
        assert result.checkpoint.adam.t == 3

    def test_resume_matches_uninterrupted_run(self, records, tiny_config, tmp_path):
        config = dataclasses.replace(tiny_config, epochs=2)
        full = pretrain(records, config, metrics_path=tmp_path / "full.jsonl")

        first = pretrain(records, config, stop_after=4, metrics_path=tmp_path / "split.jsonl")
        save_checkpoint(tmp_path / "mid.gmvp", first.checkpoint)
        resumed = pretrain(records, resume=load_checkpoint(tmp_path / "mid.gmvp"),
                           metrics_path=tmp_path / "split.jsonl")

        assert (tmp_path / "full.jsonl").read_bytes() == (tmp_path / "split.jsonl").read_bytes()
        assert resumed.checkpoint == full.checkpoint

    def test_checkpoint_holds_next_step_stream(self, records, tiny_config):
        first = pretrain(records, tiny_config, stop_after=2)
        state = first.checkpoint.rng_state
        assert state["seed"] == tiny_config.seed
        assert state["key"] == [STEP, 3]
        np.testing.assert_array_equal(
            Rng.from_state(state).normal(4), Rng(tiny_config.seed).derive(STEP, 3).normal(4)
        )

    def test_resume_rejects_foreign_rng_state(self, records, tiny_config):
        first = pretrain(records, tiny_config, stop_after=1)
        stale = dataclasses.replace(first.checkpoint, rng_state=Rng(tiny_config.seed).derive(STEP, 7).get_state())
        with pytest.raises(CheckpointError, match="rng state"):
            pretrain(records, resume=stale)

    def test_resume_rejects_changed_config(self, records, tiny_config):
        first = pretrain(records, tiny_config, stop_after=1)
        with pytest.raises(ConfigError):
            pretrain(records, dataclasses.replace(tiny_config, lr=0.5), resume=first.checkpoint)

    def test_single_molecule_batch(self, tiny_config):
        with pytest.raises(DomainError, match="K=1"):
            pretrain([make_record(n=5)], tiny_config)

    def test_empty_dataset(self, tiny_config):
        with pytest.raises(DomainError):
            pretrain([], tiny_config)

    def test_no_objective(self, records, tiny_config):
        config = dataclasses.replace(tiny_config, loss=tiny_config.loss.select("none"))
        with pytest.raises(ConfigError):
            pretrain(records, config)

    def test_no_masking_single_conformer(self, records, tiny_config):
        config = dataclasses.replace(
            tiny_config, mask_ratio=0.0, num_conformers=1,
            loss=dataclasses.replace(tiny_config.loss, alpha2=0.0),
        )
        result = pretrain(records, config)
        assert all(np.isfinite(result.metrics.losses()))

    @pytest.mark.parametrize("variant, term", [("G", "attr_mask"), ("C", "contrastive_2d")])
    def test_variants(self, records, tiny_config, variant, term):
        config = dataclasses.replace(tiny_config, loss=dataclasses.replace(tiny_config.loss, variant=variant))
        result = pretrain(records, config)
        assert term in result.metrics.records[0].terms

    def test_parameters_change(self, records, tiny_config):
        before = random_model(tiny_config).params.snapshot()
        after = pretrain(records, tiny_config).model.params.snapshot()
        assert any(not np.array_equal(before[n], after[n]) for n in before)


class TestProbe:
    def test_separable_features(self):
        x = np.concatenate([np.linspace(-3, -1, 20), np.linspace(1, 3, 20)])[:, None]
        y = np.array([0.0] * 20 + [1.0] * 20)
        head = fit_linear_probe(x, y, "binary", 1, ProbeConfig(epochs=500))
        scores = probe_scores(head, x)[:, 0]
        assert roc_auc(scores, y) == 1.0
        assert np.all((scores > 0) == (y == 1))

    def test_single_class(self):
        with pytest.raises(DomainError):
            fit_linear_probe(np.zeros((5, 2)), np.ones(5), "binary", 1, ProbeConfig())

    def test_missing_labels(self):
        with pytest.raises(RecordError, match="c0"):
            probe_targets([make_record(rid="c0")], None, "binary")

    def test_binary_labels_checked(self):
        with pytest.raises(DomainError):
            probe_targets([make_record(label=2.0)], None, "binary")

    def test_split(self):
        train, test = train_test_split(50, seed=1)
        assert test.size == 10
        assert sorted(np.concatenate([train, test]).tolist()) == list(range(50))
        np.testing.assert_array_equal(train_test_split(50, seed=1)[1], test)

    def test_split_is_stratified(self):
        labels = np.repeat([0.0, 1.0], 20)
        for seed in range(5):
            train, test = train_test_split(40, seed=seed, labels=labels)
            assert test.size == 8
            assert labels[test].sum() == 4

    def test_split_with_a_singleton_class(self):
        labels = np.array([0.0] * 9 + [1.0])
        train, test = train_test_split(10, seed=3, labels=labels)
        assert sorted(np.concatenate([train, test]).tolist()) == list(range(10))
        assert test.size == 2

    def test_single_class_evaluation_split(self):
        metric, value, extras = score_predictions("binary", np.array([[0.3], [-0.2]]), np.zeros(2))
        assert metric == "roc_auc"
        assert math.isnan(value)
        assert extras["accuracy"] == 0.5

    def test_imbalanced_binary_task_does_not_fail(self, tiny_config):
        records = chain_records(10, lambda n: float(n in (4, 9)))
        result = finetune_probe(random_model(tiny_config), records, ProbeConfig(seed=5, epochs=20))
        assert result.metric == "roc_auc"
        assert math.isnan(result.value) or 0.0 <= result.value <= 1.0
        assert "accuracy" in result.extras

    def test_shuffled_labels_give_chance_auc(self):
        values = []
        for seed in range(5):
            rng = Rng(seed)
            x = rng.normal((800, 8))
            y = rng.permutation(np.repeat([0.0, 1.0], 400))
            head = fit_linear_probe(x[:400], y[:400], "binary", 1, ProbeConfig(seed=seed, epochs=100))
            values.append(roc_auc(probe_scores(head, x[400:])[:, 0], y[400:]))
        assert 0.4 <= np.mean(values) <= 0.6

    def test_frozen_leaves_encoder_untouched(self, records, tiny_config):
        model = random_model(tiny_config)
        before = model.params.snapshot()
        result = finetune_probe(model, records, ProbeConfig(task="multiclass", target="diameter", epochs=20))
        assert result.metric == "accuracy"
        assert 0.0 <= result.value <= 1.0
        for name, value in before.items():
            assert model.params[name].data.tobytes() == value.tobytes()

    def test_full_mode_trains_a_copy(self, tiny_config):
        records = chain_records(30, lambda n: n)
        model = random_model(tiny_config)
        before = model.params.snapshot()
        config = ProbeConfig(mode="full", task="regression", epochs=20, finetune_epochs=2, batch_size=8)
        result = finetune_probe(model, records, config)
        assert result.metric == "rmse"
        assert "train_rmse" in result.extras
        tuned = result.model.params
        assert any(not np.array_equal(before[n], tuned[n].data) for n in before if n.startswith("gin."))
        for name in before:
            np.testing.assert_array_equal(model.params[name].data, before[name])
            if not name.startswith("gin."):
                np.testing.assert_array_equal(tuned[name].data, before[name])

    def test_binary_probe_reports_auc(self, tiny_config):
        records = chain_records(40, lambda n: n % 2)
        result = finetune_probe(random_model(tiny_config), records, ProbeConfig(seed=2, epochs=50))
        assert result.metric == "roc_auc"
        assert "accuracy" in result.extras
