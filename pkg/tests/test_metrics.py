"""Tests for evaluation metrics and reports."""

import json
import math

import numpy as np
import pytest

from molview.errors import DomainError, ShapeError
from molview.metrics import EvalReport, accuracy, config_digest, rmse, roc_auc


class TestRocAuc:
    def test_perfect_and_inverted(self):
        labels = [0, 0, 1, 1]
        assert roc_auc([0.1, 0.2, 0.8, 0.9], labels) == 1.0
        assert roc_auc([0.9, 0.8, 0.2, 0.1], labels) == 0.0

    def test_ties_count_half(self):
        assert roc_auc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == 0.5

    def test_matches_pair_count(self):
        rng = np.random.default_rng(0)
        scores = rng.normal(size=30).round(1)
        labels = (rng.random(30) > 0.5).astype(int)
        pos, neg = scores[labels == 1], scores[labels == 0]
        wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
        assert roc_auc(scores, labels) == pytest.approx(wins / (len(pos) * len(neg)), abs=1e-12)

    def test_monotone_transform_invariance(self):
        scores = np.array([0.3, -1.2, 2.0, 0.7, 0.1])
        labels = [1, 0, 1, 0, 1]
        assert roc_auc(np.exp(3 * scores), labels) == roc_auc(scores, labels)

    def test_single_class(self):
        with pytest.raises(DomainError):
            roc_auc([0.1, 0.2], [1, 1])

    def test_non_binary_labels(self):
        with pytest.raises(DomainError):
            roc_auc([0.1, 0.2], [0, 2])

    def test_shuffled_labels_give_chance(self):
        values = []
        for seed in range(5):
            rng = np.random.default_rng(seed)
            scores = rng.normal(size=2000)
            labels = rng.permutation(np.arange(2000) % 2)
            values.append(roc_auc(scores, labels))
        assert 0.4 <= np.mean(values) <= 0.6
        assert all(abs(v - 0.5) < 0.05 for v in values)


class TestRegressionMetrics:
    def test_rmse(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert rmse([1.0, 2.0, 3.0], [2.0, 3.0, 4.0]) == pytest.approx(1.0)
        assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(math.sqrt(12.5))

    def test_accuracy(self):
        assert accuracy([0, 1, 2, 2], [0, 1, 1, 2]) == 0.75

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            rmse([1.0], [1.0, 2.0])

    def test_empty(self):
        with pytest.raises(DomainError):
            accuracy([], [])


class TestReport:
    def test_value_is_mean_of_seeds(self, tmp_path):
        report = EvalReport("probe/binary", "roc_auc", [0.8, 0.9, 1.0], config_digest="abc")
        assert report.value == pytest.approx(0.9)
        path = tmp_path / "report.json"
        report.write(path)
        data = json.loads(path.read_text())
        assert set(data) == {"task", "metric", "value", "seeds", "config_digest"}
        assert data["seeds"] == [0.8, 0.9, 1.0]

    def test_needs_a_seed(self):
        with pytest.raises(DomainError):
            EvalReport("t", "m", [])

    def test_config_digest_ignores_key_order(self):
        assert config_digest({"a": 1, "b": [1, 2]}) == config_digest({"b": [1, 2], "a": 1})
        assert config_digest({"a": 1}) != config_digest({"a": 2})
        assert len(config_digest({})) == 16
