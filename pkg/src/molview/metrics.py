"""Evaluation metrics and the report written by evaluation commands."""

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.metrics import accuracy_score, mean_squared_error, roc_auc_score

from molview.errors import DomainError, ShapeError


def _paired(preds: Sequence[float], targets: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(preds, dtype=np.float64).reshape(-1)
    b = np.asarray(targets, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise ShapeError(f"{a.size} predictions for {b.size} targets")
    if a.size == 0:
        raise DomainError("metric over an empty set")
    return a, b


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve; tied scores count half.

    Raises:
        DomainError: labels are not binary or only one class is present
    """
    s, y = _paired(scores, labels)
    if not np.all((y == 0) | (y == 1)):
        raise DomainError("roc_auc labels must be 0 or 1")
    if np.unique(y).size < 2:
        raise DomainError("roc_auc needs both classes present")
    return float(roc_auc_score(y.astype(np.int64), s))


def rmse(preds: Sequence[float], targets: Sequence[float]) -> float:
    p, t = _paired(preds, targets)
    return math.sqrt(float(mean_squared_error(t, p)))


def accuracy(preds: Sequence[float], targets: Sequence[float]) -> float:
    """Fraction of exactly matching predicted and true classes."""
    p, t = _paired(preds, targets)
    return float(accuracy_score(t, p))


def config_digest(config: dict) -> str:
    """sha256 of the canonical JSON form of ``config``, first 16 hex digits."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclass
class EvalReport:
    """A metric over one or more seeds; ``value`` is the mean of ``seeds``."""
    task: str
    metric: str
    seeds: list[float]
    config_digest: str = ""
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.seeds:
            raise DomainError("an evaluation report needs at least one per-seed value")
        self.seeds = [float(v) for v in self.seeds]

    @property
    def value(self) -> float:
        return float(np.mean(self.seeds))

    def to_dict(self) -> dict:
        out = {
            "task": self.task,
            "metric": self.metric,
            "value": self.value,
            "seeds": self.seeds,
            "config_digest": self.config_digest,
        }
        if self.extras:
            out["extras"] = self.extras
        return out

    def write(self, path) -> None:
        write_json(self.to_dict(), path)


def write_json(data: dict, path) -> None:
    """Pretty, key-sorted JSON; identical inputs give identical bytes."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
