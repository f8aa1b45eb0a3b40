"""Pretraining loop over paired 2D/3D views and downstream probing."""

import copy
import dataclasses
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, ClassVar, Iterator, Sequence

import numpy as np
from loguru import logger
from sklearn import model_selection
from sklearn.preprocessing import StandardScaler

from molview.autodiff import (
    ParamStore,
    Rng,
    Tape,
    Tensor,
    backward,
    logsumexp,
    one_hot,
    reduce_mean,
    reduce_sum,
    reshape,
    softplus,
    square,
)
from molview.checkpoint import Checkpoint
from molview.config import build_dataclass, require
from molview.encoders import EncoderModel, GinConfig, HeadConfig, SchNetConfig
from molview.encoders.base import initialize, linear, linear_specs
from molview.errors import CheckpointError, ConfigError, DomainError, GradientError, NonFiniteError, RecordError
from molview.metrics import accuracy, rmse, roc_auc
from molview.molio import Molecule2D, MoleculeRecord, ViewPair, center_coords, mask_views, select_conformer
from molview.objectives import AuxInputs, BatchReprs, LossConfig, combined_loss
from molview.optim import AdamState, adam_step

# Streams derived from the run seed
INIT, SHUFFLE, STEP, SPLIT, PROBE_INIT, PROBE_SHUFFLE = range(6)
# Streams derived from a step's rng
VIEWS, OBJECTIVE = range(2)
# Streams derived from a record's view rng
CONFORMER, MASK, MASK_ALT = range(3)


@dataclass
class TrainConfig:
    """Pretraining hyperparameters; nested objects hold the model and loss settings."""
    mask_ratio: float = 0.15
    num_conformers: int = 5
    batch_size: int = 32
    epochs: int = 5
    lr: float = 1e-3
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    gin: GinConfig = field(default_factory=GinConfig)
    schnet: SchNetConfig = field(default_factory=SchNetConfig)
    heads: HeadConfig = field(default_factory=HeadConfig)
    metrics_path: str | None = None
    wall_time: bool = False
    log_every: int = 10

    NESTED: ClassVar[dict[str, type]] = {
        "loss": LossConfig,
        "gin": GinConfig,
        "schnet": SchNetConfig,
        "heads": HeadConfig,
    }
    # fields that do not influence any logged value
    OUTPUT_ONLY: ClassVar[tuple[str, ...]] = ("metrics_path", "wall_time", "log_every")

    def __post_init__(self):
        require(0.0 <= self.mask_ratio <= 1.0, f"mask_ratio must lie in [0, 1], got {self.mask_ratio}")
        require(self.num_conformers >= 1, f"num_conformers must be >= 1, got {self.num_conformers}")
        require(self.batch_size >= 2, f"batch_size must be >= 2, got {self.batch_size}")
        require(self.epochs >= 1, f"epochs must be >= 1, got {self.epochs}")
        require(math.isfinite(self.lr) and self.lr > 0, f"lr must be positive, got {self.lr}")
        require(0 <= self.seed < 2**64, f"seed must be an unsigned 64-bit integer, got {self.seed}")
        require(self.log_every >= 1, f"log_every must be >= 1, got {self.log_every}")

    @classmethod
    def from_dict(cls, data: dict | None) -> "TrainConfig":
        data = dict(data or {})
        nested = {name: kind.from_dict(data.pop(name)) for name, kind in cls.NESTED.items() if name in data}
        return dataclasses.replace(build_dataclass(cls, data, "config"), **nested)

    def to_dict(self) -> dict:
        return asdict(self)

    def training_dict(self) -> dict:
        """The fields that determine a run's losses."""
        return {k: v for k, v in self.to_dict().items() if k not in self.OUTPUT_ONLY}


@dataclass
class MetricRecord:
    step: int
    loss: float
    terms: dict[str, float]
    secs: float = 0.0

    def to_json(self) -> str:
        return json.dumps({"step": self.step, "loss": self.loss, "terms": self.terms, "secs": self.secs})


class MetricsLog:
    """Append-only per-step metrics, mirrored to a JSONL file when ``path`` is set."""

    def __init__(self, path: Path | str | None = None, append: bool = False):
        self.records: list[MetricRecord] = []
        self.path = Path(path) if path else None
        self._fh = open(self.path, "a" if append else "w", encoding="utf-8") if self.path else None

    def append(self, record: MetricRecord) -> None:
        if self.records and record.step <= self.records[-1].step:
            raise DomainError(f"metric steps must increase: {record.step} after {self.records[-1].step}")
        self.records.append(record)
        if self._fh:
            self._fh.write(record.to_json() + "\n")
            self._fh.flush()

    def losses(self) -> list[float]:
        return [r.loss for r in self.records]

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "MetricsLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[MetricRecord]:
        return iter(self.records)


@dataclass
class PretrainResult:
    model: EncoderModel
    checkpoint: Checkpoint
    metrics: MetricsLog


def steps_per_epoch(num_records: int, batch_size: int) -> int:
    """Full batches plus the trailing partial one unless it holds a single record.

    A dataset smaller than one batch still yields its one (possibly singleton) batch.
    """
    full, rest = divmod(num_records, batch_size)
    if rest >= 2 or (rest and full == 0):
        return full + 1
    return full


def epoch_batches(num_records: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Record indices of every batch of ``epoch``, from a seeded shuffle."""
    order = Rng(seed).derive(SHUFFLE, epoch).permutation(num_records)
    count = steps_per_epoch(num_records, batch_size)
    return [order[b * batch_size:(b + 1) * batch_size] for b in range(count)]


def build_views(
    records: Sequence[MoleculeRecord], config: TrainConfig, rng: Rng
) -> tuple[list[ViewPair], list[Molecule2D]]:
    """Masked view pairs (plus second 2D views for variant C) for one batch."""
    pairs, alternates = [], []
    for i, record in enumerate(records):
        stream = rng.derive(VIEWS, i)
        conformer = center_coords(select_conformer(record, config.num_conformers, stream.derive(CONFORMER)))
        pairs.append(mask_views(record, config.mask_ratio, conformer, stream.derive(MASK)))
        if config.loss.variant == "C":
            alternates.append(mask_views(record, config.mask_ratio, conformer, stream.derive(MASK_ALT)).view2d)
    return pairs, alternates


def step_loss(
    model: EncoderModel,
    records: Sequence[MoleculeRecord],
    pairs: Sequence[ViewPair],
    alternates: Sequence[Molecule2D],
    config: TrainConfig,
    rng: Rng,
) -> tuple[Tensor, dict[str, float]]:
    nodes, hx, offsets = model.encode_2d([p.view2d for p in pairs])
    hy = model.encode_3d([p.view3d for p in pairs])
    aux = None
    if config.loss.variant == "G":
        masked = [(i, j) for i, p in enumerate(pairs) for j in p.masked_indices]
        aux = AuxInputs(
            node_reprs=nodes,
            masked_indices=np.array([offsets[i] + j for i, j in masked], dtype=np.intp),
            true_atoms=np.array([records[i].graph.atoms[j].atomic_number for i, j in masked], dtype=np.intp),
        )
    elif config.loss.variant == "C":
        aux = AuxInputs(hx_alt=model.encode_2d(alternates)[1])
    return combined_loss(model.params, BatchReprs(hx, hy), model.heads, config.loss, rng.derive(OBJECTIVE), aux)


def restore_model(checkpoint: Checkpoint) -> EncoderModel:
    """Rebuild the encoder model described by a checkpoint."""
    config = TrainConfig.from_dict(checkpoint.config)
    model = EncoderModel.empty(config.gin, config.schnet, config.heads)
    specs = model.param_specs()
    if sorted(specs) != sorted(checkpoint.params):
        raise CheckpointError("checkpoint parameters do not match its model config")
    for name in sorted(specs):
        if tuple(checkpoint.params[name].shape) != tuple(specs[name].shape):
            raise CheckpointError(f"parameter {name!r} has shape {checkpoint.params[name].shape}, "
                                  f"config implies {specs[name].shape}")
        model.params.add(name, checkpoint.params[name])
    return model


def random_model(config: TrainConfig) -> EncoderModel:
    """A freshly initialized model, identical to the start of a run with ``config``."""
    return EncoderModel.create(config.gin, config.schnet, config.heads, Rng(config.seed).derive(INIT))


def pretrain(
    records: Sequence[MoleculeRecord],
    config: TrainConfig | None = None,
    resume: Checkpoint | None = None,
    stop_after: int | None = None,
    metrics_path: Path | str | None = None,
    progress_callback: Callable[[str], None] | None = None,
) -> PretrainResult:
    """Pretrain both encoders on paired views of ``records``.

    Args:
        records: training molecules
        config: run configuration; may be omitted when resuming
        resume: checkpoint of an earlier, interrupted run of the same config
        stop_after: stop once this many steps (counted from the run start) are done
        metrics_path: JSONL metrics file; appended to when resuming
        progress_callback: Optional callback for progress updates

    Returns:
        Final model, checkpoint and per-step metrics
    """
    if resume is not None:
        stored = TrainConfig.from_dict(resume.config)
        if config is not None and config.training_dict() != stored.training_dict():
            raise ConfigError("config differs from the checkpoint being resumed")
        config = config or stored
    if config is None:
        raise ConfigError("pretrain needs a config or a checkpoint to resume")
    if not config.loss.enabled:
        raise ConfigError("at least one objective must be enabled for pretraining")
    records = list(records)
    if not records:
        raise DomainError("cannot pretrain on an empty dataset")

    n, k = len(records), config.batch_size
    per_epoch = steps_per_epoch(n, k)
    total_steps = config.epochs * per_epoch
    run_rng = Rng(config.seed)
    if resume is None:
        model = random_model(config)
        adam = AdamState.fresh(model.params, config.lr)
        start = 0
        next_rng = run_rng.derive(STEP, 1)
    else:
        model = restore_model(resume)
        adam = copy.deepcopy(resume.adam)
        start = resume.step
        if start > total_steps:
            raise CheckpointError(f"checkpoint step {start} is past the run's {total_steps} steps")
        next_rng = resumed_step_rng(resume, config.seed)
    end = total_steps if stop_after is None else max(start, min(total_steps, stop_after))

    logger.info("pretraining on {} records: {} steps per epoch, steps {}..{} of {}",
                n, per_epoch, start + 1, end, total_steps)
    started = time.perf_counter()
    path = metrics_path or config.metrics_path
    with MetricsLog(path, append=resume is not None) as metrics:
        shuffled_epoch, batches = -1, []
        for s in range(start, end):
            epoch, position = divmod(s, per_epoch)
            if epoch != shuffled_epoch:
                batches = epoch_batches(n, k, config.seed, epoch)
                shuffled_epoch = epoch
            batch = [records[i] for i in batches[position]]
            step = s + 1
            step_rng = next_rng if s == start else run_rng.derive(STEP, step)

            try:
                pairs, alternates = build_views(batch, config, step_rng)
                with Tape() as tape:
                    total, terms = step_loss(model, batch, pairs, alternates, config, step_rng)
                    grads = backward(total, tape, model.params)
                adam_step(model.params, grads, adam)
            except (NonFiniteError, GradientError) as e:
                raise type(e)(f"step {step}: {e}") from e

            secs = time.perf_counter() - started if config.wall_time else 0.0
            metrics.append(MetricRecord(step, total.item(), terms, secs))
            if step % config.log_every == 0 or step == end:
                logger.info("step {}/{} epoch {} loss {:.6f}", step, total_steps, epoch + 1, total.item())
            if progress_callback:
                progress_callback(f"step {step}/{total_steps} loss {total.item():.6f}")

    checkpoint = Checkpoint(
        config=config.to_dict(),
        params=model.params.snapshot(),
        adam=copy.deepcopy(adam),
        rng_state=run_rng.derive(STEP, end + 1).get_state(),
        step=end,
    )
    return PretrainResult(model, checkpoint, metrics)


def resumed_step_rng(checkpoint: Checkpoint, seed: int) -> Rng:
    """The stream of the first step after ``checkpoint``, restored from its rng state.

    Raises:
        CheckpointError: the stored stream is not the one that step draws from
    """
    state = checkpoint.rng_state
    expected = [STEP, checkpoint.step + 1]
    if state.get("seed") != seed or list(state.get("key", [])) != expected:
        raise CheckpointError(
            f"checkpoint rng state (seed {state.get('seed')}, key {state.get('key')}) does not "
            f"continue step {checkpoint.step} of a seed-{seed} run"
        )
    try:
        return Rng.from_state(state)
    except (DomainError, KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"invalid checkpoint rng state: {e}") from e


# Downstream probing

PROBE_MODES = ("frozen", "full")
PROBE_TASKS = ("binary", "regression", "multiclass")


@dataclass
class ProbeConfig:
    """Downstream training settings.

    Frozen mode runs ``epochs`` full-batch steps on fixed features; full mode
    runs ``finetune_epochs`` mini-batch passes updating the 2D encoder too.
    """
    mode: str = "frozen"
    task: str = "binary"
    target: str | None = None
    seed: int = 0
    epochs: int = 200
    finetune_epochs: int = 5
    lr: float = 1e-2
    batch_size: int = 32
    test_fraction: float = 0.2

    def __post_init__(self):
        require(self.mode in PROBE_MODES, f"probe mode must be one of {PROBE_MODES}, got {self.mode!r}")
        require(self.task in PROBE_TASKS, f"probe task must be one of {PROBE_TASKS}, got {self.task!r}")
        require(self.epochs >= 1 and self.finetune_epochs >= 1, "probe epochs must be >= 1")
        require(math.isfinite(self.lr) and self.lr > 0, f"probe lr must be positive, got {self.lr}")
        require(self.batch_size >= 1, f"probe batch_size must be >= 1, got {self.batch_size}")
        require(0.0 < self.test_fraction < 1.0, f"test_fraction must lie in (0, 1), got {self.test_fraction}")

    @classmethod
    def from_dict(cls, data: dict | None) -> "ProbeConfig":
        return build_dataclass(cls, data, "probe")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ProbeResult:
    task: str
    metric: str
    value: float
    extras: dict[str, float]
    head: ParamStore
    model: EncoderModel


def probe_targets(records: Sequence[MoleculeRecord], target: str | None, task: str) -> np.ndarray:
    """Label of every record as floats.

    Raises:
        RecordError: a record lacks the label
        DomainError: labels do not fit the task
    """
    values = []
    for record in records:
        value = record.target(target)
        if value is None:
            raise RecordError(f"missing label {target or 'label'!r}", record_id=record.id)
        values.append(float(value))
    y = np.array(values)
    if task == "binary" and not np.all((y == 0) | (y == 1)):
        raise DomainError("binary task needs labels 0 or 1")
    if task == "multiclass" and (np.any(y < 0) or np.any(y != np.floor(y))):
        raise DomainError("multiclass task needs non-negative integer labels")
    if not np.all(np.isfinite(y)):
        raise DomainError("labels must be finite")
    return y


def train_test_split(
    num_records: int,
    seed: int,
    test_fraction: float = 0.2,
    labels: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded split into sorted (train, test) index arrays, both non-empty.

    ``labels`` stratifies the split by class. When a class is too rare to
    land on both sides the split falls back to a plain shuffle.
    """
    if num_records < 2:
        raise DomainError(f"cannot split {num_records} record(s) into train and test")
    n_test = min(num_records - 1, max(1, round(test_fraction * num_records)))
    state = int(Rng(seed).derive(SPLIT).integers(0, 2**32))
    indices = np.arange(num_records)
    if labels is not None:
        try:
            train, test = model_selection.train_test_split(
                indices, test_size=n_test, random_state=state, stratify=labels
            )
            return np.sort(train), np.sort(test)
        except ValueError as e:
            logger.warning("cannot stratify the split ({}); splitting without stratification", e)
    train, test = model_selection.train_test_split(indices, test_size=n_test, random_state=state)
    return np.sort(train), np.sort(test)


def encode_features(model: EncoderModel, graphs: Sequence[Molecule2D], chunk: int = 256) -> np.ndarray:
    """Graph representations h_x as an N x d array, computed without recording."""
    out = [model.encode_2d(graphs[i:i + chunk])[1].numpy() for i in range(0, len(graphs), chunk)]
    return np.concatenate(out) if out else np.zeros((0, model.repr_dim))


def fit_scaler(features: np.ndarray) -> StandardScaler:
    """Per-column standardization fitted on ``features``; constant columns keep scale 1."""
    return StandardScaler().fit(features)


def probe_loss(task: str, logits: Tensor, y: np.ndarray) -> Tensor:
    n = y.size
    if task == "binary":
        s = reshape(logits, (n,))
        return reduce_mean(softplus(s) - s * Tensor(y))
    if task == "regression":
        return reduce_mean(square(reshape(logits, (n,)) - Tensor(y)))
    picked = reduce_sum(logits * one_hot(y.astype(np.intp), logits.shape[1]), axis=1)
    return reduce_mean(logsumexp(logits, axis=1) - picked)


def _output_dim(task: str, y: np.ndarray) -> int:
    return int(y.max()) + 1 if task == "multiclass" else 1


def _check_train_classes(task: str, y_train: np.ndarray) -> None:
    if task in ("binary", "multiclass") and np.unique(y_train).size < 2:
        raise DomainError("training split contains a single class")


def fit_linear_probe(
    x_train: np.ndarray,
    y_train: np.ndarray,
    task: str,
    num_outputs: int,
    config: ProbeConfig,
) -> ParamStore:
    """Full-batch Adam on a linear head over fixed (already standardized) features."""
    _check_train_classes(task, y_train)
    head = ParamStore()
    initialize(head, linear_specs("probe", x_train.shape[1], num_outputs), Rng(config.seed).derive(PROBE_INIT))
    adam = AdamState.fresh(head, config.lr)
    features = Tensor(x_train)
    for _ in range(config.epochs):
        with Tape() as tape:
            loss = probe_loss(task, linear(head, "probe", features), y_train)
            grads = backward(loss, tape, head)
        adam_step(head, grads, adam)
    return head


def probe_scores(head: ParamStore, x: np.ndarray) -> np.ndarray:
    return linear(head, "probe", Tensor(x)).numpy()


def score_predictions(task: str, logits: np.ndarray, y: np.ndarray) -> tuple[str, float, dict[str, float]]:
    """Headline metric name and value plus secondary metrics for ``task``."""
    if task == "binary":
        scores = logits[:, 0]
        extras = {"accuracy": accuracy((scores > 0).astype(np.float64), y)}
        if np.unique(y).size < 2:
            logger.warning("evaluation split holds a single class; roc_auc is undefined")
            return "roc_auc", math.nan, extras
        return "roc_auc", roc_auc(scores, y), extras
    if task == "regression":
        return "rmse", rmse(logits[:, 0], y), {}
    return "accuracy", accuracy(np.argmax(logits, axis=1).astype(np.float64), y), {}


def _finetune(
    model: EncoderModel,
    head: ParamStore,
    graphs: Sequence[Molecule2D],
    y: np.ndarray,
    train: np.ndarray,
    scaler: StandardScaler,
    task: str,
    config: ProbeConfig,
    progress_callback: Callable[[str], None] | None,
) -> None:
    params = model.params.subset(f"{model.gin.prefix}.").merged(head)
    adam = AdamState.fresh(params, config.lr)
    shift, inv_scale = Tensor(scaler.mean_), Tensor(1.0 / scaler.scale_)
    for epoch in range(config.finetune_epochs):
        order = train[Rng(config.seed).derive(PROBE_SHUFFLE, epoch).permutation(train.size)]
        for b in range(0, order.size, config.batch_size):
            idx = order[b:b + config.batch_size]
            with Tape() as tape:
                hx = model.encode_2d([graphs[i] for i in idx])[1]
                loss = probe_loss(task, linear(head, "probe", (hx - shift) * inv_scale), y[idx])
                grads = backward(loss, tape, params)
            adam_step(params, grads, adam)
        if progress_callback:
            progress_callback(f"finetune epoch {epoch + 1}/{config.finetune_epochs} loss {loss.item():.6f}")


def finetune_probe(
    model: EncoderModel,
    records: Sequence[MoleculeRecord],
    config: ProbeConfig | None = None,
    progress_callback: Callable[[str], None] | None = None,
) -> ProbeResult:
    """Train a head on 2D graphs only and evaluate it on a held-out 20% split.

    Frozen mode fits a linear probe on h_x and never touches encoder
    parameters. Full mode trains a copy of the model end to end.
    """
    config = config or ProbeConfig()
    records = list(records)
    y = probe_targets(records, config.target, config.task)
    strata = y if config.task in ("binary", "multiclass") else None
    train, test = train_test_split(len(records), config.seed, config.test_fraction, labels=strata)
    _check_train_classes(config.task, y[train])
    graphs = [r.graph for r in records]
    num_outputs = _output_dim(config.task, y)

    features = encode_features(model, graphs)
    scaler = fit_scaler(features[train])
    head = fit_linear_probe(scaler.transform(features[train]), y[train], config.task, num_outputs, config)
    if config.mode == "full":
        model = EncoderModel(model.gin, model.schnet, model.heads, model.params.copy())
        _finetune(model, head, graphs, y, train, scaler, config.task, config, progress_callback)
        features = encode_features(model, graphs)

    logits = probe_scores(head, scaler.transform(features))
    metric, value, extras = score_predictions(config.task, logits[test], y[test])
    _, train_value, _ = score_predictions(config.task, logits[train], y[train])
    extras = {**extras, f"train_{metric}": train_value}
    logger.info("{} probe ({} mode): test {} = {:.4f}", config.task, config.mode, metric, value)
    return ProbeResult(config.task, metric, value, extras, head, model)
