"""Benchmarks: MI estimation on Gaussians, gradient checks, transfer and ablation studies."""

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from loguru import logger

from molview.autodiff import ParamStore, Rng, Tape, Tensor, backward, grad_check
from molview.encoders import EncoderModel, GinConfig, SchNetConfig
from molview.encoders.base import initialize, mlp, mlp_specs
from molview.errors import DomainError
from molview.metrics import EvalReport, config_digest, write_json
from molview.molio import MoleculeRecord
from molview.objectives import BatchReprs, LossConfig, infonce, mi_estimate_infonce
from molview.optim import AdamState, adam_step
from molview.synth import SynthSpec, gen_synthetic
from molview.trainer import (
    ProbeConfig,
    TrainConfig,
    build_views,
    finetune_probe,
    pretrain,
    random_model,
    step_loss,
)

GRADCHECK_TOLERANCE = 1e-4

# Streams derived from the benchmark seed
CRITIC_INIT, TRAIN_DATA, EVAL_DATA, GRADCHECK_DATA, GRADCHECK_STEP = range(5)


# Mutual information on correlated Gaussians


def gaussian_mi(rho: float, dim: int) -> float:
    """MI in nats between x and y = rho x + sqrt(1 - rho^2) e, per-coordinate independent."""
    return -0.5 * dim * math.log(1.0 - rho * rho)


def correlated_gaussians(rng: Rng, rho: float, dim: int, count: int) -> tuple[np.ndarray, np.ndarray]:
    x = rng.normal((count, dim))
    y = rho * x + math.sqrt(1.0 - rho * rho) * rng.normal((count, dim))
    return x, y


@dataclass
class MiRun:
    seed: int
    estimate: float
    max_train_estimate: float
    trace: list[float] = field(default_factory=list)


def train_mi_critic(
    rho: float,
    dim: int,
    batch_size: int,
    steps: int,
    seed: int,
    hidden: int = 32,
    lr: float = 5e-3,
    eval_batches: int = 20,
    progress_callback: Callable[[str], None] | None = None,
) -> MiRun:
    """Train two MLP encoders with InfoNCE on fresh Gaussian batches, then estimate MI."""
    base = Rng(seed)
    params = ParamStore()
    specs = {**mlp_specs("critic.x", dim, hidden, hidden), **mlp_specs("critic.y", dim, hidden, hidden)}
    initialize(params, specs, base.derive(CRITIC_INIT))
    adam = AdamState.fresh(params, lr)

    def encode(x: np.ndarray, y: np.ndarray) -> BatchReprs:
        return BatchReprs(mlp(params, "critic.x", Tensor(x)), mlp(params, "critic.y", Tensor(y)))

    trace = []
    for step in range(steps):
        x, y = correlated_gaussians(base.derive(TRAIN_DATA, step), rho, dim, batch_size)
        with Tape() as tape:
            batch = encode(x, y)
            loss = infonce(batch)
            grads = backward(loss, tape, params)
        trace.append(mi_estimate_infonce(batch).item())
        adam_step(params, grads, adam)
        if progress_callback and (step + 1) % 100 == 0:
            progress_callback(f"mi step {step + 1}/{steps} estimate {trace[-1]:.4f}")

    estimates = []
    for b in range(eval_batches):
        x, y = correlated_gaussians(base.derive(EVAL_DATA, b), rho, dim, batch_size)
        estimates.append(mi_estimate_infonce(encode(x, y)).item())
    return MiRun(seed, float(np.mean(estimates)), max(trace, default=-math.inf), trace)


def mi_bench(
    rho: float,
    dim: int = 1,
    batch_size: int = 128,
    steps: int = 2000,
    seeds: int | Sequence[int] = 0,
    progress_callback: Callable[[str], None] | None = None,
) -> EvalReport:
    """InfoNCE lower-bound estimate of I(x; y) for correlated Gaussians against the analytic value.

    Raises:
        DomainError: |rho| >= 1, dim < 1 or batch_size < 2
    """
    if not abs(rho) < 1.0:
        raise DomainError(f"correlation must satisfy |rho| < 1, got {rho}")
    if dim < 1 or batch_size < 2 or steps < 0:
        raise DomainError("mi_bench needs dim >= 1, batch_size >= 2 and steps >= 0")
    seeds = [seeds] if isinstance(seeds, int) else list(seeds)
    runs = [train_mi_critic(rho, dim, batch_size, steps, s, progress_callback=progress_callback) for s in seeds]
    truth = gaussian_mi(rho, dim)
    for run in runs:
        logger.info("seed {}: MI estimate {:.4f} nats (true {:.4f})", run.seed, run.estimate, truth)
    settings = {"rho": rho, "dim": dim, "batch_size": batch_size, "steps": steps}
    return EvalReport(
        task="mi_bench",
        metric="mi_nats",
        seeds=[run.estimate for run in runs],
        config_digest=config_digest(settings),
        extras={
            "true_mi": truth,
            "log_k": math.log(batch_size),
            "max_train_estimate": max(run.max_train_estimate for run in runs),
            "seed_ids": seeds,
        },
    )


# Gradient checks of the training losses


def gradcheck_config(loss: str, variant: str = "plain", seed: int = 0) -> TrainConfig:
    """Small 2-layer, d=16 model configured for one loss selection."""
    return TrainConfig(
        batch_size=4,
        seed=seed,
        loss=dataclasses.replace(LossConfig().select(loss), variant=variant),
        gin=GinConfig(num_layers=2, hidden_dim=16),
        schnet=SchNetConfig(num_layers=2, hidden_dim=16),
    )


def gradcheck_loss(
    loss: str,
    variant: str = "plain",
    seed: int = 0,
    max_entries: int | None = 16,
    eps: float = 1e-5,
) -> float:
    """Max relative error between analytic and finite-difference gradients of a
    training loss on a random 4-molecule batch."""
    config = gradcheck_config(loss, variant, seed)
    records = gen_synthetic(SynthSpec(kind="mixed", count=4, min_atoms=4, max_atoms=7, seed=seed)).records
    model = random_model(config)
    step_rng = Rng(seed).derive(GRADCHECK_STEP)

    def objective(params: ParamStore) -> Tensor:
        pairs, alternates = build_views(records, config, step_rng)
        return step_loss(model, records, pairs, alternates, config, step_rng)[0]

    error = grad_check(objective, model.params, eps=eps, max_entries=max_entries,
                       rng=Rng(seed).derive(GRADCHECK_DATA))
    logger.info("gradcheck {} ({}): max relative error {:.3e}", loss, variant, error)
    return error


# Transfer and ablation studies


def _probe_value(model: EncoderModel, records: Sequence[MoleculeRecord], probe: ProbeConfig) -> float:
    return finetune_probe(model, records, probe).value


def transfer_report(
    records: Sequence[MoleculeRecord],
    config: TrainConfig,
    probe: ProbeConfig,
    seeds: Sequence[int],
    progress_callback: Callable[[str], None] | None = None,
) -> EvalReport:
    """Probe a pretrained encoder and a random-init encoder of the same config per seed.

    The report value is the mean gain of pretrained over random init.
    """
    pretrained, baseline = [], []
    for seed in seeds:
        run_config = dataclasses.replace(config, seed=seed)
        run_probe = dataclasses.replace(probe, seed=seed)
        model = pretrain(records, run_config, progress_callback=progress_callback).model
        pretrained.append(_probe_value(model, records, run_probe))
        baseline.append(_probe_value(random_model(run_config), records, run_probe))
        logger.info("seed {}: pretrained {:.4f} vs random {:.4f}", seed, pretrained[-1], baseline[-1])
    return EvalReport(
        task=f"transfer/{probe.task}",
        metric=f"{probe.task}_gain",
        seeds=[p - b for p, b in zip(pretrained, baseline)],
        config_digest=config_digest({"train": config.training_dict(), "probe": probe.to_dict()}),
        extras={"pretrained": pretrained, "random": baseline, "seed_ids": list(seeds)},
    )


OBJECTIVE_GRID = (
    "infonce", "ebm_nce", "vrr", "rr",
    "infonce+vrr", "ebm_nce+vrr", "infonce+rr", "ebm_nce+rr",
)
MASKING_GRID = (0.0, 0.15, 0.3)
CONFORMER_GRID = (1, 5, 10, 20)
GRIDS = ("objective", "masking", "conformers")


def grid_cells(grid: str, config: TrainConfig) -> list[tuple[str, TrainConfig | None]]:
    """(cell name, config) per cell; a None config is the random-init row."""
    if grid == "objective":
        cells = [(name, dataclasses.replace(config, loss=config.loss.select(name))) for name in OBJECTIVE_GRID]
        return [("random", None)] + cells
    if grid == "masking":
        return [(f"M={m}", dataclasses.replace(config, mask_ratio=m, num_conformers=5)) for m in MASKING_GRID]
    if grid == "conformers":
        return [(f"C={c}", dataclasses.replace(config, mask_ratio=0.15, num_conformers=c)) for c in CONFORMER_GRID]
    raise DomainError(f"unknown ablation grid {grid!r}; expected one of {GRIDS}")


@dataclass
class AblationReport:
    grid: str
    metric: str
    cells: list[dict]
    seed: int
    config_digest: str

    def to_dict(self) -> dict:
        values = [c["value"] for c in self.cells]
        return {
            "task": f"ablation/{self.grid}",
            "metric": self.metric,
            "value": float(np.mean(values)),
            "seeds": [self.seed],
            "config_digest": self.config_digest,
            "cells": self.cells,
        }

    def write(self, path) -> None:
        write_json(self.to_dict(), path)


def ablate(
    records: Sequence[MoleculeRecord],
    config: TrainConfig,
    probe: ProbeConfig,
    grid: str,
    progress_callback: Callable[[str], None] | None = None,
) -> AblationReport:
    """Pretrain and probe once per grid cell."""
    cells = []
    metric = ""
    for name, cell_config in grid_cells(grid, config):
        if progress_callback:
            progress_callback(f"ablation cell {name}")
        if cell_config is None:
            model = random_model(config)
        else:
            model = pretrain(records, cell_config, progress_callback=progress_callback).model
        result = finetune_probe(model, records, probe)
        metric = result.metric
        cells.append({"cell": name, "value": result.value})
        logger.info("ablation {} {}: {} = {:.4f}", grid, name, metric, result.value)
    digest = config_digest({"train": config.training_dict(), "probe": probe.to_dict(), "grid": grid})
    return AblationReport(grid, metric, cells, config.seed, digest)
