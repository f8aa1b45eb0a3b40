"""Shared fixtures: small synthetic datasets, hand-built records and a small model."""

import numpy as np
import pytest

from molview.autodiff import Rng
from molview.encoders import EncoderModel, GinConfig, HeadConfig, SchNetConfig
from molview.molio import Atom, Bond, BondType, Conformer, Molecule2D, MoleculeRecord
from molview.synth import SynthSpec, gen_synthetic
from molview.trainer import TrainConfig


def make_record(n: int = 4, rid: str = "m0", weights=(1.0,), label=None, labels=None) -> MoleculeRecord:
    """A carbon chain of ``n`` atoms with one conformer per weight."""
    atoms = tuple(Atom(6, 1 if i in (0, n - 1) else 2) for i in range(n))
    bonds = tuple(Bond(i, i + 1, BondType.SINGLE) for i in range(n - 1))
    conformers = tuple(
        Conformer(np.column_stack([1.5 * np.arange(n), np.full(n, 0.1 * k), np.zeros(n)]), w)
        for k, w in enumerate(weights)
    )
    return MoleculeRecord(rid, Molecule2D(atoms, bonds), conformers, label, labels or {})


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def small_dataset():
    return gen_synthetic(SynthSpec(kind="mixed", count=12, min_atoms=4, max_atoms=8, seed=3))


@pytest.fixture
def records(small_dataset):
    return small_dataset.records


@pytest.fixture
def small_model():
    return EncoderModel.create(GinConfig(2, 16), SchNetConfig(2, 16), HeadConfig(), Rng(7))


@pytest.fixture
def tiny_config():
    """One-layer d=8 encoders, batches of 4, one epoch."""
    return TrainConfig.from_dict({
        "batch_size": 4,
        "epochs": 1,
        "seed": 11,
        "gin": {"num_layers": 1, "hidden_dim": 8},
        "schnet": {"num_layers": 1, "hidden_dim": 8},
    })
