"""Molecule records, the JSONL dataset format, masking and graph batching."""

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from loguru import logger

from molview.autodiff import Rng
from molview.errors import DomainError, NonFiniteError, RecordError

ATOM_MASK = 0
MAX_ATOMIC_NUMBER = 118
ATOM_VOCAB = MAX_ATOMIC_NUMBER + 1

NUM_TAGS = 8
TAG_MASK = NUM_TAGS
TAG_VOCAB = NUM_TAGS + 1


class BondType(IntEnum):
    SINGLE = 0
    DOUBLE = 1
    TRIPLE = 2
    AROMATIC = 3
    MASK = 4


BOND_VOCAB = len(BondType)
BOND_NAMES = {"single": BondType.SINGLE, "double": BondType.DOUBLE,
              "triple": BondType.TRIPLE, "aromatic": BondType.AROMATIC}

RECORD_KEYS = {"id", "atoms", "bonds", "conformers", "label", "labels"}
ATOM_KEYS = {"z", "tag"}
BOND_KEYS = {"i", "j", "type"}
CONFORMER_KEYS = {"coords", "weight"}


@dataclass(frozen=True)
class Atom:
    """One atom: atomic number (0 is the mask token) and an auxiliary tag."""
    atomic_number: int
    tag: int = 0

    def __post_init__(self):
        if not 0 <= self.atomic_number <= MAX_ATOMIC_NUMBER:
            raise RecordError(f"invalid atomic number {self.atomic_number}")
        if not 0 <= self.tag <= TAG_MASK:
            raise RecordError(f"invalid atom tag {self.tag} (expected 0..{NUM_TAGS - 1})")

    @property
    def is_masked(self) -> bool:
        return self.atomic_number == ATOM_MASK


@dataclass(frozen=True)
class Bond:
    """Undirected bond stored once with i < j."""
    i: int
    j: int
    bond_type: BondType = BondType.SINGLE

    def __post_init__(self):
        if self.i == self.j:
            raise RecordError(f"self-bond on atom {self.i}")
        if self.i > self.j:
            i, j = self.j, self.i
            object.__setattr__(self, "i", i)
            object.__setattr__(self, "j", j)
        object.__setattr__(self, "bond_type", BondType(self.bond_type))


@dataclass(frozen=True)
class Molecule2D:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        object.__setattr__(self, "bonds", tuple(self.bonds))
        n = len(self.atoms)
        seen = set()
        for bond in self.bonds:
            if bond.j >= n:
                raise RecordError(f"bond ({bond.i}, {bond.j}) index out of range for {n} atoms")
            if (bond.i, bond.j) in seen:
                raise RecordError(f"duplicate bond ({bond.i}, {bond.j})")
            seen.add((bond.i, bond.j))

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    def neighbors(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in self.atoms]
        for bond in self.bonds:
            adj[bond.i].append(bond.j)
            adj[bond.j].append(bond.i)
        return adj


@dataclass(frozen=True, eq=False)
class Conformer:
    """3D coordinates in Å plus the conformer's occurrence weight."""
    coords: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        coords = np.array(self.coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise RecordError(f"coords must be an n x 3 matrix, got shape {coords.shape}")
        if not np.all(np.isfinite(coords)):
            raise NonFiniteError("conformer coordinates contain NaN or Inf")
        if not self.weight >= 0:
            raise RecordError(f"conformer weight must be non-negative, got {self.weight}")
        coords.flags.writeable = False
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "weight", float(self.weight))

    @property
    def num_atoms(self) -> int:
        return self.coords.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Conformer):
            return NotImplemented
        return self.weight == other.weight and np.array_equal(self.coords, other.coords)

    __hash__ = None


@dataclass(frozen=True)
class MoleculeRecord:
    """A molecule's 2D graph with its conformers sorted by weight, descending."""
    id: str
    graph: Molecule2D
    conformers: tuple[Conformer, ...]
    label: float | None = None
    labels: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        conformers = tuple(self.conformers)
        if not conformers:
            raise RecordError("record has no conformers", record_id=self.id)
        for conf in conformers:
            if conf.num_atoms != self.graph.num_atoms:
                raise RecordError(
                    f"conformer has {conf.num_atoms} coordinate rows for "
                    f"{self.graph.num_atoms} atoms",
                    record_id=self.id,
                )
        # stable sort keeps input order among equal weights
        conformers = tuple(sorted(conformers, key=lambda c: -c.weight))
        object.__setattr__(self, "conformers", conformers)
        object.__setattr__(self, "labels", dict(self.labels))

    def target(self, name: str | None = None) -> float | None:
        """The label called ``name``, or the primary label when name is None."""
        if name is None:
            return self.label
        return self.labels.get(name)


@dataclass(frozen=True)
class View3D:
    atoms: tuple[Atom, ...]
    conformer: Conformer


@dataclass(frozen=True)
class ViewPair:
    """Paired 2D/3D views with the same atoms masked in both."""
    view2d: Molecule2D
    view3d: View3D
    masked_indices: tuple[int, ...]


@dataclass
class Dataset:
    header: dict[str, Any]
    records: list[MoleculeRecord]


# JSONL format


def _check_keys(obj: Any, allowed: set[str], what: str, strict: bool, record_id: str | None) -> None:
    if not isinstance(obj, dict):
        raise RecordError(f"{what} must be a JSON object", record_id=record_id)
    if strict:
        unknown = sorted(set(obj) - allowed)
        if unknown:
            raise RecordError(f"unknown key(s) in {what}: {', '.join(unknown)}", record_id=record_id)


def record_from_dict(obj: Mapping[str, Any], strict: bool = True) -> MoleculeRecord:
    """Build a validated record from one decoded JSONL object."""
    record_id = obj.get("id") if isinstance(obj, dict) else None
    _check_keys(obj, RECORD_KEYS, "record", strict, record_id)
    if not isinstance(record_id, str):
        raise RecordError("record 'id' must be a string")
    try:
        atoms = []
        for a in obj["atoms"]:
            _check_keys(a, ATOM_KEYS, "atom", strict, record_id)
            atoms.append(Atom(int(a["z"]), int(a.get("tag", 0))))
        bonds = []
        for b in obj.get("bonds", []):
            _check_keys(b, BOND_KEYS, "bond", strict, record_id)
            kind = b.get("type", "single")
            if kind not in BOND_NAMES:
                raise RecordError(f"unknown bond type {kind!r}")
            i, j = int(b["i"]), int(b["j"])
            if min(i, j) < 0 or max(i, j) >= len(atoms):
                raise RecordError(f"bond ({i}, {j}) index out of range for {len(atoms)} atoms")
            bonds.append(Bond(i, j, BOND_NAMES[kind]))
        conformers = []
        for c in obj["conformers"]:
            _check_keys(c, CONFORMER_KEYS, "conformer", strict, record_id)
            coords = np.array(c["coords"], dtype=np.float64)
            if coords.size == 0:
                coords = coords.reshape(0, 3)
            conformers.append(Conformer(coords, float(c.get("weight", 1.0))))
        label = obj.get("label")
        labels = {str(k): float(v) for k, v in (obj.get("labels") or {}).items()}
        return MoleculeRecord(
            id=record_id,
            graph=Molecule2D(tuple(atoms), tuple(bonds)),
            conformers=tuple(conformers),
            label=None if label is None else float(label),
            labels=labels,
        )
    except RecordError as e:
        if e.record_id is None:
            raise RecordError(e.detail, record_id=record_id) from e
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise RecordError(f"malformed record: {e}", record_id=record_id) from e


def record_to_dict(record: MoleculeRecord) -> dict[str, Any]:
    inverse = {v: k for k, v in BOND_NAMES.items()}
    out: dict[str, Any] = {
        "id": record.id,
        "atoms": [{"z": a.atomic_number, "tag": a.tag} for a in record.graph.atoms],
        "bonds": [{"i": b.i, "j": b.j, "type": inverse[b.bond_type]} for b in record.graph.bonds],
        "conformers": [{"coords": c.coords.tolist(), "weight": c.weight} for c in record.conformers],
    }
    if record.label is not None:
        out["label"] = record.label
    if record.labels:
        out["labels"] = dict(sorted(record.labels.items()))
    return out


def load_dataset(path: Path, strict: bool = True) -> Dataset:
    """Read a JSONL dataset, including its optional leading header line.

    Raises:
        RecordError: malformed JSON (with line number) or invalid record
    """
    header: dict[str, Any] = {}
    records: list[MoleculeRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise RecordError(f"malformed JSON: {e.msg}", line=lineno) from e
            if isinstance(obj, dict) and "header" in obj and not records and not header:
                header = dict(obj["header"])
                continue
            try:
                records.append(record_from_dict(obj, strict=strict))
            except RecordError as e:
                raise RecordError(e.detail, record_id=e.record_id, line=lineno) from e
    logger.debug("loaded {} records from {}", len(records), path)
    return Dataset(header, records)


def parse_jsonl(path: Path, strict: bool = True) -> list[MoleculeRecord]:
    """Records of a JSONL dataset in file order."""
    return load_dataset(path, strict=strict).records


def serialize_jsonl(records: Iterable[MoleculeRecord], path: Path, header: dict | None = None) -> None:
    """Write records one per line; floats keep full precision."""
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")
        for record in records:
            fh.write(json.dumps(record_to_dict(record), separators=(",", ":")) + "\n")


# Views


def masked_count(ratio: float, n: int) -> int:
    return min(n, math.ceil(ratio * n))


def mask_views(record: MoleculeRecord, ratio: float, conformer: Conformer, rng: Rng) -> ViewPair:
    """Mask the same randomly chosen atoms in the 2D graph and the 3D view.

    In the 2D view masked atoms lose atomic number and tag and every
    incident bond becomes ``BondType.MASK``; in the 3D view only the atomic
    number is masked and coordinates stay in place.
    """
    if not 0.0 <= ratio <= 1.0:
        raise DomainError(f"masking ratio must lie in [0, 1], got {ratio}")
    graph = record.graph
    n = graph.num_atoms
    k = masked_count(ratio, n)
    masked = tuple(sorted(int(i) for i in rng.choice(n, k))) if k else ()
    hidden = set(masked)

    atoms2d = tuple(Atom(ATOM_MASK, TAG_MASK) if i in hidden else a for i, a in enumerate(graph.atoms))
    bonds2d = tuple(
        Bond(b.i, b.j, BondType.MASK) if b.i in hidden or b.j in hidden else b
        for b in graph.bonds
    )
    atoms3d = tuple(Atom(ATOM_MASK, a.tag) if i in hidden else a for i, a in enumerate(graph.atoms))
    return ViewPair(Molecule2D(atoms2d, bonds2d), View3D(atoms3d, conformer), masked)


def select_conformer(record: MoleculeRecord, count: int, rng: Rng) -> Conformer:
    """Uniform draw among the ``count`` highest-weight conformers."""
    if count < 1:
        raise DomainError(f"conformer count must be >= 1, got {count}")
    top = min(count, len(record.conformers))
    return record.conformers[int(rng.integers(0, top))]


def center_coords(conformer: Conformer) -> Conformer:
    coords = conformer.coords
    if coords.shape[0] == 0:
        raise DomainError("cannot center a conformer with no atoms")
    return Conformer(coords - coords.mean(axis=0), conformer.weight)


# Batching


@dataclass(frozen=True, eq=False)
class GraphBatch:
    """Disjoint union of 2D graphs; edges are stored in both directions."""
    atomic_numbers: np.ndarray
    tags: np.ndarray
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_types: np.ndarray
    node_graph: np.ndarray
    offsets: np.ndarray

    @property
    def num_nodes(self) -> int:
        return int(self.atomic_numbers.size)

    @property
    def num_graphs(self) -> int:
        return int(self.offsets.size - 1)


@dataclass(frozen=True, eq=False)
class PointBatch:
    """Disjoint union of 3D point sets with intra-molecule pairs within a cutoff."""
    atomic_numbers: np.ndarray
    coords: np.ndarray
    pair_i: np.ndarray
    pair_j: np.ndarray
    pair_dist: np.ndarray
    node_graph: np.ndarray
    offsets: np.ndarray

    @property
    def num_nodes(self) -> int:
        return int(self.atomic_numbers.size)

    @property
    def num_graphs(self) -> int:
        return int(self.offsets.size - 1)


def _offsets(sizes: Sequence[int]) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(sizes)]).astype(np.intp)


def batch_2d(graphs: Sequence[Molecule2D]) -> GraphBatch:
    sizes = [g.num_atoms for g in graphs]
    offsets = _offsets(sizes)
    src, dst, types = [], [], []
    for g, base in zip(graphs, offsets):
        for b in g.bonds:
            src += [base + b.i, base + b.j]
            dst += [base + b.j, base + b.i]
            types += [int(b.bond_type)] * 2
    atoms = [a for g in graphs for a in g.atoms]
    return GraphBatch(
        atomic_numbers=np.array([a.atomic_number for a in atoms], dtype=np.intp),
        tags=np.array([a.tag for a in atoms], dtype=np.intp),
        edge_src=np.array(src, dtype=np.intp),
        edge_dst=np.array(dst, dtype=np.intp),
        edge_types=np.array(types, dtype=np.intp),
        node_graph=np.repeat(np.arange(len(graphs), dtype=np.intp), sizes),
        offsets=offsets,
    )


def batch_3d(views: Sequence[tuple[Sequence[Atom], np.ndarray]], cutoff: float) -> PointBatch:
    """Batch (atoms, coords) pairs, keeping ordered pairs i != j with distance <= cutoff."""
    sizes, numbers, coords_all, pi, pj, pd = [], [], [], [], [], []
    base = 0
    for atoms, coords in views:
        coords = np.asarray(coords, dtype=np.float64)
        if coords.shape != (len(atoms), 3):
            raise RecordError(f"{coords.shape[0]} coordinate rows for {len(atoms)} atoms")
        if not np.all(np.isfinite(coords)):
            raise NonFiniteError("non-finite coordinates")
        n = len(atoms)
        diff = coords[:, None, :] - coords[None, :, :]
        dist = np.sqrt((diff * diff).sum(axis=-1))
        i, j = np.nonzero((dist <= cutoff) & ~np.eye(n, dtype=bool))
        pi.append(i + base)
        pj.append(j + base)
        pd.append(dist[i, j])
        numbers += [a.atomic_number for a in atoms]
        coords_all.append(coords)
        sizes.append(n)
        base += n
    return PointBatch(
        atomic_numbers=np.array(numbers, dtype=np.intp),
        coords=np.concatenate(coords_all) if coords_all else np.zeros((0, 3)),
        pair_i=np.concatenate(pi).astype(np.intp) if pi else np.zeros(0, dtype=np.intp),
        pair_j=np.concatenate(pj).astype(np.intp) if pj else np.zeros(0, dtype=np.intp),
        pair_dist=np.concatenate(pd) if pd else np.zeros(0),
        node_graph=np.repeat(np.arange(len(sizes), dtype=np.intp), sizes),
        offsets=_offsets(sizes),
    )
