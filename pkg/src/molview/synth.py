"""Synthetic molecules with 3D conformers and geometry-derived labels.

Topologies are chains, rings or branched trees. Tree-shaped molecules are
laid out bond by bond from bond length, bond angle and a torsion per atom,
so an all-anti conformer is the extended zig-zag; rings are regular
polygons. Every conformer gets seeded Gaussian coordinate noise.
"""

import math
from collections import deque
from dataclasses import asdict, dataclass

import numpy as np
from loguru import logger

from molview.autodiff import Rng
from molview.config import build_dataclass, require
from molview.molio import (
    NUM_TAGS,
    Atom,
    Bond,
    BondType,
    Conformer,
    Dataset,
    Molecule2D,
    MoleculeRecord,
)

KINDS = ("chain", "ring", "branched", "mixed")
BOND_LENGTH = 1.5
BOND_ANGLE = math.radians(109.47)
ELEMENTS = (6, 6, 6, 7, 8)
MAX_CHILDREN = 3

# torsion states and their probabilities: anti, gauche+, gauche-
TORSIONS = (math.pi, math.pi / 3, -math.pi / 3)
TORSION_PROBS = (0.7, 0.15, 0.15)
SIBLING_OFFSET = 2 * math.pi / 3

CONTACT_GRAPH_DISTANCE = 4
CONTACT_EUCLIDEAN = 2.5
DIAMETER_CLASSES = 4

# Streams derived from a record's rng
TOPOLOGY, ELEMENT, CONFORMERS, WEIGHTS = range(4)


@dataclass
class SynthSpec:
    kind: str = "mixed"
    count: int = 100
    min_atoms: int = 6
    max_atoms: int = 16
    noise: float = 0.05
    seed: int = 0
    max_conformers: int = 3

    def __post_init__(self):
        require(self.kind in KINDS, f"kind must be one of {KINDS}, got {self.kind!r}")
        require(self.count >= 1, f"count must be >= 1, got {self.count}")
        require(3 <= self.min_atoms <= self.max_atoms,
                f"atom range must satisfy 3 <= min <= max, got [{self.min_atoms}, {self.max_atoms}]")
        require(math.isfinite(self.noise) and self.noise >= 0, f"noise must be >= 0, got {self.noise}")
        require(0 <= self.seed < 2**64, f"seed must be an unsigned 64-bit integer, got {self.seed}")
        require(self.max_conformers >= 1, f"max_conformers must be >= 1, got {self.max_conformers}")

    @classmethod
    def from_dict(cls, data: dict | None) -> "SynthSpec":
        return build_dataclass(cls, data, "synth")

    def to_dict(self) -> dict:
        return asdict(self)


# Graph geometry


def graph_distances(graph: Molecule2D) -> np.ndarray:
    """All-pairs shortest path lengths by BFS; -1 marks unreachable pairs."""
    n = graph.num_atoms
    adjacency = graph.neighbors()
    dist = np.full((n, n), -1, dtype=np.intp)
    for source in range(n):
        dist[source, source] = 0
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for v in adjacency[u]:
                if dist[source, v] < 0:
                    dist[source, v] = dist[source, u] + 1
                    queue.append(v)
    return dist


def graph_diameter(graph: Molecule2D) -> int:
    """Longest shortest path between two atoms."""
    return int(graph_distances(graph).max()) if graph.num_atoms else 0


def pairwise_distances(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def diameter_3d(coords: np.ndarray) -> float:
    """Largest interatomic distance."""
    return float(pairwise_distances(coords).max()) if len(coords) else 0.0


def has_long_range_contact(graph: Molecule2D, coords: np.ndarray) -> bool:
    """True iff two atoms far apart in the graph sit close together in space."""
    far = graph_distances(graph) >= CONTACT_GRAPH_DISTANCE
    near = pairwise_distances(coords) <= CONTACT_EUCLIDEAN
    return bool(np.any(far & near))


def diameter_class(value: float, edges: np.ndarray) -> int:
    return int(np.searchsorted(edges, value, side="right"))


# Topologies


def _tree_parents(kind: str, n: int, rng: Rng) -> list[int]:
    """Parent of every atom but the root (-1); chains attach to the previous atom."""
    parents = [-1]
    children = [0] * n
    for i in range(1, n):
        if kind == "chain":
            p = i - 1
        else:
            open_atoms = [a for a in range(i) if children[a] < MAX_CHILDREN]
            p = open_atoms[int(rng.integers(0, len(open_atoms)))]
        parents.append(p)
        children[p] += 1
    return parents


def _place(a: np.ndarray, b: np.ndarray, c: np.ndarray, torsion: float) -> np.ndarray:
    """Position bonded to ``c`` with angle b-c-new and torsion a-b-c-new."""
    bc = c - b
    bc /= np.linalg.norm(bc)
    normal = np.cross(b - a, bc)
    norm = np.linalg.norm(normal)
    if norm < 1e-9:
        # collinear references: any perpendicular will do
        normal = np.cross(bc, [0.0, 0.0, 1.0] if abs(bc[2]) < 0.9 else [1.0, 0.0, 0.0])
        norm = np.linalg.norm(normal)
    normal /= norm
    m = np.cross(normal, bc)
    local = np.array([
        -BOND_LENGTH * math.cos(BOND_ANGLE),
        BOND_LENGTH * math.sin(BOND_ANGLE) * math.cos(torsion),
        BOND_LENGTH * math.sin(BOND_ANGLE) * math.sin(torsion),
    ])
    return c + local[0] * bc + local[1] * m + local[2] * normal


def tree_coords(parents: list[int], torsions: np.ndarray) -> np.ndarray:
    """Lay out a tree atom by atom; the k-th child of an atom is turned k * 120 deg."""
    n = len(parents)
    # virtual ancestors of the root fix the frame
    virtual = {-1: np.array([-BOND_LENGTH, 0.0, 0.0]), -2: np.array([-2.0, BOND_LENGTH, 0.0])}
    coords = np.zeros((n, 3))

    def at(i: int) -> np.ndarray:
        return virtual[i] if i < 0 else coords[i]

    def parent(i: int) -> int:
        return -2 if i == -1 else parents[i]

    sibling_rank = [0] * n
    seen = [0] * n
    for i in range(1, n):
        sibling_rank[i] = seen[parents[i]]
        seen[parents[i]] += 1
    for i in range(1, n):
        c = parents[i]
        b = parent(c)
        a = parent(b)
        coords[i] = _place(at(a), at(b), at(c), torsions[i] + sibling_rank[i] * SIBLING_OFFSET)
    return coords


def ring_coords(n: int) -> np.ndarray:
    """Regular n-gon in the xy-plane with edge length BOND_LENGTH."""
    radius = BOND_LENGTH / (2.0 * math.sin(math.pi / n))
    angles = 2.0 * math.pi * np.arange(n) / n
    return np.stack([radius * np.cos(angles), radius * np.sin(angles), np.zeros(n)], axis=1)


def _draw_torsions(n: int, rng: Rng, extended: bool) -> np.ndarray:
    if extended:
        return np.full(n, math.pi)
    states = rng.choice(len(TORSIONS), n, replace=True, p=np.array(TORSION_PROBS))
    return np.array([TORSIONS[s] for s in states])


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = np.exp(x - x.max())
    return shifted / shifted.sum()


def make_molecule(kind: str, n: int, index: int, spec: SynthSpec, rng: Rng) -> MoleculeRecord:
    """One unlabeled record of ``kind`` with ``n`` atoms."""
    if kind == "ring":
        parents = None
        bond_pairs = [(i, (i + 1) % n) for i in range(n)]
    else:
        parents = _tree_parents(kind, n, rng.derive(TOPOLOGY))
        bond_pairs = [(parents[i], i) for i in range(1, n)]

    degree = [0] * n
    for i, j in bond_pairs:
        degree[i] += 1
        degree[j] += 1
    elements = rng.derive(ELEMENT).choice(len(ELEMENTS), n, replace=True)
    atoms = tuple(Atom(ELEMENTS[int(e)], min(degree[i], NUM_TAGS - 1)) for i, e in enumerate(elements))
    bond_type = BondType.AROMATIC if kind == "ring" and n in (5, 6) else BondType.SINGLE
    graph = Molecule2D(atoms, tuple(Bond(i, j, bond_type) for i, j in bond_pairs))

    conf_rng = rng.derive(CONFORMERS)
    count = int(conf_rng.integers(1, spec.max_conformers + 1))
    weights = _softmax(rng.derive(WEIGHTS).normal(count))
    conformers = []
    for c in range(count):
        stream = conf_rng.derive(c)
        if parents is None:
            base = ring_coords(n)
        else:
            base = tree_coords(parents, _draw_torsions(n, stream, extended=c == 0))
        coords = base + spec.noise * stream.normal((n, 3)) if spec.noise else base
        conformers.append(Conformer(coords, float(weights[c])))
    return MoleculeRecord(f"{kind}-{index:05d}", graph, tuple(conformers))


def label_records(records: list[MoleculeRecord]) -> tuple[list[MoleculeRecord], np.ndarray]:
    """Attach diameter class, 3D diameter and contact labels from each top-weight conformer.

    Class edges are the quartiles of the set's 3D diameters.
    """
    diameters = np.array([diameter_3d(r.conformers[0].coords) for r in records])
    edges = np.quantile(diameters, np.arange(1, DIAMETER_CLASSES) / DIAMETER_CLASSES)
    labeled = []
    for record, value in zip(records, diameters):
        cls = diameter_class(value, edges)
        contact = int(has_long_range_contact(record.graph, record.conformers[0].coords))
        labels = {"contact": float(contact), "diameter": float(cls), "diameter_3d": float(value)}
        labeled.append(MoleculeRecord(record.id, record.graph, record.conformers, float(cls), labels))
    return labeled, edges


def gen_synthetic(spec: SynthSpec) -> Dataset:
    """Generate ``spec.count`` labeled records; the same spec gives the same dataset."""
    base = Rng(spec.seed)
    records = []
    for index in range(spec.count):
        rng = base.derive(index)
        kind = spec.kind if spec.kind != "mixed" else KINDS[int(rng.integers(0, 3))]
        n = int(rng.integers(spec.min_atoms, spec.max_atoms + 1))
        records.append(make_molecule(kind, n, index, spec, rng))
    records, edges = label_records(records)
    positives = sum(r.labels["contact"] for r in records)
    logger.info("generated {} {} molecules, {:.0%} with long-range contacts",
                len(records), spec.kind, positives / len(records))
    header = {
        "diameter_classes": DIAMETER_CLASSES,
        "diameter_edges": [float(e) for e in edges],
        "spec": spec.to_dict(),
    }
    return Dataset(header, records)
