"""Graph isomorphism network over the 2D molecular graph."""

from dataclasses import asdict, dataclass

import numpy as np

from molview.autodiff import ParamStore, Tensor, gather_rows, relu, scatter_add_rows
from molview.config import build_dataclass, require
from molview.encoders.base import GraphEncoder, ParamSpec, linear, mlp, mlp_specs
from molview.errors import ShapeError
from molview.molio import ATOM_VOCAB, BOND_VOCAB, TAG_VOCAB, GraphBatch


@dataclass
class GinConfig:
    num_layers: int = 3
    hidden_dim: int = 32
    atom_vocab: int = ATOM_VOCAB
    tag_vocab: int = TAG_VOCAB
    bond_vocab: int = BOND_VOCAB

    def __post_init__(self):
        require(self.num_layers >= 1, f"gin.num_layers must be >= 1, got {self.num_layers}")
        require(self.hidden_dim >= 1, f"gin.hidden_dim must be >= 1, got {self.hidden_dim}")

    @classmethod
    def from_dict(cls, data: dict | None) -> "GinConfig":
        return build_dataclass(cls, data, "gin")

    def to_dict(self) -> dict:
        return asdict(self)


class GinEncoder(GraphEncoder):
    """Sum-aggregating message passing with bond-type messages and mean readout.

    Layer k:  z_i <- MLP_atom(z_i + sum_{j in N(i)} (z_j + MLP_bond(e_ij)))
    """

    prefix = "gin"

    def __init__(self, config: GinConfig):
        self.config = config

    def param_specs(self) -> dict[str, ParamSpec]:
        cfg = self.config
        d = cfg.hidden_dim
        specs = {
            "gin.atom_embed": ParamSpec((cfg.atom_vocab, d), cfg.atom_vocab),
            "gin.tag_embed": ParamSpec((cfg.tag_vocab, d), cfg.tag_vocab),
        }
        for k in range(cfg.num_layers):
            # first bond layer is indexed by bond type, i.e. a one-hot input
            specs.update(mlp_specs(f"gin.layer{k}.bond", cfg.bond_vocab, d, d))
            specs.update(mlp_specs(f"gin.layer{k}.atom", d, d, d))
        return specs

    def _check_vocab(self, batch: GraphBatch) -> None:
        cfg = self.config
        for values, size, what in (
            (batch.atomic_numbers, cfg.atom_vocab, "atomic number"),
            (batch.tags, cfg.tag_vocab, "atom tag"),
            (batch.edge_types, cfg.bond_vocab, "bond type"),
        ):
            if values.size and values.max() >= size:
                raise ShapeError(f"{what} {int(values.max())} outside vocabulary of size {size}")

    def _bond_messages(self, params: ParamStore, k: int, edge_types: np.ndarray) -> Tensor:
        prefix = f"gin.layer{k}.bond"
        hidden = gather_rows(params[f"{prefix}.0.w"], edge_types) + params[f"{prefix}.0.b"]
        return linear(params, f"{prefix}.1", relu(hidden))

    def encode_nodes(self, params: ParamStore, batch: GraphBatch) -> Tensor:
        self._check_vocab(batch)
        n = batch.num_nodes
        z = gather_rows(params["gin.atom_embed"], batch.atomic_numbers)
        z = z + gather_rows(params["gin.tag_embed"], batch.tags)
        last = self.config.num_layers - 1
        for k in range(self.config.num_layers):
            messages = gather_rows(z, batch.edge_src) + self._bond_messages(params, k, batch.edge_types)
            z = mlp(params, f"gin.layer{k}.atom", z + scatter_add_rows(messages, batch.edge_dst, n))
            if k < last:
                z = relu(z)
        return z

    def readout(self, nodes: Tensor, batch: GraphBatch) -> Tensor:
        counts = np.bincount(batch.node_graph, minlength=batch.num_graphs).astype(np.float64)
        if np.any(counts == 0):
            raise ShapeError("cannot take the mean readout of a graph with no atoms")
        summed = scatter_add_rows(nodes, batch.node_graph, batch.num_graphs)
        return summed * Tensor((1.0 / counts)[:, None])
