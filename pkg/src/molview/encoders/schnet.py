"""Continuous-filter convolution encoder over 3D conformers."""

from dataclasses import asdict, dataclass

import numpy as np

from molview.autodiff import ParamStore, Tensor, gather_rows, matmul, scatter_add_rows
from molview.config import build_dataclass, require
from molview.encoders.base import GraphEncoder, ParamSpec, linear_specs, mlp, mlp_specs
from molview.errors import ShapeError
from molview.molio import ATOM_VOCAB, PointBatch


@dataclass
class SchNetConfig:
    num_layers: int = 3
    hidden_dim: int = 32
    rbf_count: int = 16
    gamma: float = 10.0
    cutoff: float = 8.0
    atom_vocab: int = ATOM_VOCAB

    def __post_init__(self):
        require(self.num_layers >= 1, f"schnet.num_layers must be >= 1, got {self.num_layers}")
        require(self.hidden_dim >= 1, f"schnet.hidden_dim must be >= 1, got {self.hidden_dim}")
        require(self.rbf_count >= 1, f"schnet.rbf_count must be >= 1, got {self.rbf_count}")
        require(self.gamma > 0, f"schnet.gamma must be positive, got {self.gamma}")
        require(self.cutoff > 0, f"schnet.cutoff must be positive, got {self.cutoff}")

    @property
    def centers(self) -> np.ndarray:
        """RBF centers evenly spaced on [0, cutoff]."""
        return np.linspace(0.0, self.cutoff, self.rbf_count)

    @classmethod
    def from_dict(cls, data: dict | None) -> "SchNetConfig":
        return build_dataclass(cls, data, "schnet")

    def to_dict(self) -> dict:
        return asdict(self)


def rbf_expand(distances: np.ndarray, centers: np.ndarray, gamma: float) -> np.ndarray:
    """exp(-gamma (d - mu_k)^2) for every distance and center."""
    delta = distances[:, None] - centers[None, :]
    return np.exp(-gamma * delta * delta)


class SchNetEncoder(GraphEncoder):
    """Interaction blocks z_i <- z_i + MLP(sum_j z_j * W(rbf(|r_i - r_j|))) with sum readout.

    Filters expand each pair distance over the RBF centers and mix them with
    a learned linear map. Pairs beyond the cutoff are never formed.
    """

    prefix = "schnet"

    def __init__(self, config: SchNetConfig):
        self.config = config

    def param_specs(self) -> dict[str, ParamSpec]:
        cfg = self.config
        d = cfg.hidden_dim
        specs = {"schnet.atom_embed": ParamSpec((cfg.atom_vocab, d), cfg.atom_vocab)}
        for k in range(cfg.num_layers):
            specs.update(linear_specs(f"schnet.layer{k}.filter", cfg.rbf_count, d))
            specs.update(mlp_specs(f"schnet.layer{k}.update", d, d, d))
        specs.update(mlp_specs("schnet.output", d, d, d))
        return specs

    def encode_nodes(self, params: ParamStore, batch: PointBatch) -> Tensor:
        cfg = self.config
        if batch.atomic_numbers.size and batch.atomic_numbers.max() >= cfg.atom_vocab:
            raise ShapeError(
                f"atomic number {int(batch.atomic_numbers.max())} outside vocabulary "
                f"of size {cfg.atom_vocab}"
            )
        rbf = Tensor(rbf_expand(batch.pair_dist, cfg.centers, cfg.gamma))
        n = batch.num_nodes
        z = gather_rows(params["schnet.atom_embed"], batch.atomic_numbers)
        for k in range(cfg.num_layers):
            prefix = f"schnet.layer{k}"
            filters = matmul(rbf, params[f"{prefix}.filter.w"]) + params[f"{prefix}.filter.b"]
            messages = gather_rows(z, batch.pair_j) * filters
            z = z + mlp(params, f"{prefix}.update", scatter_add_rows(messages, batch.pair_i, n))
        return mlp(params, "schnet.output", z)

    def readout(self, nodes: Tensor, batch: PointBatch) -> Tensor:
        return scatter_add_rows(nodes, batch.node_graph, batch.num_graphs)
