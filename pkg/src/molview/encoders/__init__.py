"""2D and 3D molecular encoders, projection heads and the model bundle."""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from molview.autodiff import ParamStore, Rng, Tensor, reshape
from molview.encoders.base import GraphEncoder, ParamSpec, initialize, linear, mlp
from molview.encoders.gin import GinConfig, GinEncoder
from molview.encoders.heads import (
    Head,
    HeadConfig,
    HeadSet,
    LatentSample,
    project,
    reparameterize,
)
from molview.encoders.schnet import SchNetConfig, SchNetEncoder, rbf_expand
from molview.errors import ShapeError
from molview.molio import Atom, Molecule2D, View3D, batch_2d, batch_3d


@dataclass
class EncoderModel:
    """Both encoders, the head set and the ParamStore holding all of their weights."""
    gin: GinEncoder
    schnet: SchNetEncoder
    heads: HeadSet
    params: ParamStore

    @classmethod
    def create(
        cls,
        gin: GinConfig,
        schnet: SchNetConfig,
        heads: HeadConfig,
        rng: Rng,
    ) -> "EncoderModel":
        """Build a model with freshly initialized parameters."""
        model = cls.empty(gin, schnet, heads)
        initialize(model.params, model.param_specs(), rng)
        return model

    @classmethod
    def empty(cls, gin: GinConfig, schnet: SchNetConfig, heads: HeadConfig) -> "EncoderModel":
        if gin.hidden_dim != schnet.hidden_dim:
            raise ShapeError(
                f"2D and 3D representation dims differ: {gin.hidden_dim} vs {schnet.hidden_dim}"
            )
        d = gin.hidden_dim
        head_set = HeadSet(d, heads.resolve_latent(d), heads.num_classes)
        return cls(GinEncoder(gin), SchNetEncoder(schnet), head_set, ParamStore())

    def param_specs(self) -> dict[str, ParamSpec]:
        return {**self.gin.param_specs(), **self.schnet.param_specs(), **self.heads.param_specs()}

    @property
    def repr_dim(self) -> int:
        return self.gin.config.hidden_dim

    def encode_2d(self, graphs: Sequence[Molecule2D]) -> tuple[Tensor, Tensor, np.ndarray]:
        """Node representations, graph representations and node offsets for 2D graphs."""
        batch = batch_2d(graphs)
        nodes, graph_reprs = self.gin.encode(self.params, batch)
        return nodes, graph_reprs, batch.offsets

    def encode_3d(self, views: Sequence[View3D], center: bool = False) -> Tensor:
        """Graph representations for 3D views."""
        pairs = []
        for view in views:
            coords = view.conformer.coords
            pairs.append((view.atoms, coords - coords.mean(axis=0) if center else coords))
        batch = batch_3d(pairs, self.schnet.config.cutoff)
        return self.schnet.encode(self.params, batch)[1]


def gin_forward(model: EncoderModel, mol2d: Molecule2D) -> tuple[Tensor, Tensor]:
    """Node representations (n x d) and mean-pooled h_x (d) for one molecule."""
    nodes, graph_reprs, _ = model.encode_2d([mol2d])
    return nodes, reshape(graph_reprs, (model.repr_dim,))


def schnet_forward(model: EncoderModel, atoms: Sequence[Atom], coords: np.ndarray) -> Tensor:
    """Sum-pooled h_y (d) for one molecule's atoms at ``coords``."""
    batch = batch_3d([(tuple(atoms), coords)], model.schnet.config.cutoff)
    return reshape(model.schnet.encode(model.params, batch)[1], (model.repr_dim,))


__all__ = [
    "EncoderModel",
    "GinConfig",
    "GinEncoder",
    "GraphEncoder",
    "Head",
    "HeadConfig",
    "HeadSet",
    "LatentSample",
    "ParamSpec",
    "SchNetConfig",
    "SchNetEncoder",
    "gin_forward",
    "initialize",
    "linear",
    "mlp",
    "project",
    "rbf_expand",
    "reparameterize",
    "schnet_forward",
]
