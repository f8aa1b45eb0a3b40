"""Base encoder class and the dense layer helpers shared by all encoders."""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any

import numpy as np

from molview.autodiff import (
    ParamStore,
    Rng,
    Tensor,
    matmul,
    relu,
    softplus,
    uniform_fan_in,
)


@dataclass(frozen=True)
class ParamSpec:
    """Shape of one parameter and the fan-in used to initialize it."""
    shape: tuple[int, ...]
    fan_in: int
    bias: bool = False


def linear_specs(prefix: str, d_in: int, d_out: int) -> dict[str, ParamSpec]:
    return {
        f"{prefix}.w": ParamSpec((d_in, d_out), d_in),
        f"{prefix}.b": ParamSpec((d_out,), d_in, bias=True),
    }


def mlp_specs(prefix: str, d_in: int, d_hidden: int, d_out: int) -> dict[str, ParamSpec]:
    """Two linear layers with a relu between them."""
    return {
        **linear_specs(f"{prefix}.0", d_in, d_hidden),
        **linear_specs(f"{prefix}.1", d_hidden, d_out),
    }


def initialize(params: ParamStore, specs: dict[str, ParamSpec], rng: Rng) -> None:
    """Add ``specs`` to ``params`` in lexicographic name order.

    Weights are uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); biases start at zero.
    """
    for name in sorted(specs):
        spec = specs[name]
        if spec.bias:
            params.add(name, np.zeros(spec.shape))
        else:
            params.add(name, uniform_fan_in(rng, spec.shape, spec.fan_in))


def linear(params: ParamStore, prefix: str, x: Tensor) -> Tensor:
    return matmul(x, params[f"{prefix}.w"]) + params[f"{prefix}.b"]


POSITIVE_FLOOR = 1e-12


def mlp(params: ParamStore, prefix: str, x: Tensor, final: str | None = None) -> Tensor:
    """Two linear layers with a relu between; ``final`` is "relu", "softplus" or None.

    The softplus output never drops below ``POSITIVE_FLOOR``.
    """
    out = linear(params, f"{prefix}.1", relu(linear(params, f"{prefix}.0", x)))
    if final == "relu":
        return relu(out)
    if final == "softplus":
        return softplus(out) + POSITIVE_FLOOR
    return out


class GraphEncoder(ABC):
    """Abstract encoder owning the parameters under ``prefix`` in a ParamStore."""

    prefix: str

    @abstractmethod
    def param_specs(self) -> dict[str, ParamSpec]:
        """Shapes of every parameter this encoder reads."""
        pass

    @abstractmethod
    def encode_nodes(self, params: ParamStore, batch: Any) -> Tensor:
        """Per-node representations for a batch."""
        pass

    @abstractmethod
    def readout(self, nodes: Tensor, batch: Any) -> Tensor:
        """Per-graph representations from node representations."""
        pass

    def encode(self, params: ParamStore, batch: Any) -> tuple[Tensor, Tensor]:
        """Node and graph representations for a batch."""
        nodes = self.encode_nodes(params, batch)
        return nodes, self.readout(nodes, batch)
