"""Projection heads of the reconstruction objectives and the masked-atom classifier."""

from dataclasses import asdict, dataclass, field

import numpy as np

from molview.autodiff import ParamStore, Rng, Tensor, reshape
from molview.config import build_dataclass, require
from molview.encoders.base import ParamSpec, linear, linear_specs, mlp, mlp_specs
from molview.molio import ATOM_VOCAB


@dataclass
class HeadConfig:
    """``latent_dim`` of 0 means half the representation dim (at least 1)."""
    latent_dim: int = 0
    num_classes: int = ATOM_VOCAB

    def __post_init__(self):
        require(self.latent_dim >= 0, f"heads.latent_dim must be >= 0, got {self.latent_dim}")
        require(self.num_classes >= 2, f"heads.num_classes must be >= 2, got {self.num_classes}")

    def resolve_latent(self, repr_dim: int) -> int:
        return self.latent_dim or max(1, repr_dim // 2)

    @classmethod
    def from_dict(cls, data: dict | None) -> "HeadConfig":
        return build_dataclass(cls, data, "heads")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Head:
    """A 2-layer MLP under ``prefix``; ``final`` is applied to its output."""
    prefix: str
    d_in: int
    d_out: int
    final: str | None = None

    def specs(self) -> dict[str, ParamSpec]:
        return mlp_specs(self.prefix, self.d_in, self.d_out, self.d_out)

    def __call__(self, params: ParamStore, x: Tensor) -> Tensor:
        if len(x.shape) == 1:
            return reshape(mlp(params, self.prefix, reshape(x, (1, x.shape[0])), self.final), (self.d_out,))
        return mlp(params, self.prefix, x, self.final)


@dataclass
class LatentSample:
    """z = mu + sigma * epsilon, with epsilon a frozen standard-normal draw."""
    z: Tensor
    mu: Tensor
    sigma: Tensor
    epsilon: np.ndarray


@dataclass(frozen=True)
class HeadSet:
    """mu/sigma heads map representations to the latent space, q heads map back."""
    repr_dim: int
    latent_dim: int
    num_classes: int = ATOM_VOCAB
    mu_x: Head = field(init=False)
    sigma_x: Head = field(init=False)
    mu_y: Head = field(init=False)
    sigma_y: Head = field(init=False)
    q_x: Head = field(init=False)
    q_y: Head = field(init=False)

    def __post_init__(self):
        d, lat = self.repr_dim, self.latent_dim
        object.__setattr__(self, "mu_x", Head("heads.mu_x", d, lat))
        object.__setattr__(self, "sigma_x", Head("heads.sigma_x", d, lat, "softplus"))
        object.__setattr__(self, "mu_y", Head("heads.mu_y", d, lat))
        object.__setattr__(self, "sigma_y", Head("heads.sigma_y", d, lat, "softplus"))
        object.__setattr__(self, "q_x", Head("heads.q_x", lat, d))
        object.__setattr__(self, "q_y", Head("heads.q_y", lat, d))

    @property
    def heads(self) -> tuple[Head, ...]:
        return (self.mu_x, self.sigma_x, self.mu_y, self.sigma_y, self.q_x, self.q_y)

    def param_specs(self) -> dict[str, ParamSpec]:
        specs: dict[str, ParamSpec] = {}
        for head in self.heads:
            specs.update(head.specs())
        specs.update(linear_specs("heads.attr_mask", self.repr_dim, self.num_classes))
        return specs

    def classify_atoms(self, params: ParamStore, nodes: Tensor) -> Tensor:
        """Atomic-number logits for node representations."""
        return linear(params, "heads.attr_mask", nodes)


def reparameterize(
    params: ParamStore,
    h: Tensor,
    mu_head: Head,
    sigma_head: Head,
    rng: Rng | None,
    epsilon: np.ndarray | None = None,
) -> LatentSample:
    """Sample z = mu(h) + sigma(h) * eps; gradients reach mu and sigma, not eps.

    ``epsilon`` overrides the draw from ``rng`` (used to pin or zero the noise).
    """
    mu = mu_head(params, h)
    sigma = sigma_head(params, h)
    if epsilon is None:
        epsilon = rng.normal(mu.shape)
    epsilon = np.asarray(epsilon, dtype=np.float64)
    return LatentSample(mu + sigma * Tensor(epsilon), mu, sigma, epsilon)


def project(params: ParamStore, q_head: Head, z: Tensor) -> Tensor:
    return q_head(params, z)
