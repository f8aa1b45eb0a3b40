"""Loss configuration, paired batch representations and negative sampling."""

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from molview.autodiff import Rng, Tensor
from molview.config import build_dataclass, require
from molview.errors import ConfigError, DomainError, ShapeError

CONTRASTIVE_KINDS = ("infonce", "ebm_nce", "none")
GENERATIVE_KINDS = ("vrr", "rr", "none")
VARIANTS = ("plain", "G", "C")


@dataclass
class LossConfig:
    """Objective selection and weights: alpha1 * L_C + alpha2 * L_G (+ alpha3 * L_2D)."""
    contrastive_kind: str = "ebm_nce"
    generative_kind: str = "vrr"
    alpha1: float = 1.0
    alpha2: float = 1.0
    alpha3: float = 1.0
    beta: float = 1.0
    variant: str = "plain"

    def __post_init__(self):
        require(self.contrastive_kind in CONTRASTIVE_KINDS,
                f"loss.contrastive_kind must be one of {CONTRASTIVE_KINDS}, got {self.contrastive_kind!r}")
        require(self.generative_kind in GENERATIVE_KINDS,
                f"loss.generative_kind must be one of {GENERATIVE_KINDS}, got {self.generative_kind!r}")
        require(self.variant in VARIANTS,
                f"loss.variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("alpha1", "alpha2", "alpha3"):
            value = getattr(self, name)
            require(math.isfinite(value) and value >= 0, f"loss.{name} must be finite and >= 0, got {value}")
        require(math.isfinite(self.beta) and self.beta >= 0, f"loss.beta must be finite and >= 0, got {self.beta}")

    @property
    def enabled(self) -> bool:
        return self.contrastive_kind != "none" or self.generative_kind != "none" or self.variant != "plain"

    def select(self, name: str) -> "LossConfig":
        """Apply a loss selection such as ``infonce``, ``vrr``, ``ebm_nce+rr`` or ``combined``.

        A single kind disables the other family; ``combined`` keeps the
        configured kinds and fills a disabled family with ebm_nce or vrr.
        """
        if name == "combined":
            return replace(
                self,
                contrastive_kind="ebm_nce" if self.contrastive_kind == "none" else self.contrastive_kind,
                generative_kind="vrr" if self.generative_kind == "none" else self.generative_kind,
            )
        contrastive, generative = "none", "none"
        for part in name.split("+"):
            if part in CONTRASTIVE_KINDS[:-1] and contrastive == "none":
                contrastive = part
            elif part in GENERATIVE_KINDS[:-1] and generative == "none":
                generative = part
            elif part != "none":
                raise ConfigError(f"invalid loss selection {name!r}")
        return replace(self, contrastive_kind=contrastive, generative_kind=generative)

    @classmethod
    def from_dict(cls, data: dict | None) -> "LossConfig":
        return build_dataclass(cls, data, "loss")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BatchReprs:
    """Row i of ``hx`` (2D) and row i of ``hy`` (3D) describe the same molecule."""
    hx: Tensor
    hy: Tensor

    def __post_init__(self):
        if len(self.hx.shape) != 2 or self.hx.shape != self.hy.shape:
            raise ShapeError(f"paired representations must be equal K x d matrices, "
                             f"got {self.hx.shape} and {self.hy.shape}")

    @property
    def size(self) -> int:
        return self.hx.shape[0]

    def require_pairs(self, what: str) -> None:
        if self.size < 2:
            raise DomainError(f"{what} needs a batch of K >= 2 pairs, got K={self.size}")


class NegativeSampler:
    """In-batch negatives: a random derangement gives one negative per anchor."""

    def __init__(self, rng: Rng):
        self.rng = rng

    def derangement(self, k: int) -> np.ndarray:
        """Uniform permutation of range(k) with no fixed point."""
        if k < 2:
            raise DomainError(f"a derangement needs k >= 2, got {k}")
        identity = np.arange(k)
        while True:
            perm = self.rng.permutation(k)
            if not np.any(perm == identity):
                return perm
