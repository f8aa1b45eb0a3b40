"""Weighted sum of the contrastive, generative and 2D-only objectives."""

from dataclasses import dataclass
from functools import partial

import numpy as np

from molview.autodiff import ParamStore, Rng, Tensor
from molview.encoders.heads import HeadSet
from molview.errors import ConfigError
from molview.objectives.base import BatchReprs, LossConfig, NegativeSampler
from molview.objectives.contrastive import ebm_nce, infonce
from molview.objectives.generative import rr, vrr
from molview.objectives.ssl2d import attr_mask_2d, contrastive_2d

# Sub-stream keys under the per-step rng
NEGATIVES = 0
LATENT_NOISE = 1


@dataclass
class AuxInputs:
    """Extra 2D inputs needed by the G and C variants.

    ``masked_indices`` index rows of ``node_reprs`` (batched node order) and
    ``true_atoms`` holds their unmasked atomic numbers. ``hx_alt`` is a second,
    independently masked 2D view of the same molecules.
    """
    node_reprs: Tensor | None = None
    masked_indices: np.ndarray | None = None
    true_atoms: np.ndarray | None = None
    hx_alt: Tensor | None = None


def contrastive_term(batch: BatchReprs, kind: str, rng: Rng) -> Tensor:
    if kind == "infonce":
        return infonce(batch)
    return ebm_nce(batch, NegativeSampler(rng.derive(NEGATIVES)))


def generative_term(
    params: ParamStore, batch: BatchReprs, heads: HeadSet, kind: str, beta: float, rng: Rng
) -> Tensor:
    if kind == "vrr":
        return vrr(params, batch, heads, beta, rng.derive(LATENT_NOISE))
    return rr(params, batch, heads)


def ssl2d_term(
    params: ParamStore, batch: BatchReprs, heads: HeadSet, variant: str, aux: AuxInputs | None
) -> Tensor:
    if variant == "G":
        if aux is None or aux.node_reprs is None or aux.masked_indices is None or aux.true_atoms is None:
            raise ConfigError("variant 'G' needs node representations, masked indices and true atoms")
        classifier = partial(heads.classify_atoms, params)
        return attr_mask_2d(aux.node_reprs, aux.masked_indices, aux.true_atoms, classifier)
    if aux is None or aux.hx_alt is None:
        raise ConfigError("variant 'C' needs a second masked 2D view (hx_alt)")
    return contrastive_2d(batch.hx, aux.hx_alt)


def combined_loss(
    params: ParamStore,
    batch: BatchReprs,
    heads: HeadSet,
    config: LossConfig,
    rng: Rng,
    aux: AuxInputs | None = None,
) -> tuple[Tensor, dict[str, float]]:
    """alpha1 * L_C + alpha2 * L_G (+ alpha3 * L_2D for variants G and C).

    Returns the total loss and the unweighted value of every active term.
    """
    total = Tensor(0.0)
    terms: dict[str, float] = {}
    if config.contrastive_kind != "none":
        term = contrastive_term(batch, config.contrastive_kind, rng)
        terms[config.contrastive_kind] = term.item()
        total = total + config.alpha1 * term
    if config.generative_kind != "none":
        term = generative_term(params, batch, heads, config.generative_kind, config.beta, rng)
        terms[config.generative_kind] = term.item()
        total = total + config.alpha2 * term
    if config.variant != "plain":
        term = ssl2d_term(params, batch, heads, config.variant, aux)
        terms["attr_mask" if config.variant == "G" else "contrastive_2d"] = term.item()
        total = total + config.alpha3 * term
    return total, terms
