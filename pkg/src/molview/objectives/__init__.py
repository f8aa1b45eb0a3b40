"""Self-supervised objectives over paired 2D/3D representations."""

from molview.objectives.base import (
    CONTRASTIVE_KINDS,
    GENERATIVE_KINDS,
    VARIANTS,
    BatchReprs,
    LossConfig,
    NegativeSampler,
)
from molview.objectives.combined import AuxInputs, combined_loss
from molview.objectives.contrastive import ebm_nce, infonce, infonce_one_sided, score, score_matrix
from molview.objectives.generative import kl_diag_gaussian, reconstruction_term, rr, vrr
from molview.objectives.mutual_info import mi_estimate_infonce
from molview.objectives.ssl2d import attr_mask_2d, contrastive_2d

__all__ = [
    "AuxInputs",
    "BatchReprs",
    "CONTRASTIVE_KINDS",
    "GENERATIVE_KINDS",
    "LossConfig",
    "NegativeSampler",
    "VARIANTS",
    "attr_mask_2d",
    "combined_loss",
    "contrastive_2d",
    "ebm_nce",
    "infonce",
    "infonce_one_sided",
    "kl_diag_gaussian",
    "mi_estimate_infonce",
    "reconstruction_term",
    "rr",
    "score",
    "score_matrix",
    "vrr",
]
