"""Self-supervised objectives on the 2D view alone."""

from typing import Callable, Sequence

import numpy as np

from molview.autodiff import Tensor, gather_rows, logsumexp, one_hot, reduce_mean, reduce_sum
from molview.errors import DomainError, ShapeError
from molview.objectives.base import BatchReprs
from molview.objectives.contrastive import infonce


def attr_mask_2d(
    node_reprs: Tensor,
    masked_indices: Sequence[int] | np.ndarray,
    true_atoms: Sequence[int] | np.ndarray,
    classifier: Callable[[Tensor], Tensor],
) -> Tensor:
    """Mean cross-entropy of recovering each masked atom's atomic number.

    ``masked_indices`` index rows of ``node_reprs``; ``classifier`` maps those
    rows to class logits.
    """
    masked = np.asarray(masked_indices, dtype=np.intp).reshape(-1)
    targets = np.asarray(true_atoms, dtype=np.intp).reshape(-1)
    if masked.size == 0:
        raise DomainError("attribute masking needs at least one masked atom")
    if masked.size != targets.size:
        raise ShapeError(f"{masked.size} masked atoms but {targets.size} target classes")
    logits = classifier(gather_rows(node_reprs, masked))
    if len(logits.shape) != 2 or logits.shape[0] != masked.size:
        raise ShapeError(f"classifier returned logits of shape {logits.shape} for {masked.size} atoms")
    picked = reduce_sum(logits * one_hot(targets, logits.shape[1]), axis=1)
    return reduce_mean(logsumexp(logits, axis=1) - picked)


def contrastive_2d(hx_a: Tensor, hx_b: Tensor) -> Tensor:
    """InfoNCE between two independently masked 2D views of the same molecules."""
    return infonce(BatchReprs(hx_a, hx_b))
