"""Lower-bound mutual information estimate from the one-sided InfoNCE loss."""

import math

from molview.autodiff import Tensor
from molview.objectives.base import BatchReprs
from molview.objectives.contrastive import infonce_one_sided


def mi_estimate_infonce(batch: BatchReprs) -> Tensor:
    """log K - InfoNCE_x, in nats; never exceeds log K."""
    batch.require_pairs("the InfoNCE MI estimate")
    return math.log(batch.size) - infonce_one_sided(batch)
