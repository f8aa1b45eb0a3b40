"""Contrastive objectives between the 2D and 3D views: InfoNCE and EBM-NCE."""

from molview.autodiff import (
    Tensor,
    gather_rows,
    logsumexp,
    matmul,
    reduce_mean,
    reduce_sum,
    softplus,
    transpose,
)
from molview.errors import ShapeError
from molview.objectives.base import BatchReprs, NegativeSampler


def score(hx: Tensor, hy: Tensor) -> Tensor:
    """Inner-product critic <h_x, h_y>; symmetric in its arguments."""
    if hx.shape != hy.shape:
        raise ShapeError(f"score needs equal shapes, got {hx.shape} and {hy.shape}")
    return reduce_sum(hx * hy)


def score_matrix(hx: Tensor, hy: Tensor) -> Tensor:
    """All pairwise scores: entry (i, j) = <hx_i, hy_j>."""
    return matmul(hx, transpose(hy))


def _positive_scores(batch: BatchReprs) -> Tensor:
    return reduce_sum(batch.hx * batch.hy, axis=1)


def infonce_one_sided(batch: BatchReprs) -> Tensor:
    """x-anchored InfoNCE: mean_i [logsumexp_j <x_i, y_j> - <x_i, y_i>]."""
    batch.require_pairs("InfoNCE")
    scores = score_matrix(batch.hx, batch.hy)
    return reduce_mean(logsumexp(scores, axis=1) - _positive_scores(batch))


def infonce(batch: BatchReprs) -> Tensor:
    """Symmetric InfoNCE averaged over the x- and y-anchored directions.

    Every other row of the batch is a negative for each anchor.
    """
    batch.require_pairs("InfoNCE")
    scores = score_matrix(batch.hx, batch.hy)
    positives = _positive_scores(batch)
    x_anchored = reduce_mean(logsumexp(scores, axis=1) - positives)
    y_anchored = reduce_mean(logsumexp(scores, axis=0) - positives)
    return 0.5 * (x_anchored + y_anchored)


def ebm_nce(batch: BatchReprs, sampler: NegativeSampler) -> Tensor:
    """Self-normalized EBM-NCE with one in-batch negative per anchor and direction.

    Binary cross-entropy separating positive pairs from derangement pairs:
    log sigma(s) = -softplus(-s) and log(1 - sigma(s)) = -softplus(s).
    """
    batch.require_pairs("EBM-NCE")
    k = batch.size
    positives = _positive_scores(batch)
    shuffled_x = gather_rows(batch.hx, sampler.derangement(k))
    shuffled_y = gather_rows(batch.hy, sampler.derangement(k))
    negatives_y = reduce_sum(shuffled_x * batch.hy, axis=1)
    negatives_x = reduce_sum(shuffled_y * batch.hx, axis=1)

    fit_positive = reduce_mean(softplus(-positives))
    y_direction = fit_positive + reduce_mean(softplus(negatives_y))
    x_direction = fit_positive + reduce_mean(softplus(negatives_x))
    return 0.5 * (y_direction + x_direction)
