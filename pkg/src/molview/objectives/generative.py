"""Generative objectives reconstructing one view's representation from the other's.

VRR samples a latent from a diagonal Gaussian per view, projects it back to
the representation space and regresses onto the other view's (detached)
representation. RR is the deterministic special case.
"""

import numpy as np

from molview.autodiff import (
    ParamStore,
    Rng,
    Tensor,
    log,
    reduce_mean,
    reduce_sum,
    square,
    stop_gradient,
)
from molview.encoders.heads import Head, HeadSet, project, reparameterize
from molview.errors import DomainError, ShapeError
from molview.objectives.base import BatchReprs


def kl_diag_gaussian(mu: Tensor, sigma: Tensor) -> Tensor:
    """KL(N(mu, diag sigma^2) || N(0, I)) summed over the last axis.

    A 1-D input gives a scalar; a K x L input gives one value per row.
    """
    if mu.shape != sigma.shape:
        raise ShapeError(f"kl_diag_gaussian: mu {mu.shape} and sigma {sigma.shape} differ")
    if np.any(sigma.data <= 0):
        raise DomainError(f"kl_diag_gaussian needs sigma > 0, got min {float(sigma.data.min())}")
    per_dim = 0.5 * (square(mu) + square(sigma) - 1.0) - log(sigma)
    return reduce_sum(per_dim, axis=len(mu.shape) - 1)


def reconstruction_term(params: ParamStore, q_head: Head, z: Tensor, target: Tensor) -> Tensor:
    """Mean squared distance ||q(z) - SG(target)||^2 over the batch rows."""
    prediction = project(params, q_head, z)
    if prediction.shape != target.shape:
        raise ShapeError(f"projection {prediction.shape} does not match target {target.shape}")
    residual = prediction - stop_gradient(target)
    return reduce_mean(reduce_sum(square(residual), axis=len(residual.shape) - 1))


def vrr(
    params: ParamStore,
    batch: BatchReprs,
    heads: HeadSet,
    beta: float,
    rng: Rng | None,
    epsilon: tuple[np.ndarray, np.ndarray] | None = None,
) -> Tensor:
    """Variational representation reconstruction in both directions.

    ``epsilon`` pins the (x, y) noise draws; otherwise they come from ``rng``.
    """
    if batch.hx.shape[1] != heads.repr_dim:
        raise ShapeError(f"heads expect dim {heads.repr_dim}, representations have {batch.hx.shape[1]}")
    eps_x, eps_y = epsilon if epsilon is not None else (None, None)
    sample_x = reparameterize(params, batch.hx, heads.mu_x, heads.sigma_x, rng, eps_x)
    sample_y = reparameterize(params, batch.hy, heads.mu_y, heads.sigma_y, rng, eps_y)

    reconstruction = 0.5 * (
        reconstruction_term(params, heads.q_x, sample_x.z, batch.hy)
        + reconstruction_term(params, heads.q_y, sample_y.z, batch.hx)
    )
    if beta == 0:
        return reconstruction
    kl = 0.5 * (
        reduce_mean(kl_diag_gaussian(sample_x.mu, sample_x.sigma))
        + reduce_mean(kl_diag_gaussian(sample_y.mu, sample_y.sigma))
    )
    return reconstruction + beta * kl


def rr(params: ParamStore, batch: BatchReprs, heads: HeadSet) -> Tensor:
    """Deterministic reconstruction: VRR with zero noise and no KL term."""
    zeros = np.zeros((batch.size, heads.latent_dim))
    return vrr(params, batch, heads, 0.0, None, epsilon=(zeros, zeros))
