"""
Inversion Losses
Semantic (hinge-floored reconstruction), latent-recovery and adversarial
losses for data-free inverter training.

All norms are unsquared per-sample L2 norms over every non-batch dimension.
"""

import logging
from typing import Callable, Tuple

import torch

from ganinvert.models.schemas import LossWeights

logger = logging.getLogger(__name__)

Network = Callable[[torch.Tensor], torch.Tensor]

ZERO_NORM_THRESHOLD = 1e-12


def safe_l2_norm(v: torch.Tensor) -> torch.Tensor:
    """
    Per-sample L2 norm whose gradient is zero (not NaN) at the origin.

    Args:
        v: Batch (n, ...)

    Returns:
        torch.Tensor: (n,) norms; rows with norm below 1e-12 report 0, non-finite
        rows stay non-finite
    """
    sq = v.reshape(v.shape[0], -1).pow(2).sum(dim=1)
    dead = torch.isfinite(sq) & (sq <= ZERO_NORM_THRESHOLD ** 2)
    live = ~dead
    return torch.where(live, torch.sqrt(torch.where(live, sq, torch.ones_like(sq))), torch.zeros_like(sq))


def semantic_loss(G: Network, I: Network, z: torch.Tensor, eta: float) -> torch.Tensor:
    """
    E_z[ max(‖G(z) − G(I(G(z)))‖₂, η) ].

    Samples whose reconstruction norm is at or below η contribute no gradient.

    Args:
        G: Frozen generator
        I: Inverter
        z: Latent batch (n, d)
        eta: Hinge margin in image L2 units

    Returns:
        torch.Tensor: Scalar loss
    """
    x = G(z)
    return reconstruction_hinge(x, G(I(x)), eta)


def reconstruction_hinge(x: torch.Tensor, recon: torch.Tensor, eta: float) -> torch.Tensor:
    return torch.clamp(safe_l2_norm(x - recon), min=eta).mean()


def latent_loss(G: Network, I: Network, z: torch.Tensor) -> torch.Tensor:
    """E_z[ ‖z − I(G(z))‖₂ ]."""
    return latent_error(z, I(G(z)))


def latent_error(z: torch.Tensor, z_hat: torch.Tensor) -> torch.Tensor:
    return safe_l2_norm(z - z_hat).mean()


def _probability(D: Network, x: torch.Tensor, floor: float) -> torch.Tensor:
    return torch.sigmoid(D(x).reshape(x.shape[0])).clamp(floor, 1.0 - floor)


def discriminator_loss(D: Network, real: torch.Tensor, fake: torch.Tensor, prob_floor: float = 1e-7) -> torch.Tensor:
    """−E[log D(real) + log(1 − D(fake))], D emitting logits."""
    p_real = _probability(D, real, prob_floor)
    p_fake = _probability(D, fake, prob_floor)
    return -(torch.log(p_real) + torch.log1p(-p_fake)).mean()


def inverter_adversarial_loss(D: Network, fake: torch.Tensor, prob_floor: float = 1e-7) -> torch.Tensor:
    """Non-saturating −E[log D(fake)]."""
    return -torch.log(_probability(D, fake, prob_floor)).mean()


def adversarial_loss(
    D: Network,
    G: Network,
    I: Network,
    z: torch.Tensor,
    prob_floor: float = 1e-7,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Adversarial terms for the inversion discriminator.

    G(z) is "real" and its inversion G(I(G(z))) is "fake". D minimizes the
    binary cross-entropy of that split; I minimizes −E[log D(fake)].

    Args:
        D: Inversion discriminator (logit output)
        G: Frozen generator
        I: Inverter
        z: Latent batch
        prob_floor: Probabilities are clamped to [floor, 1 − floor] before log

    Returns:
        Tuple of (loss_for_I, loss_for_D)
    """
    real = G(z)
    fake = G(I(real))
    return (
        inverter_adversarial_loss(D, fake, prob_floor),
        discriminator_loss(D, real, fake, prob_floor),
    )


def total_inverter_loss(weights: LossWeights, adv: torch.Tensor, semantic: torch.Tensor,
                        latent: torch.Tensor) -> torch.Tensor:
    return weights.lambda_adv * adv + weights.lambda_semantic * semantic + weights.lambda_latent * latent
