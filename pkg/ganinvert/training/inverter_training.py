"""
Data-Free Inverter Training
Trains an inverter I against a frozen generator G using only latents
z ~ N(0, I_d). A fresh inversion discriminator D learns to separate G(z)
from G(I(G(z))); I minimizes λ1·adv + λ2·semantic + λ3·latent.
"""

import logging
from typing import Optional, Tuple

import torch
from tqdm import tqdm

from ganinvert.middleware.error_handler import SpecError, TrainingDivergenceError
from ganinvert.models.networks import ModelHandle, build_model, mirror_spec, pair_with
from ganinvert.models.schemas import (
    InverterTrainConfig,
    NetworkRole,
    NetworkSpec,
    TrainingLog,
    canonical_hash,
)
from ganinvert.training.losses import (
    discriminator_loss,
    inverter_adversarial_loss,
    latent_error,
    reconstruction_hinge,
    total_inverter_loss,
)
from ganinvert.utils.helpers import derive_seed, sample_latents, torch_generator

logger = logging.getLogger(__name__)


def _check_finite(value: torch.Tensor, iteration: int, component: str) -> None:
    if not torch.isfinite(value).all():
        raise TrainingDivergenceError(
            f"non-finite {component} loss at iteration {iteration}",
            iteration=iteration,
            component=component,
        )


def train_inverter(
    G: ModelHandle,
    cfg: InverterTrainConfig,
    inverter_spec: Optional[NetworkSpec] = None,
    discriminator_spec: Optional[NetworkSpec] = None,
) -> Tuple[ModelHandle, ModelHandle, TrainingLog]:
    """
    Train an inverter for a frozen generator without any dataset.

    Each iteration draws a fresh latent batch from a dedicated seeded stream,
    takes one discriminator step, then one inverter step.

    Args:
        G: Pre-trained generator (frozen in place)
        cfg: Loss weights, margin, optimizer and schedule
        inverter_spec: Inverter ladder (mirror of G's by default)
        discriminator_spec: Inversion-discriminator ladder (mirror of G's by default)

    Returns:
        Tuple of (inverter paired with G, inversion discriminator, training log)

    Raises:
        SpecError: G has no spec and no inverter spec was given
        TrainingDivergenceError: Non-finite loss (names iteration and component)
    """
    if G.spec is None and (inverter_spec is None or discriminator_spec is None):
        raise SpecError("generator has no spec; pass inverter and discriminator specs explicitly")
    G.freeze()
    inverter_spec = inverter_spec or mirror_spec(G.spec)
    discriminator_spec = discriminator_spec or mirror_spec(G.spec, role=NetworkRole.DISCRIMINATOR)
    latent_dim = inverter_spec.latent_dim
    weights = cfg.resolve_weights(tuple(inverter_spec.image_shape))
    dtype = G.dtype

    I = build_model(inverter_spec, seed=derive_seed(cfg.seed, "inverter"), dtype=dtype)
    D = build_model(discriminator_spec, seed=derive_seed(cfg.seed, "inversion_discriminator"), dtype=dtype)
    betas = (cfg.beta1, cfg.beta2)
    opt_i = torch.optim.Adam(I.module.parameters(), lr=cfg.learning_rate, betas=betas)
    opt_d = torch.optim.Adam(D.module.parameters(), lr=cfg.learning_rate, betas=betas)
    latent_stream = torch_generator(cfg.seed, "latent")

    config_hash = canonical_hash({"config": cfg.model_dump(mode="json"), "generator": G.spec_hash})
    log = TrainingLog(run="inverter", config_hash=config_hash, seed=cfg.seed)
    logger.info(
        f"Training inverter: {cfg.iterations} iterations, λ=({weights.lambda_adv}, "
        f"{weights.lambda_semantic}, {weights.lambda_latent}), η={weights.eta:.4f}"
    )

    for it in tqdm(range(1, cfg.iterations + 1), desc="inverter", disable=None):
        z = sample_latents(cfg.batch_size, latent_dim, latent_stream, dtype)
        with torch.no_grad():
            real = G(z)

        z_hat = I(real)
        fake = G(z_hat)

        loss_d = discriminator_loss(D, real, fake.detach(), cfg.prob_floor)
        _check_finite(loss_d, it, "discriminator")
        opt_d.zero_grad()
        loss_d.backward()
        opt_d.step()

        adv = inverter_adversarial_loss(D, fake, cfg.prob_floor)
        semantic = reconstruction_hinge(real, fake, weights.eta)
        latent = latent_error(z, z_hat)
        for name, value in (("adversarial", adv), ("semantic", semantic), ("latent", latent)):
            _check_finite(value, it, name)
        total = total_inverter_loss(weights, adv, semantic, latent)
        opt_i.zero_grad()
        total.backward()
        opt_i.step()

        if it % cfg.record_interval == 0 or it == cfg.iterations:
            log.entries.append({
                "iteration": float(it),
                "loss_d": loss_d.item(),
                "adversarial": adv.item(),
                "semantic": semantic.item(),
                "latent": latent.item(),
                "total": total.item(),
                "lambda_adv": weights.lambda_adv,
                "lambda_semantic": weights.lambda_semantic,
                "lambda_latent": weights.lambda_latent,
            })
        if it % cfg.log_interval == 0:
            logger.info(
                f"[inverter {it}/{cfg.iterations}] d={loss_d.item():.4f} adv={adv.item():.4f} "
                f"sem={semantic.item():.4f} lat={latent.item():.4f} total={total.item():.4f}"
            )

    for handle in (I, D):
        handle.metadata.update({"training_config_hash": config_hash, "seed": cfg.seed})
        handle.freeze()
    pair_with(I, G)
    return I, D, log
