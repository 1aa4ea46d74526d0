"""
GAN and Classifier Pre-training
Produces the fixtures the defense assumes as given: a generator /
discriminator pair trained with the non-saturating cross-entropy loss, and a
classifier f = C ∘ Φ.
"""

import logging
import math
from typing import Iterator, Optional, Tuple

import torch
import torch.nn as nn
from torch.utils.data import DataLoader, TensorDataset
from tqdm import tqdm

from ganinvert.middleware.error_handler import DatasetError, SpecError, TrainingDivergenceError
from ganinvert.models.networks import (
    ModelHandle,
    build_model,
    classifier_logits,
    default_classifier_spec,
    default_generator_spec,
    mirror_spec,
)
from ganinvert.models.schemas import (
    ClassifierTrainConfig,
    GanTrainConfig,
    NetworkRole,
    NetworkSpec,
    TrainingLog,
    canonical_hash,
)
from ganinvert.storage.datasets import LabeledImageSet
from ganinvert.utils.helpers import derive_seed, sample_latents, torch_generator

logger = logging.getLogger(__name__)


def _batches(data: LabeledImageSet, batch_size: int, seed: int, num_workers: int,
             dtype: torch.dtype) -> Iterator[Tuple[torch.Tensor, torch.Tensor]]:
    """Endless seeded stream of shuffled minibatches."""
    dataset = TensorDataset(data.to_tensor(dtype), data.label_tensor())
    loader = DataLoader(
        dataset,
        batch_size=min(batch_size, len(dataset)),
        shuffle=True,
        drop_last=True,
        num_workers=num_workers,
        generator=torch_generator(seed, "batches"),
    )
    while True:
        yield from loader


def _check_finite(value: torch.Tensor, iteration: int, component: str) -> None:
    if not torch.isfinite(value).all():
        raise TrainingDivergenceError(
            f"non-finite {component} loss at iteration {iteration}",
            iteration=iteration,
            component=component,
        )


def train_gan(
    data: LabeledImageSet,
    cfg: GanTrainConfig,
    generator_spec: Optional[NetworkSpec] = None,
    dtype: torch.dtype = torch.float32,
) -> Tuple[ModelHandle, ModelHandle, TrainingLog]:
    """
    Train a generator / discriminator pair.

    One discriminator step then one generator step per iteration, both with
    Adam(β1, β2). The generator uses the non-saturating loss −log D(G(z)).

    Args:
        data: Training images in [-1, 1]
        cfg: GAN hyperparameters
        generator_spec: Generator ladder (DCGAN-style default for the data shape)
        dtype: Parameter dtype

    Returns:
        Tuple of (frozen generator, frozen discriminator, training log)

    Raises:
        DatasetError: Empty dataset
        SpecError: Generator spec incompatible with the data shape
        TrainingDivergenceError: Non-finite loss
    """
    if len(data) == 0:
        raise DatasetError("cannot train a GAN on an empty dataset")
    generator_spec = generator_spec or default_generator_spec(cfg.latent_dim, data.image_shape)
    if tuple(generator_spec.image_shape) != data.image_shape:
        raise SpecError(f"generator emits {generator_spec.image_shape}, data is {data.image_shape}")

    config_hash = canonical_hash(cfg.model_dump(mode="json"))
    G = build_model(generator_spec, seed=derive_seed(cfg.seed, "generator"), dtype=dtype)
    D = build_model(mirror_spec(generator_spec, role=NetworkRole.DISCRIMINATOR),
                    seed=derive_seed(cfg.seed, "discriminator"), dtype=dtype)

    opt_g = torch.optim.Adam(G.module.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2))
    opt_d = torch.optim.Adam(D.module.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2))
    bce = nn.BCEWithLogitsLoss()
    latent_stream = torch_generator(cfg.seed, "latent")
    batches = _batches(data, cfg.batch_size, cfg.seed, cfg.num_workers, dtype)

    log = TrainingLog(run="gan", config_hash=config_hash, seed=cfg.seed)
    logger.info(f"Training GAN: {cfg.iterations} iterations, batch {cfg.batch_size}, d={generator_spec.latent_dim}")

    for it in tqdm(range(1, cfg.iterations + 1), desc="gan", disable=None):
        real, _ = next(batches)
        n = real.shape[0]
        ones = torch.ones(n, dtype=dtype)
        zeros = torch.zeros(n, dtype=dtype)

        # Discriminator
        z = sample_latents(n, generator_spec.latent_dim, latent_stream, dtype)
        fake = G(z)
        d_real = D(real).reshape(n)
        d_fake = D(fake.detach()).reshape(n)
        loss_d = bce(d_real, ones) + bce(d_fake, zeros)
        _check_finite(loss_d, it, "discriminator")
        opt_d.zero_grad()
        loss_d.backward()
        opt_d.step()

        # Generator
        loss_g = bce(D(fake).reshape(n), ones)
        _check_finite(loss_g, it, "generator")
        opt_g.zero_grad()
        loss_g.backward()
        opt_g.step()

        entry = {
            "iteration": float(it),
            "loss_d": loss_d.item(),
            "loss_g": loss_g.item(),
            "d_real": torch.sigmoid(d_real).mean().item(),
            "d_fake": torch.sigmoid(d_fake).mean().item(),
        }
        log.entries.append(entry)
        if it % cfg.log_interval == 0:
            logger.info(
                f"[gan {it}/{cfg.iterations}] loss_d={entry['loss_d']:.4f} loss_g={entry['loss_g']:.4f} "
                f"D(x)={entry['d_real']:.3f} D(G(z))={entry['d_fake']:.3f}"
            )

    for handle in (G, D):
        handle.metadata.update({"training_config_hash": config_hash, "seed": cfg.seed})
        handle.freeze()
    return G, D, log


def train_classifier(
    data: LabeledImageSet,
    cfg: ClassifierTrainConfig,
    spec: Optional[NetworkSpec] = None,
    dtype: torch.dtype = torch.float32,
) -> Tuple[ModelHandle, TrainingLog]:
    """
    Train a classifier f = C ∘ Φ with cross-entropy and Adam.

    Args:
        data: Labeled training images
        cfg: Classifier hyperparameters
        spec: Classifier ladder (small conv net / MLP by default)
        dtype: Parameter dtype

    Returns:
        Tuple of (frozen classifier, training log)
    """
    if len(data) == 0:
        raise DatasetError("cannot train a classifier on an empty dataset")
    spec = spec or default_classifier_spec(data.image_shape, num_classes=max(data.num_classes, 2))
    if tuple(spec.image_shape) != data.image_shape:
        raise SpecError(f"classifier expects {spec.image_shape}, data is {data.image_shape}")

    config_hash = canonical_hash(cfg.model_dump(mode="json"))
    f = build_model(spec, seed=derive_seed(cfg.seed, "classifier"), dtype=dtype)
    opt = torch.optim.Adam(f.module.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2))
    ce = nn.CrossEntropyLoss()
    batches = _batches(data, cfg.batch_size, cfg.seed, cfg.num_workers, dtype)

    log = TrainingLog(run="classifier", config_hash=config_hash, seed=cfg.seed)
    logger.info(f"Training classifier: {cfg.iterations} iterations on {len(data)} images")

    for it in tqdm(range(1, cfg.iterations + 1), desc="classifier", disable=None):
        x, y = next(batches)
        logits = f(x)
        loss = ce(logits, y)
        _check_finite(loss, it, "classifier")
        opt.zero_grad()
        loss.backward()
        opt.step()

        batch_acc = (logits.argmax(dim=1) == y).to(dtype).mean().item()
        log.entries.append({"iteration": float(it), "loss": loss.item(), "batch_accuracy": batch_acc})
        if it % cfg.log_interval == 0:
            logger.info(f"[classifier {it}/{cfg.iterations}] loss={loss.item():.4f} acc={batch_acc:.3f}")

    f.metadata.update({"training_config_hash": config_hash, "seed": cfg.seed})
    f.freeze()
    return f, log


@torch.no_grad()
def predict(classifier: ModelHandle, x: torch.Tensor, batch_size: int = 512) -> torch.Tensor:
    """Argmax labels, evaluated in batches."""
    if x.shape[0] == 0:
        return torch.zeros(0, dtype=torch.long)
    chunks = [classifier_logits(classifier, x[i:i + batch_size]).argmax(dim=1)
              for i in range(0, x.shape[0], batch_size)]
    return torch.cat(chunks)


def accuracy(classifier: ModelHandle, x: torch.Tensor, y: torch.Tensor, batch_size: int = 512) -> float:
    """Fraction of correctly classified samples."""
    if x.shape[0] == 0:
        return math.nan
    return (predict(classifier, x, batch_size) == y).double().mean().item()
