"""
Black-Box Substitute Attack
Trains a substitute classifier from oracle labels with Jacobian-based
dataset augmentation, then transfers FGSM examples crafted on the
substitute to the target pipeline.
"""

import logging
from typing import List, Optional, Tuple

import torch
import torch.nn.functional as F

from ganinvert.attacks.base_attack import AttackResult, BaseAttack, clamp_to_range, classifier_gradient
from ganinvert.attacks.fgsm import fgsm
from ganinvert.attacks.oracle_client import LabelOracleClient
from ganinvert.middleware.error_handler import DatasetError
from ganinvert.models.networks import ModelHandle, build_model, classifier_logits, default_classifier_spec
from ganinvert.models.schemas import AttackSpec, NetworkSpec
from ganinvert.training.gan_pretrain import predict
from ganinvert.utils.helpers import derive_seed, torch_generator

logger = logging.getLogger(__name__)


def _query_batched(client: LabelOracleClient, x: torch.Tensor, batch_size: int) -> torch.Tensor:
    return torch.cat([client.query(x[i:i + batch_size]) for i in range(0, x.shape[0], batch_size)])


def _fit(substitute: ModelHandle, x: torch.Tensor, y: torch.Tensor, spec: AttackSpec,
         opt: torch.optim.Optimizer, round_index: int) -> None:
    substitute.module.train()
    order_stream = torch_generator(spec.seed, "substitute_round", round_index)
    for _ in range(spec.blackbox_epochs):
        order = torch.randperm(x.shape[0], generator=order_stream)
        for i in range(0, x.shape[0], spec.batch_size):
            idx = order[i:i + spec.batch_size]
            loss = F.cross_entropy(substitute(x[idx]), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    substitute.module.eval()


def jacobian_augmentation(substitute: ModelHandle, x: torch.Tensor, labels: torch.Tensor,
                          step: float) -> torch.Tensor:
    """x + step·sign(∇_x F_sub(x)[label]), clamped to the pixel range."""
    x_var = x.detach().clone().requires_grad_(True)
    score = classifier_logits(substitute, x_var).gather(1, labels[:, None]).sum()
    (grad,) = torch.autograd.grad(score, x_var)
    return clamp_to_range(x + step * torch.sign(grad)).detach()


def blackbox_substitute(
    client: LabelOracleClient,
    seed_x: torch.Tensor,
    spec: AttackSpec,
    substitute_spec: Optional[NetworkSpec] = None,
    substitute: Optional[ModelHandle] = None,
) -> Tuple[ModelHandle, List[float]]:
    """
    Train a substitute from oracle labels with Jacobian augmentation.

    Round 0 trains on the labeled seed set; each later round doubles the set
    with augmented points labeled by the oracle and retrains. After every
    round the substitute's agreement with the oracle is measured on the seed set.

    Args:
        client: Label oracle client for the target pipeline
        seed_x: Small unlabeled seed set in [-1, 1]
        spec: Rounds, augmentation step λ ([0, 1] units), epochs, learning rate, seed
        substitute_spec: Substitute architecture (small classifier by default)
        substitute: Pre-built substitute to train in place

    Returns:
        Tuple of (substitute, agreement per round)

    Raises:
        QueryError: Oracle failures outlasting the retry budget
    """
    if seed_x.shape[0] == 0:
        raise DatasetError("black-box attack needs a non-empty seed set")
    if substitute is None:
        image_shape = _image_shape(seed_x)
        substitute_spec = substitute_spec or default_classifier_spec(image_shape, client.num_classes)
        substitute = build_model(substitute_spec, seed=derive_seed(spec.seed, "substitute"), dtype=seed_x.dtype)
    opt = torch.optim.Adam(substitute.module.parameters(), lr=spec.blackbox_learning_rate)

    x = seed_x.detach().clone()
    y = _query_batched(client, x, spec.batch_size)
    agreement: List[float] = []
    for round_index in range(spec.blackbox_rounds + 1):
        if round_index > 0:
            new_x = jacobian_augmentation(substitute, x, y, 2.0 * spec.blackbox_lambda)
            new_y = _query_batched(client, new_x, spec.batch_size)
            x, y = torch.cat([x, new_x]), torch.cat([y, new_y])
        _fit(substitute, x, y, spec, opt, round_index)

        oracle_labels = _query_batched(client, seed_x, spec.batch_size)
        rate = (predict(substitute, seed_x) == oracle_labels).double().mean().item()
        agreement.append(rate)
        logger.info(f"[blackbox] round {round_index}: {x.shape[0]} training points, agreement {rate:.3f}")

    substitute.freeze()
    return substitute, agreement


def _image_shape(x: torch.Tensor) -> Tuple[int, ...]:
    if x.dim() == 4:
        c, h, w = x.shape[1:]
        return (h, w, c)
    return tuple(x.shape[1:])


class BlackBoxAttack(BaseAttack):
    """Substitute-model transfer attack; success is judged by the target oracle."""

    def __init__(self, spec: AttackSpec, client: LabelOracleClient, seed_x: torch.Tensor,
                 substitute_spec: Optional[NetworkSpec] = None):
        super().__init__(spec)
        self.client = client
        self.seed_x = seed_x
        self.substitute_spec = substitute_spec
        self.substitute: Optional[ModelHandle] = None
        self.agreement: List[float] = []

    def train_substitute(self) -> ModelHandle:
        if self.substitute is None:
            self.substitute, self.agreement = blackbox_substitute(
                self.client, self.seed_x, self.spec, self.substitute_spec
            )
        return self.substitute

    def _craft(self, x: torch.Tensor, y: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        substitute = self.train_substitute()
        x_adv = fgsm(classifier_gradient(substitute), x, y, self.spec.eps_internal)
        return x_adv, self.client.query(x_adv) != y

    def generate(self, x: torch.Tensor, y: torch.Tensor) -> AttackResult:
        self.train_substitute()
        return super().generate(x, y)

    def extra_metadata(self):
        return {"agreement": list(self.agreement), **self.client.get_quota_status()}
