"""
Reparameterization Attack
White-box gradient-sign step through the differentiable composition
f ∘ G ∘ I, exploiting an inverter with G(I(x)) ≈ x.
"""

from typing import Tuple

import torch

from ganinvert.attacks.base_attack import BaseAttack, cross_entropy_gradient
from ganinvert.attacks.fgsm import fgsm
from ganinvert.models.networks import ModelHandle, classifier_logits, ensure_paired
from ganinvert.models.schemas import AttackSpec


def reparam_gradient(classifier: ModelHandle, G: ModelHandle, I: ModelHandle,
                     x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """∇_x CE(f(G(I(x))), y), summed over the batch."""
    return cross_entropy_gradient(lambda v: classifier_logits(classifier, G(I(v))))(x, y)


def reparam_attack(classifier: ModelHandle, G: ModelHandle, I: ModelHandle, x: torch.Tensor,
                   y: torch.Tensor, spec: AttackSpec) -> torch.Tensor:
    """
    Gradient-sign step of size ε computed through f ∘ G ∘ I.

    Raises:
        PairingError: I was not trained for G
    """
    ensure_paired(G, I)
    return fgsm(lambda v, t: reparam_gradient(classifier, G, I, v, t), x, y, spec.eps_internal)


class ReparamAttack(BaseAttack):
    """Reparameterization attack on the encoder-defended pipeline."""

    def __init__(self, spec: AttackSpec, classifier: ModelHandle, G: ModelHandle, I: ModelHandle):
        super().__init__(spec)
        ensure_paired(G, I)
        self.classifier, self.G, self.I = classifier, G, I

    def _craft(self, x: torch.Tensor, y: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        x_adv = reparam_attack(self.classifier, self.G, self.I, x, y, self.spec)
        with torch.no_grad():
            success = classifier_logits(self.classifier, self.G(self.I(x_adv))).argmax(dim=1) != y
        return x_adv, success
