"""
FGSM
Single gradient-sign step: x_adv = clip(x + ε·sign(∇_x J(x, y))).
"""

from typing import Tuple

import torch

from ganinvert.attacks.base_attack import (
    BaseAttack,
    GradientProvider,
    check_gradient,
    clamp_to_range,
    classifier_gradient,
)
from ganinvert.models.networks import ModelHandle, classifier_logits
from ganinvert.models.schemas import AttackSpec


def fgsm(loss_gradient: GradientProvider, x: torch.Tensor, y: torch.Tensor, eps: float) -> torch.Tensor:
    """
    Fast gradient-sign step.

    Args:
        loss_gradient: (x, y) → ∇_x J(x, y)
        x: Clean batch in [-1, 1]
        y: True labels
        eps: L∞ step in model units

    Returns:
        torch.Tensor: Adversarial batch (sign(0) = 0, so zero gradients leave pixels unchanged)

    Raises:
        AttackError: Non-finite gradient (names the sample)
    """
    grad = loss_gradient(x, y)
    check_gradient(grad)
    return clamp_to_range(x.detach() + eps * torch.sign(grad)).detach()


class FGSMAttack(BaseAttack):
    """FGSM against an undefended classifier."""

    def __init__(self, spec: AttackSpec, classifier: ModelHandle):
        super().__init__(spec)
        self.classifier = classifier
        self._gradient = classifier_gradient(classifier)

    def _craft(self, x: torch.Tensor, y: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        x_adv = fgsm(self._gradient, x, y, self.spec.eps_internal)
        with torch.no_grad():
            success = classifier_logits(self.classifier, x_adv).argmax(dim=1) != y
        return x_adv, success
