"""
BPDA
Iterative L∞ attack through a non-differentiable defense: the forward pass
runs the real purification, the backward pass treats it as the identity.
"""

import logging
from typing import Callable, List, Tuple

import torch
import torch.nn.functional as F

from ganinvert.attacks.base_attack import BaseAttack, check_gradient, project_linf
from ganinvert.middleware.error_handler import GanInvertError
from ganinvert.models.networks import ModelHandle, classifier_logits
from ganinvert.models.schemas import AttackSpec

logger = logging.getLogger(__name__)

DefenseFn = Callable[[torch.Tensor], torch.Tensor]


def guarded_defense(defense_fn: DefenseFn, x: torch.Tensor, failures: List[int],
                    offset: int = 0) -> torch.Tensor:
    """
    Apply the defense to a batch; if it fails, retry sample by sample and
    pass failing samples through unpurified, recording their indices.
    """
    with torch.no_grad():
        try:
            return defense_fn(x)
        except GanInvertError as e:
            logger.warning(f"Defense failed on a batch ({e}); retrying per sample")
        purified = []
        for i in range(x.shape[0]):
            try:
                purified.append(defense_fn(x[i:i + 1]))
            except GanInvertError:
                failures.append(offset + i)
                purified.append(x[i:i + 1])
        return torch.cat(purified)


def bpda_gradient(classifier: ModelHandle, defense_fn: DefenseFn, x: torch.Tensor,
                  y: torch.Tensor, failures: List[int] = None, offset: int = 0) -> torch.Tensor:
    """∇ of CE(f(defense(x)), y) with the defense's Jacobian replaced by the identity."""
    failures = [] if failures is None else failures
    x_proj = guarded_defense(defense_fn, x.detach(), failures, offset).detach().requires_grad_(True)
    loss = F.cross_entropy(classifier_logits(classifier, x_proj), y, reduction="sum")
    (grad,) = torch.autograd.grad(loss, x_proj)
    return grad


def bpda_attack(classifier: ModelHandle, defense_fn: DefenseFn, x: torch.Tensor, y: torch.Tensor,
                spec: AttackSpec, failures: List[int] = None, offset: int = 0) -> torch.Tensor:
    """
    Iterative sign steps of size spec.bpda_step_internal, each projected onto
    the ε-ball around x and the pixel range.

    Args:
        classifier: Deployed classifier f
        defense_fn: Image batch → purified batch
        x: Clean batch
        y: True labels
        spec: ε, steps and step size
        failures: Collects indices of samples the defense failed on
        offset: Index of x[0] within the full set

    Returns:
        torch.Tensor: Adversarial batch
    """
    failures = [] if failures is None else failures
    x = x.detach()
    eps = spec.eps_internal
    step = spec.bpda_step_internal
    x_adv = x.clone()
    for _ in range(spec.bpda_steps):
        step_failures: List[int] = []
        grad = bpda_gradient(classifier, defense_fn, x_adv, y, step_failures, offset)
        for index in step_failures:
            if index not in failures:
                failures.append(index)
        check_gradient(grad)
        x_adv = project_linf(x_adv + step * torch.sign(grad), x, eps).detach()
    return x_adv


class BPDAAttack(BaseAttack):
    """BPDA against a purify-then-classify pipeline."""

    def __init__(self, spec: AttackSpec, classifier: ModelHandle, defense_fn: DefenseFn):
        super().__init__(spec)
        self.classifier = classifier
        self.defense_fn = defense_fn
        self.failures: List[int] = []
        self._offset = 0

    def _craft(self, x: torch.Tensor, y: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        x_adv = bpda_attack(self.classifier, self.defense_fn, x, y, self.spec, self.failures, self._offset)
        self._offset += x.shape[0]
        purified = guarded_defense(self.defense_fn, x_adv, [], 0)
        with torch.no_grad():
            success = classifier_logits(self.classifier, purified).argmax(dim=1) != y
        return x_adv, success

    def extra_metadata(self):
        return {"defense_failures": sorted(self.failures)}
