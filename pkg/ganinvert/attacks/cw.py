"""
Carlini-Wagner L2
Untargeted L2 attack optimized in tanh space with Adam, with a per-sample
binary search over the trade-off constant c.
"""

from typing import Tuple

import torch

from ganinvert.attacks.base_attack import BaseAttack
from ganinvert.models.networks import ModelHandle, classifier_logits
from ganinvert.models.schemas import AttackSpec

_ATANH_SHRINK = 1.0 - 1e-6
_UPPER_START = 1e10


def _margin(logits: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Z_y − max_{i≠y} Z_i."""
    true = logits.gather(1, y[:, None]).squeeze(1)
    others = logits.clone()
    others.scatter_(1, y[:, None], float("-inf"))
    return true - others.amax(dim=1)


def cw_l2(classifier: ModelHandle, x: torch.Tensor, y: torch.Tensor,
          spec: AttackSpec) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Minimal-distortion untargeted L2 attack.

    Inputs the classifier already gets wrong are returned unchanged with
    zero distortion. Samples the search never flips return the last attempt
    at the largest constant, flagged unsuccessful.

    Args:
        classifier: Undefended classifier
        x: Clean batch in [-1, 1]
        y: True labels
        spec: Binary-search steps, learning rate, iterations, κ and initial c

    Returns:
        Tuple of (x_adv, success flags, L2 distortion)
    """
    x = x.detach()
    n = x.shape[0]
    dims = tuple(range(1, x.dim()))
    with torch.no_grad():
        already = _margin(classifier_logits(classifier, x), y) < 0

    lower = torch.zeros(n, dtype=x.dtype)
    upper = torch.full((n,), _UPPER_START, dtype=x.dtype)
    const = torch.full((n,), spec.cw_initial_const, dtype=x.dtype)
    best_l2 = torch.full((n,), float("inf"), dtype=x.dtype)
    best_adv = x.clone()
    last_attempt = x.clone()

    w_start = torch.atanh(torch.clamp(x, -1.0, 1.0) * _ATANH_SHRINK)
    for _ in range(spec.cw_binary_steps):
        w = w_start.clone().requires_grad_(True)
        opt = torch.optim.Adam([w], lr=spec.cw_learning_rate)
        step_success = torch.zeros(n, dtype=torch.bool)

        for _ in range(spec.cw_iterations):
            x_adv = torch.tanh(w)
            l2_sq = (x_adv - x).pow(2).sum(dim=dims)
            margin = _margin(classifier_logits(classifier, x_adv), y)
            loss = (l2_sq + const * torch.clamp(margin, min=-spec.cw_kappa)).sum()
            opt.zero_grad()
            loss.backward()
            opt.step()

            with torch.no_grad():
                l2 = l2_sq.sqrt()
                flipped = margin < -spec.cw_kappa if spec.cw_kappa > 0 else margin < 0
                improved = flipped & (l2 < best_l2)
                best_l2[improved] = l2[improved]
                best_adv[improved] = x_adv[improved].detach()
                step_success |= flipped

        with torch.no_grad():
            last_attempt = torch.tanh(w).detach()
            upper = torch.where(step_success, torch.minimum(upper, const), upper)
            lower = torch.where(step_success, lower, torch.maximum(lower, const))
            bounded = upper < _UPPER_START / 10
            const = torch.where(bounded, (lower + upper) / 2, const * 10)

    success = torch.isfinite(best_l2)
    x_adv = torch.where(success.view(-1, *([1] * len(dims))), best_adv, last_attempt)
    x_adv[already] = x[already]
    success = success | already
    distortion = (x_adv - x).pow(2).sum(dim=dims).sqrt()
    return x_adv.detach(), success, distortion


class CWL2Attack(BaseAttack):
    """CW L2 against the undefended classifier."""

    bounded = False

    def __init__(self, spec: AttackSpec, classifier: ModelHandle):
        super().__init__(spec)
        self.classifier = classifier
        self._distortions = []

    def _craft(self, x: torch.Tensor, y: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        x_adv, success, distortion = cw_l2(self.classifier, x, y, self.spec)
        self._distortions.append(distortion)
        return x_adv, success

    def extra_metadata(self):
        if not self._distortions:
            return {}
        d = torch.cat(self._distortions)
        return {"mean_l2": d.mean().item(), "max_l2": d.max().item()}
