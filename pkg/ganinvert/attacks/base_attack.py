"""
Base Attack
Abstract base for every attack family: the shared result type, range
clamping, budget enforcement on emitted examples and the retry decorator
used by query-based attacks.
"""

import logging
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import wraps
from typing import Any, Callable, Dict, Optional, Tuple, Type

import numpy as np
import torch
import torch.nn.functional as F

from ganinvert.middleware.error_handler import AttackError, BudgetViolationError
from ganinvert.models.networks import ModelHandle, classifier_logits
from ganinvert.models.schemas import AttackSpec

logger = logging.getLogger(__name__)

PIXEL_LOW = -1.0
PIXEL_HIGH = 1.0
# 1e-6 in [0, 1] pixel units
BUDGET_TOLERANCE = 2e-6

GradientProvider = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


def retry_on_failure(max_retries: int = 3, delay: float = 1.0,
                     exceptions: Tuple[Type[BaseException], ...] = (Exception,)):
    """
    Decorator to retry an operation on failure.

    Args:
        max_retries: Maximum number of attempts
        delay: Delay between attempts in seconds
        exceptions: Exception types that trigger a retry

    Returns:
        Decorated function that retries on failure
    """
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            last_error = None
            for attempt in range(max_retries):
                try:
                    return func(*args, **kwargs)
                except exceptions as e:
                    last_error = e
                    if attempt < max_retries - 1:
                        logger.warning(
                            f"Attempt {attempt + 1}/{max_retries} failed for {func.__name__}: {e}. "
                            f"Retrying in {delay}s..."
                        )
                        time.sleep(delay)
                    else:
                        logger.error(f"All {max_retries} attempts failed for {func.__name__}: {e}")
            raise last_error
        return wrapper
    return decorator


@dataclass
class AttackResult:
    """Adversarial set paired with its clean source."""
    family: str
    x: torch.Tensor
    x_adv: torch.Tensor
    y: torch.Tensor
    success: torch.Tensor
    eps: Optional[float] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def success_rate(self) -> float:
        return self.success.double().mean().item() if self.success.numel() else 0.0

    def linf(self) -> torch.Tensor:
        return (self.x_adv - self.x).reshape(self.x.shape[0], -1).abs().amax(dim=1)

    def l2(self) -> torch.Tensor:
        return (self.x_adv - self.x).reshape(self.x.shape[0], -1).norm(dim=1)

    def arrays(self) -> Dict[str, np.ndarray]:
        return {
            "x": self.x.detach().cpu().numpy(),
            "x_adv": self.x_adv.detach().cpu().numpy(),
            "y": self.y.detach().cpu().numpy().astype(np.int64),
            "success": self.success.detach().cpu().numpy().astype(np.uint8),
        }


def clamp_to_range(x: torch.Tensor) -> torch.Tensor:
    return torch.clamp(x, PIXEL_LOW, PIXEL_HIGH)


def project_linf(x_adv: torch.Tensor, x: torch.Tensor, eps: float) -> torch.Tensor:
    """Project onto the L∞ ball of radius eps around x, then onto the pixel range."""
    return clamp_to_range(torch.max(torch.min(x_adv, x + eps), x - eps))


def enforce_budget(x: torch.Tensor, x_adv: torch.Tensor, eps: Optional[float]) -> None:
    """
    Hard check on every emitted example.

    Args:
        x: Clean batch
        x_adv: Adversarial batch
        eps: L∞ budget in model units, or None for unbounded attacks (range only)

    Raises:
        BudgetViolationError: Some example leaves the budget or the pixel range
    """
    flat = x_adv.reshape(x_adv.shape[0], -1)
    out_of_range = (flat < PIXEL_LOW - BUDGET_TOLERANCE) | (flat > PIXEL_HIGH + BUDGET_TOLERANCE)
    bad = out_of_range.any(dim=1)
    if eps is not None:
        bad |= (x_adv - x).reshape(x.shape[0], -1).abs().amax(dim=1) > eps + BUDGET_TOLERANCE
    if bad.any():
        first = torch.nonzero(bad).flatten()[0].item()
        raise BudgetViolationError(
            f"{int(bad.sum())} example(s) violate the budget or pixel range, first index {first}",
            sample_index=first,
        )


def cross_entropy_gradient(logits_fn: Callable[[torch.Tensor], torch.Tensor]) -> GradientProvider:
    """∇_x of the summed cross-entropy of logits_fn(x) against y."""
    def provider(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        x = x.detach().clone().requires_grad_(True)
        loss = F.cross_entropy(logits_fn(x), y, reduction="sum")
        (grad,) = torch.autograd.grad(loss, x)
        return grad
    return provider


def classifier_gradient(classifier: ModelHandle) -> GradientProvider:
    return cross_entropy_gradient(lambda x: classifier_logits(classifier, x))


def check_gradient(grad: torch.Tensor) -> None:
    """Raise AttackError naming the first sample with a non-finite gradient."""
    finite = torch.isfinite(grad.reshape(grad.shape[0], -1)).all(dim=1)
    if not finite.all():
        index = torch.nonzero(~finite).flatten()[0].item()
        raise AttackError(f"non-finite gradient for sample {index}", sample_index=index)


class BaseAttack(ABC):
    """
    Abstract base class for attacks.

    Subclasses implement _craft(); generate() batches, enforces the budget
    and packages the result.
    """

    bounded: bool = True

    def __init__(self, spec: AttackSpec):
        self.spec = spec
        self.name = spec.family.value
        self.logger = logging.getLogger(f"{self.__class__.__module__}.{self.__class__.__name__}")

    @abstractmethod
    def _craft(self, x: torch.Tensor, y: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Return (x_adv, success) for one batch."""

    def generate(self, x: torch.Tensor, y: torch.Tensor) -> AttackResult:
        """
        Craft adversarial examples for a whole set.

        Args:
            x: Clean images in [-1, 1]
            y: True labels

        Returns:
            AttackResult
        """
        start = time.time()
        eps = self.spec.eps_internal if self.bounded else None
        advs, flags = [], []
        for i in range(0, x.shape[0], self.spec.batch_size):
            xb, yb = x[i:i + self.spec.batch_size], y[i:i + self.spec.batch_size]
            x_adv, success = self._craft(xb, yb)
            x_adv = x_adv.detach()
            enforce_budget(xb, x_adv, eps)
            advs.append(x_adv)
            flags.append(success.detach().bool())
            self.logger.debug(f"[{self.name}] batch {i // self.spec.batch_size}: "
                              f"success {success.double().mean().item():.3f}")

        result = AttackResult(
            family=self.name,
            x=x.detach(),
            x_adv=torch.cat(advs) if advs else x.detach().clone(),
            y=y,
            success=torch.cat(flags) if flags else torch.zeros(0, dtype=torch.bool),
            eps=self.spec.eps if self.bounded else None,
            metadata=self.extra_metadata(),
        )
        self.log_execution("generate", "completed",
                           f"{x.shape[0]} samples, success {result.success_rate:.3f}, {time.time() - start:.1f}s")
        return result

    def extra_metadata(self) -> Dict[str, Any]:
        return {}

    def log_execution(self, operation: str, status: str, details: Optional[str] = None) -> None:
        message = f"[{self.name}] {operation}: {status}"
        if details:
            message += f" - {details}"
        self.logger.info(message)
