"""
Inversion Guarantee Check
Measures the quantities of the probabilistic inversion guarantee: the
training inversion error ε, an empirical Lipschitz estimate of I ∘ G, the
fraction of fresh latents inverted within ε′, and the analytic lower bound
1 − exp(−nd/18 · ((ε′−ε)²/(4d(L+1)²) − 1)²).
"""

import logging
import math
from typing import Callable, List, Optional, Tuple

import torch
from scipy.stats import binomtest

from ganinvert.middleware.error_handler import TheoremPreconditionError
from ganinvert.models.networks import ModelHandle
from ganinvert.models.schemas import TheoremConfig, TheoremReport
from ganinvert.utils.helpers import sample_latents, torch_generator

logger = logging.getLogger(__name__)

LatentMap = Callable[[torch.Tensor], torch.Tensor]

LIPSCHITZ_CHUNK = 256
COINCIDENT_THRESHOLD = 1e-12
CONFIDENCE = 0.95


def inversion_errors(I: LatentMap, G: LatentMap, z: torch.Tensor, batch_size: int = 512) -> torch.Tensor:
    """‖I(G(z)) − z‖₂ per latent."""
    with torch.no_grad():
        return torch.cat([
            torch.linalg.vector_norm(I(G(z[i:i + batch_size])) - z[i:i + batch_size], dim=1)
            for i in range(0, z.shape[0], batch_size)
        ])


def train_error_epsilon(I: LatentMap, G: LatentMap, latents: torch.Tensor, batch_size: int = 512) -> float:
    """
    ε = max_i ‖I(G(z⁽ⁱ⁾)) − z⁽ⁱ⁾‖₂ over the training latent set.

    Raises:
        TheoremPreconditionError: Empty latent set
    """
    if latents.shape[0] == 0:
        raise TheoremPreconditionError("training error needs at least one latent")
    return inversion_errors(I, G, latents, batch_size).max().item()


def estimate_lipschitz(
    h: LatentMap,
    latent_dim: int,
    n_pairs: int,
    seed: int,
    local_scale: float = 1e-3,
    dtype: torch.dtype = torch.float32,
) -> float:
    """
    Empirical lower bound L̂ = max ‖h(z) − h(z′)‖ / ‖z − z′‖ over sampled pairs.

    Each pair index contributes one global pair (independent Gaussians) and
    one local pair (z′ = z + local_scale · u). Pairs come from fixed-size
    seeded chunks, so the pairs for n_pairs = k are a prefix of those for any
    larger count. Coincident pairs are skipped.

    Args:
        h: Batched map ℝ^d → ℝ^d (typically I ∘ G)
        latent_dim: d
        n_pairs: Number of pair indices (≥ 1)
        seed: Pair stream seed
        local_scale: Perturbation size for local pairs
        dtype: Latent dtype

    Returns:
        float: L̂, a lower bound on the true Lipschitz constant
    """
    if n_pairs < 1:
        raise TheoremPreconditionError("Lipschitz estimate needs n_pairs ≥ 1")
    best = 0.0
    remaining = n_pairs
    chunk = 0
    while remaining > 0:
        stream = torch_generator(seed, "lipschitz", chunk)
        a = sample_latents(LIPSCHITZ_CHUNK, latent_dim, stream, dtype)
        b = sample_latents(LIPSCHITZ_CHUNK, latent_dim, stream, dtype)
        c = sample_latents(LIPSCHITZ_CHUNK, latent_dim, stream, dtype)
        u = sample_latents(LIPSCHITZ_CHUNK, latent_dim, stream, dtype)
        take = min(remaining, LIPSCHITZ_CHUNK)
        left = torch.cat([a[:take], c[:take]])
        right = torch.cat([b[:take], c[:take] + local_scale * u[:take]])
        with torch.no_grad():
            num = torch.linalg.vector_norm(h(left) - h(right), dim=1)
        den = torch.linalg.vector_norm(left - right, dim=1)
        keep = den >= COINCIDENT_THRESHOLD
        if keep.any():
            best = max(best, (num[keep] / den[keep]).max().item())
        remaining -= take
        chunk += 1
    return best


def fresh_inversion_errors(I: LatentMap, G: LatentMap, latent_dim: int, m: int, seed: int,
                           dtype: torch.dtype = torch.float32, batch_size: int = 512) -> torch.Tensor:
    """Inversion errors on m fresh latents from the (seed, "fresh") stream."""
    stream = torch_generator(seed, "fresh")
    return inversion_errors(I, G, sample_latents(m, latent_dim, stream, dtype), batch_size)


def probability_within(errors: torch.Tensor, eps_prime: float) -> Tuple[float, Tuple[float, float]]:
    """Fraction of errors strictly below ε′ and its exact 95% binomial interval."""
    m = errors.numel()
    k = int((errors < eps_prime).sum().item())
    ci = binomtest(k, m).proportion_ci(confidence_level=CONFIDENCE, method="exact")
    return k / m, (float(ci.low), float(ci.high))


def empirical_inversion_prob(
    I: LatentMap,
    G: LatentMap,
    eps_prime: float,
    m: int,
    seed: int,
    latent_dim: int,
    dtype: torch.dtype = torch.float32,
) -> Tuple[float, Tuple[float, float]]:
    """
    p̂ = fraction of m fresh z ~ N(0, I_d) with ‖I(G(z)) − z‖₂ < ε′.

    Returns:
        Tuple of (p̂, exact 95% confidence interval)
    """
    if m < 1:
        raise TheoremPreconditionError("empirical probability needs m ≥ 1")
    return probability_within(fresh_inversion_errors(I, G, latent_dim, m, seed, dtype), eps_prime)


def analytic_bound(n: int, d: int, eps: float, eps_prime: float, lipschitz: float) -> Tuple[float, bool]:
    """
    B = 1 − exp(−nd/18 · (x − 1)²) with x = (ε′ − ε)² / (4d(L + 1)²).

    Args:
        n: Training-latent count
        d: Latent dimension
        eps: Training inversion error
        eps_prime: Test tolerance (> eps)
        lipschitz: Lipschitz constant (or estimate) of I ∘ G

    Returns:
        Tuple of (B, questionable_regime) where the regime flag marks x < 1,
        outside which the concentration step applies

    Raises:
        TheoremPreconditionError: ε′ ≤ ε, L < 0, n < 1 or d < 1
    """
    if not eps_prime > eps:
        raise TheoremPreconditionError(f"ε′ ({eps_prime}) must exceed ε ({eps})")
    if lipschitz < 0 or n < 1 or d < 1:
        raise TheoremPreconditionError(f"invalid bound arguments n={n}, d={d}, L={lipschitz}")
    x = (eps_prime - eps) ** 2 / (4.0 * d * (lipschitz + 1.0) ** 2)
    bound = -math.expm1(-(n * d / 18.0) * (x - 1.0) ** 2)
    return bound, x < 1.0


def _status(bound: float, questionable: bool, p_hat: float, ci_low: float) -> str:
    if questionable:
        return "questionable_regime"
    if bound <= 0.5:
        return "vacuous"
    if ci_low >= bound:
        return "satisfied"
    # point estimate meets B but m is too small for the lower limit to certify it
    return "unresolved" if p_hat >= bound else "violated"


def validate_theorem(
    I: ModelHandle,
    G: ModelHandle,
    cfg: TheoremConfig,
    train_latents: Optional[torch.Tensor] = None,
    latent_dim: Optional[int] = None,
) -> List[TheoremReport]:
    """
    Assemble one TheoremReport per ε′.

    The bound check (p̂'s 95% lower confidence limit ≥ B) applies when B > 0.5
    outside the questionable regime. A report whose limit falls short while p̂
    itself reaches B is "unresolved" (more fresh samples needed); one with
    p̂ < B is "violated". Neither is raised.

    Args:
        I: Inverter
        G: Generator
        cfg: n, m, ε′ (or multipliers of √d), pair count and seeds
        train_latents: Training latent set (a seeded surrogate set of size n by default)
        latent_dim: d for models without a spec (read from the specs otherwise)

    Returns:
        List[TheoremReport]: One report per ε′, in increasing ε′ order
    """
    d = latent_dim or I.latent_dim or G.latent_dim
    if d is None:
        raise TheoremPreconditionError("latent dimension unknown for spec-less models")
    dtype = G.dtype
    if train_latents is None:
        train_latents = sample_latents(cfg.n_train, d, torch_generator(cfg.seed, "train_latents"), dtype)
    n = train_latents.shape[0]

    eps = train_error_epsilon(I, G, train_latents, cfg.batch_size)
    lipschitz = estimate_lipschitz(lambda z: I(G(z)), d, cfg.n_pairs, cfg.seed, cfg.local_scale, dtype)
    errors = fresh_inversion_errors(I, G, d, cfg.m, cfg.seed, dtype, cfg.batch_size)
    logger.info(f"Theorem check: n={n} d={d} ε={eps:.4f} L̂={lipschitz:.4f} m={cfg.m}")

    tolerances = [cfg.eps_prime] if cfg.eps_prime is not None else [k * math.sqrt(d) for k in cfg.eps_prime_multipliers]
    reports = []
    for eps_prime in sorted(tolerances):
        p_hat, ci = probability_within(errors, eps_prime)
        if eps_prime <= eps:
            reports.append(TheoremReport(
                n=n, d=d, eps=eps, eps_prime=eps_prime, lipschitz_estimate=lipschitz, p_hat=p_hat,
                p_hat_ci=ci, status="hypothesis_unmet", m=cfg.m, seed=cfg.seed,
            ))
            continue
        bound, questionable = analytic_bound(n, d, eps, eps_prime, lipschitz)
        bound_2l, _ = analytic_bound(n, d, eps, eps_prime, 2.0 * lipschitz)
        status = _status(bound, questionable, p_hat, ci[0])
        if status == "violated":
            logger.warning(f"ε′={eps_prime:.3f}: lower confidence limit {ci[0]:.4f} below bound {bound:.4f}")
        reports.append(TheoremReport(
            n=n, d=d, eps=eps, eps_prime=eps_prime, lipschitz_estimate=lipschitz, p_hat=p_hat,
            p_hat_ci=ci, bound=bound, bound_at_2l=bound_2l, questionable_regime=questionable,
            status=status, m=cfg.m, seed=cfg.seed,
        ))
    return reports
