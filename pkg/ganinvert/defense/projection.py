"""
Latent Projection
Projects images onto the generator manifold by plain gradient descent on
‖G(z) − x‖₂, started either from random latents (best of R restarts) or from
the inverter's estimate z₀ = I(x).
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import torch

from ganinvert.middleware.error_handler import ProjectionError
from ganinvert.models.networks import ModelHandle, ensure_paired
from ganinvert.models.schemas import InitMode, ProjectionConfig
from ganinvert.training.losses import safe_l2_norm
from ganinvert.utils.helpers import sample_latents, torch_generator

logger = logging.getLogger(__name__)


@dataclass
class ProjectionResult:
    """Projection of a batch of images."""
    z: torch.Tensor               # (n, d) final latents z_T
    x_proj: torch.Tensor          # G(z_T), same shape as the input batch
    trajectory: torch.Tensor      # (T + 1, n) objective ‖G(z_t) − x‖₂ of the returned chain
    effective_iterations: int     # R · T
    chain_index: torch.Tensor     # (n,) winning restart per sample

    @property
    def distance(self) -> torch.Tensor:
        """Final objective per sample."""
        return self.trajectory[-1]


def _descend(G: ModelHandle, x: torch.Tensor, z0: torch.Tensor, steps: int,
             alpha: float) -> Tuple[torch.Tensor, torch.Tensor]:
    """T plain gradient-descent steps; returns (z_T, trajectory of T + 1 objectives)."""
    z = z0.detach().clone().requires_grad_(True)
    opt = torch.optim.SGD([z], lr=alpha, momentum=0.0)
    trajectory = []
    # callers may sit under no_grad (BPDA forward, label oracles)
    with torch.enable_grad():
        for _ in range(steps):
            objective = safe_l2_norm(G(z) - x)
            trajectory.append(objective.detach())
            opt.zero_grad()
            objective.sum().backward()
            opt.step()
    with torch.no_grad():
        trajectory.append(safe_l2_norm(G(z) - x))
    return z.detach(), torch.stack(trajectory)


def _chunks(x: torch.Tensor, batch_size: int):
    for start in range(0, x.shape[0], batch_size):
        yield start, x[start:start + batch_size]


def direct_invert(
    G: ModelHandle,
    x: torch.Tensor,
    cfg: ProjectionConfig,
    initial_latents: Optional[torch.Tensor] = None,
) -> ProjectionResult:
    """
    Best-of-R random-restart projection.

    Chain r starts from z ~ N(0, I_d) drawn from its own stream derived from
    (cfg.seed, r). A chain whose objective ever turns non-finite is
    disqualified for that sample.

    Args:
        G: Frozen generator
        x: Image batch in the generator's output range
        cfg: Steps, step size, restarts and seed
        initial_latents: Optional (n, d) start for chain 0 (overrides its random draw)

    Returns:
        ProjectionResult: Per-sample chain with minimal final objective

    Raises:
        ProjectionError: Every chain failed for some sample
    """
    latent_dim = G.latent_dim
    if latent_dim is None:
        if initial_latents is None:
            raise ProjectionError("latent dimension unknown: wrap the generator with latent_dim or pass initial_latents")
        latent_dim = initial_latents.shape[1]
    n = x.shape[0]
    dtype = G.dtype

    best_obj = torch.full((n,), float("inf"), dtype=dtype)
    best_z = torch.zeros(n, latent_dim, dtype=dtype)
    best_traj = torch.zeros(cfg.steps + 1, n, dtype=dtype)
    best_chain = torch.full((n,), -1, dtype=torch.long)

    for r in range(cfg.restarts):
        stream = torch_generator(cfg.seed, "restart", r)
        z0 = sample_latents(n, latent_dim, stream, dtype)
        if r == 0 and initial_latents is not None:
            z0 = initial_latents.to(dtype)
        for start, xb in _chunks(x, cfg.batch_size):
            stop = start + xb.shape[0]
            z_t, traj = _descend(G, xb, z0[start:stop], cfg.steps, cfg.alpha)
            final = traj[-1].clone()
            final[~torch.isfinite(traj).all(dim=0)] = float("inf")
            better = final < best_obj[start:stop]
            idx = torch.nonzero(better).flatten() + start
            best_obj[idx] = final[better]
            best_z[idx] = z_t[better]
            best_traj[:, idx] = traj[:, better]
            best_chain[idx] = r
        logger.debug(f"restart {r}: best mean objective {best_obj[torch.isfinite(best_obj)].mean().item():.4f}")

    failed = torch.nonzero(best_chain < 0).flatten()
    if failed.numel():
        raise ProjectionError(
            f"all {cfg.restarts} chains diverged for {failed.numel()} sample(s), first index {failed[0].item()}",
            sample_index=failed[0].item(),
        )

    with torch.no_grad():
        x_proj = torch.cat([G(best_z[s:s + cfg.batch_size]) for s in range(0, n, cfg.batch_size)])
    return ProjectionResult(
        z=best_z,
        x_proj=x_proj,
        trajectory=best_traj,
        effective_iterations=cfg.restarts * cfg.steps,
        chain_index=best_chain,
    )


def encoder_project(G: ModelHandle, I: ModelHandle, x: torch.Tensor, cfg: ProjectionConfig) -> ProjectionResult:
    """
    Encoder-initialized projection: z₀ = I(x), then T gradient steps.

    Args:
        G: Frozen generator
        I: Inverter trained for G
        x: Image batch
        cfg: Steps and step size (restarts is always 1)

    Returns:
        ProjectionResult

    Raises:
        PairingError: I was not trained for G
        ProjectionError: Non-finite objective
    """
    ensure_paired(G, I)
    zs, trajs = [], []
    for _, xb in _chunks(x, cfg.batch_size):
        with torch.no_grad():
            z0 = I(xb)
        z_t, traj = _descend(G, xb, z0, cfg.steps, cfg.alpha)
        zs.append(z_t)
        trajs.append(traj)

    z = torch.cat(zs)
    trajectory = torch.cat(trajs, dim=1)
    bad = torch.nonzero(~torch.isfinite(trajectory).all(dim=0)).flatten()
    if bad.numel():
        raise ProjectionError(
            f"non-finite objective for {bad.numel()} sample(s), first index {bad[0].item()}",
            sample_index=bad[0].item(),
        )
    with torch.no_grad():
        x_proj = torch.cat([G(z[s:s + cfg.batch_size]) for s in range(0, z.shape[0], cfg.batch_size)])
    return ProjectionResult(
        z=z,
        x_proj=x_proj,
        trajectory=trajectory,
        effective_iterations=cfg.steps,
        chain_index=torch.zeros(z.shape[0], dtype=torch.long),
    )


def project(G: ModelHandle, x: torch.Tensor, cfg: ProjectionConfig,
            I: Optional[ModelHandle] = None) -> ProjectionResult:
    """Dispatch on cfg.init_mode."""
    if cfg.init_mode == InitMode.ENCODER:
        if I is None:
            raise ProjectionError("encoder projection needs an inverter")
        return encoder_project(G, I, x, cfg)
    return direct_invert(G, x, cfg)
