"""
Latent projection: random-restart and encoder-initialized descent.
"""

import math

import pytest
import torch

from ganinvert.defense.projection import direct_invert, encoder_project, project
from ganinvert.middleware.error_handler import PairingError, ProjectionError
from ganinvert.models.networks import build_model, mirror_spec
from ganinvert.models.schemas import InitMode, NetworkRole, ProjectionConfig
from ganinvert.training.losses import safe_l2_norm
from tests.helpers import identity_pair, wrap_linear

# ‖A z − x‖ with A = [diag(1, 2, 3); 0] and x = (1, ..., 6): minimizer (1, 1, 1), residual sqrt(4² + 5² + 6²)
LSQ_MATRIX = [[1, 0, 0], [0, 2, 0], [0, 0, 3], [0, 0, 0], [0, 0, 0], [0, 0, 0]]
LSQ_TARGET = [[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]]


@pytest.fixture
def least_squares():
    G = wrap_linear(LSQ_MATRIX, NetworkRole.GENERATOR, "lsq")
    return G, torch.tensor(LSQ_TARGET, dtype=torch.float64)


def test_zero_steps_is_the_encoder_reconstruction(tiny_generator):
    I = build_model(mirror_spec(tiny_generator.spec), seed=3, dtype=torch.float64).freeze()
    I.metadata["paired_generator_hash"] = tiny_generator.spec_hash
    x = torch.rand(5, 2, dtype=torch.float64) * 2 - 1
    result = encoder_project(tiny_generator, I, x, ProjectionConfig(steps=0, init_mode=InitMode.ENCODER))
    with torch.no_grad():
        assert torch.allclose(result.x_proj, tiny_generator(I(x)))
    assert result.trajectory.shape == (1, 5)
    assert result.effective_iterations == 0


def test_range_point_is_a_fixed_point():
    G, I = identity_pair(3)
    x = torch.tensor([[0.2, -0.4, 0.9]], dtype=torch.float64)
    cfg = ProjectionConfig(steps=25, alpha=0.1, restarts=1, seed=0)
    result = direct_invert(G, x, cfg, initial_latents=x.clone())
    assert torch.allclose(result.z, x)
    assert torch.all(result.trajectory == 0)


def test_descent_reaches_the_least_squares_minimizer(least_squares):
    G, x = least_squares
    # step 0.5·‖r*‖/σ_max² keeps the descent contractive near the minimizer
    cfg = ProjectionConfig(steps=2000, alpha=0.5 * math.sqrt(77) / 9, restarts=1, seed=0)
    result = direct_invert(G, x, cfg, initial_latents=torch.zeros(1, 3, dtype=torch.float64))
    assert torch.allclose(result.z, torch.ones(1, 3, dtype=torch.float64), atol=1e-6)
    assert result.distance.item() == pytest.approx(math.sqrt(77), rel=1e-9)


def test_objective_never_increases_on_the_least_squares_problem(least_squares):
    G, x = least_squares
    cfg = ProjectionConfig(steps=300, alpha=0.5 * math.sqrt(77) / 9, restarts=1, seed=0)
    traj = direct_invert(G, x, cfg, initial_latents=torch.zeros(1, 3, dtype=torch.float64)).trajectory[:, 0]
    assert torch.all(traj[1:] <= traj[:-1] + 1e-12)


def test_best_chain_wins_per_sample(tiny_generator):
    x = torch.rand(6, 2, dtype=torch.float64) * 2 - 1
    cfg = ProjectionConfig(steps=10, alpha=0.05, restarts=4, seed=1, batch_size=4)
    result = direct_invert(tiny_generator, x, cfg)
    assert result.trajectory.shape == (11, 6)
    assert result.effective_iterations == 40
    assert result.chain_index.min() >= 0 and result.chain_index.max() < 4

    singles = torch.stack([
        direct_invert(tiny_generator, x, ProjectionConfig(steps=10, alpha=0.05, restarts=r + 1, seed=1)).distance
        for r in range(4)
    ])
    assert torch.all(singles[1:] <= singles[:-1] + 1e-12)
    assert torch.allclose(result.distance, singles[-1])


def test_restarts_are_seeded(tiny_generator):
    x = torch.rand(3, 2, dtype=torch.float64)
    cfg = ProjectionConfig(steps=5, restarts=3, seed=7)
    assert torch.equal(direct_invert(tiny_generator, x, cfg).z, direct_invert(tiny_generator, x, cfg).z)


def test_non_finite_chains_are_reported(tiny_generator):
    x = torch.rand(2, 2, dtype=torch.float64)
    x[1, 0] = float("nan")
    with pytest.raises(ProjectionError) as exc:
        direct_invert(tiny_generator, x, ProjectionConfig(steps=3, restarts=2))
    assert exc.value.details["sample_index"] == 1


def test_encoder_projection_checks_pairing(tiny_generator):
    G, I = identity_pair(2)
    with pytest.raises(PairingError):
        encoder_project(tiny_generator, I, torch.zeros(1, 2, dtype=torch.float64),
                        ProjectionConfig(init_mode=InitMode.ENCODER))


def test_encoder_mode_runs_one_chain():
    cfg = ProjectionConfig(steps=5, restarts=10, init_mode=InitMode.ENCODER)
    assert cfg.restarts == 1
    assert cfg.effective_iterations == 5


def test_project_dispatch():
    G, I = identity_pair(2)
    x = torch.tensor([[0.3, 0.1]], dtype=torch.float64)
    result = project(G, x, ProjectionConfig(steps=0, init_mode=InitMode.ENCODER), I=I)
    assert torch.allclose(result.x_proj, x)
    with pytest.raises(ProjectionError):
        project(G, x, ProjectionConfig(init_mode=InitMode.ENCODER))


def test_one_step_matches_the_chain_rule():
    A = torch.tensor([[1.0, 2.0], [0.0, 1.0], [3.0, -1.0]], dtype=torch.float64)
    G = wrap_linear(A, NetworkRole.GENERATOR, "linear3x2")
    x = torch.tensor([[0.5, -0.2, 0.1]], dtype=torch.float64)
    z0 = torch.tensor([[0.3, 0.4]], dtype=torch.float64)
    residual = z0 @ A.T - x
    expected = z0 - 0.1 * (residual @ A) / residual.norm()
    result = direct_invert(G, x, ProjectionConfig(steps=1, alpha=0.1, restarts=1), initial_latents=z0)
    assert torch.allclose(result.z, expected, atol=1e-12)


def test_objective_gradient_matches_finite_differences(tiny_generator):
    x = torch.rand(3, 2, dtype=torch.float64, generator=torch.Generator().manual_seed(4)) * 2 - 1
    z = torch.randn(3, 2, dtype=torch.float64, generator=torch.Generator().manual_seed(5)).requires_grad_(True)
    assert torch.autograd.gradcheck(lambda v: safe_l2_norm(tiny_generator(v) - x), (z,), eps=1e-6, atol=1e-5)


def test_projection_descends_under_no_grad(tiny_generator):
    I = build_model(mirror_spec(tiny_generator.spec), seed=3, dtype=torch.float64).freeze()
    I.metadata["paired_generator_hash"] = tiny_generator.spec_hash
    x = torch.rand(4, 2, dtype=torch.float64, generator=torch.Generator().manual_seed(6)) * 2 - 1
    cfg = ProjectionConfig(steps=5, alpha=0.05, init_mode=InitMode.ENCODER)
    expected = encoder_project(tiny_generator, I, x, cfg)
    with torch.no_grad():
        encoded = encoder_project(tiny_generator, I, x, cfg)
        direct = direct_invert(tiny_generator, x, ProjectionConfig(steps=5, alpha=0.05, restarts=2, seed=1))
    assert torch.equal(encoded.z, expected.z)
    assert not torch.equal(encoded.trajectory[0], encoded.trajectory[-1])
    assert direct.trajectory.shape == (6, 4)


def test_nan_input_never_wins_a_chain(tiny_generator):
    x = torch.tensor([[0.2, 0.1], [float("nan"), 0.3]], dtype=torch.float64)
    assert torch.isnan(safe_l2_norm(x - torch.zeros_like(x)))[1]
    with pytest.raises(ProjectionError):
        direct_invert(tiny_generator, x, ProjectionConfig(steps=2, restarts=3, seed=0))
