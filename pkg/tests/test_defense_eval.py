"""
Purify-then-classify, detection scores and AUC, reconstruction metrics,
the ablation pair and the speed / accuracy rows.
"""

import itertools
import math

import numpy as np
import pytest
import torch

from ganinvert.defense.defense_eval import (
    ablation_report,
    defend_classify,
    defended_accuracy,
    detection_auc,
    detection_records,
    detection_score,
    eval_metrics,
    purify,
    speed_accuracy_curve,
)
from ganinvert.middleware.error_handler import DatasetError, SpecError
from ganinvert.models.networks import Classifier, ModelHandle, build_model, default_classifier_spec, pair_with
from ganinvert.models.schemas import DefenseMode, InverterTrainConfig, NetworkRole, ProjectionConfig
from tests.helpers import identity_pair, linear, linear_classifier, wrap_linear


def _brute_force_auc(clean, attacked) -> float:
    wins = sum(1.0 if a > c else 0.5 if a == c else 0.0 for a, c in itertools.product(attacked, clean))
    return wins / (len(clean) * len(attacked))


# ==================== DETECTION ====================

def test_score_is_zero_on_the_manifold():
    f = linear_classifier(torch.eye(2))
    x = torch.tensor([[0.3, -0.2]], dtype=torch.float64)
    assert detection_score(f, x, x.clone()).item() == 0.0


def test_score_with_identity_features():
    f = linear_classifier(torch.eye(2))
    x = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    x_proj = torch.tensor([[0.0, 1.0]], dtype=torch.float64)
    assert detection_score(f, x, x_proj).item() == pytest.approx(math.sqrt(2))


def test_score_with_linear_features():
    features = linear([[2.0, 0.0], [1.0, 1.0], [0.0, 3.0]])
    f = ModelHandle.wrap(Classifier(features, linear(torch.eye(3))), NetworkRole.CLASSIFIER, "phi").freeze()
    x = torch.tensor([[1.0, 1.0]], dtype=torch.float64)
    x_proj = torch.tensor([[0.0, 0.0]], dtype=torch.float64)
    # Φ(x) − Φ(x_proj) = (2, 2, 3)
    assert detection_score(f, x, x_proj).item() == pytest.approx(math.sqrt(17))
    assert detection_score(f, x, x_proj, space="image").item() == pytest.approx(math.sqrt(2))


def test_score_rejects_mismatched_batches():
    f = linear_classifier(torch.eye(2))
    with pytest.raises(SpecError):
        detection_score(f, torch.zeros(2, 2, dtype=torch.float64), torch.zeros(3, 2, dtype=torch.float64))


def test_non_finite_input_is_not_scored_as_clean():
    f = linear_classifier(torch.eye(2))
    x = torch.tensor([[float("nan"), 0.0], [0.1, 0.2]], dtype=torch.float64)
    scores = detection_score(f, x, torch.zeros_like(x))
    assert torch.isnan(scores[0])
    with pytest.raises(DatasetError):
        detection_auc([0.1, 0.2], scores.tolist())


def test_auc_examples():
    assert detection_auc([0.1, 0.2], [0.3, 0.4]) == 1.0
    assert detection_auc([1.0, 2.0, 3.0], [3.0, 1.0, 2.0]) == pytest.approx(0.5)
    assert detection_auc([1, 2], [2, 3]) == pytest.approx(0.875)


def test_auc_matches_pair_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(5):
        clean = rng.integers(0, 6, size=rng.integers(1, 40)).tolist()
        attacked = rng.integers(2, 8, size=rng.integers(1, 40)).tolist()
        if len(set(clean) | set(attacked)) < 2:
            continue
        assert detection_auc(clean, attacked) == pytest.approx(_brute_force_auc(clean, attacked), abs=1e-12)


def test_auc_needs_both_lists():
    with pytest.raises(DatasetError):
        detection_auc([], [1.0])
    with pytest.raises(DatasetError):
        detection_auc([1.0], [])


def test_detection_records():
    records = detection_records(torch.tensor([0.5, 2.0]), attacked=True, family="fgsm")
    assert [(r.sample_id, r.score, r.attacked) for r in records] == [(0, 0.5, True), (1, 2.0, True)]


# ==================== PURIFY / CLASSIFY ====================

def test_constant_classifier_ignores_the_input():
    G, I = identity_pair(2)
    f = linear_classifier(torch.zeros(3, 2), bias=[0.0, 5.0, 0.0])
    x = torch.rand(7, 2, dtype=torch.float64) * 2 - 1
    for mode in DefenseMode:
        labels = defend_classify(f, G, I, x, ProjectionConfig(steps=3, restarts=2), mode)
        assert labels.tolist() == [1] * 7


def test_identity_defense_keeps_clean_accuracy():
    G, I = identity_pair(2)
    f = linear_classifier([[1.0, 0.0], [-1.0, 0.0]])
    x = torch.tensor([[0.5, 0.1], [-0.5, 0.2], [0.7, -0.3]], dtype=torch.float64)
    y = torch.tensor([0, 1, 0])
    cfg = ProjectionConfig(steps=0)
    assert defended_accuracy(f, G, I, x, y, cfg, DefenseMode.ENCODER) == 1.0
    assert defended_accuracy(f, G, I, x, y, cfg, DefenseMode.NONE) == 1.0
    assert purify(G, I, x, cfg, DefenseMode.NONE) is None


# ==================== METRICS / ABLATION / SPEED ====================

def test_identity_reconstruction_metrics():
    f = build_model(default_classifier_spec((2,), num_classes=3), seed=0, dtype=torch.float64).freeze()
    x = torch.randn(50, 2, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    y = f.module(x).argmax(dim=1)
    report = eval_metrics(x, x.clone(), y, f)
    assert report.mse_mean == 0.0 and report.mse_std == 0.0
    assert report.proxy_fid == pytest.approx(0.0, abs=1e-6)
    assert report.accuracy == 1.0
    assert report.n_samples == 50


def test_metrics_need_aligned_batches():
    f = build_model(default_classifier_spec((2,), num_classes=3), seed=0, dtype=torch.float64).freeze()
    x = torch.zeros(4, 2, dtype=torch.float64)
    with pytest.raises(DatasetError):
        eval_metrics(x, x[:3], torch.zeros(4, dtype=torch.long), f)


def test_zero_iteration_ablation_is_identical(tiny_generator):
    f = build_model(default_classifier_spec((2,), num_classes=2), seed=0, dtype=torch.float64).freeze()
    x = torch.rand(20, 2, dtype=torch.float64, generator=torch.Generator().manual_seed(2)) * 2 - 1
    y = (x[:, 0] > 0).long()
    report = ablation_report(tiny_generator, InverterTrainConfig(iterations=0, seed=3), f, x, y)
    assert report.full == report.ablated
    assert report.direction_holds


def test_speed_accuracy_rows():
    G, I = identity_pair(2)
    f = linear_classifier([[1.0, 0.0], [-1.0, 0.0]])
    x = torch.tensor([[0.5, 0.0], [-0.5, 0.0]], dtype=torch.float64)
    y = torch.tensor([0, 1])
    rows = speed_accuracy_curve(f, G, I, x, y, effective_iterations=[0, 40], restarts=4, alpha=0.1, seed=0)
    assert [r["effective_iterations"] for r in rows] == [0.0, 40.0]
    assert all(r["encoder_accuracy"] == 1.0 for r in rows)
    assert all(0.0 <= r["random_restart_accuracy"] <= 1.0 for r in rows)


def test_encoder_init_dominates_random_restarts_at_equal_budget():
    A = torch.tensor([[1.0, 0.0], [0.0, 0.5]], dtype=torch.float64)
    G = wrap_linear(A, NetworkRole.GENERATOR, "diag_generator")
    I = pair_with(wrap_linear(torch.linalg.inv(A), NetworkRole.INVERTER, "diag_inverter"), G)
    f = linear_classifier([[1.0, 1.0], [-1.0, -1.0]])
    z = torch.randn(30, 2, dtype=torch.float64, generator=torch.Generator().manual_seed(12)) * 0.5
    with torch.no_grad():
        x = G(z)
        y = f(x).argmax(dim=1)
    (row,) = speed_accuracy_curve(f, G, I, x, y, effective_iterations=[200], restarts=10, alpha=0.05, seed=2)
    assert row["encoder_accuracy"] == 1.0
    assert row["encoder_accuracy"] >= row["random_restart_accuracy"]
