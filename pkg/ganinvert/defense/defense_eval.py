"""
Defense Evaluation
Purify-then-classify, the feature-space attack-detection score and its AUC,
reconstruction metrics, the adversarial-loss ablation and the
speed / accuracy study over effective inference iterations.
"""

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
from sklearn.metrics import roc_auc_score

from ganinvert.defense.metrics import mse_per_sample, proxy_fid, proxy_inception_score
from ganinvert.defense.projection import ProjectionResult, direct_invert, encoder_project
from ganinvert.middleware.error_handler import DatasetError, ProjectionError, SpecError
from ganinvert.models.networks import ModelHandle, classifier_features, classifier_logits
from ganinvert.models.schemas import (
    AblationReport,
    DefenseMode,
    DetectionRecord,
    InitMode,
    InverterTrainConfig,
    MetricsReport,
    ProjectionConfig,
)
from ganinvert.training.gan_pretrain import predict
from ganinvert.training.inverter_training import train_inverter
from ganinvert.training.losses import safe_l2_norm

logger = logging.getLogger(__name__)


# ==================== PURIFICATION ====================

def purify(
    G: ModelHandle,
    I: Optional[ModelHandle],
    x: torch.Tensor,
    cfg: ProjectionConfig,
    mode: DefenseMode = DefenseMode.ENCODER,
) -> Optional[ProjectionResult]:
    """
    Project x onto the generator manifold with the chosen defense.

    Returns:
        ProjectionResult, or None for mode "none"
    """
    mode = DefenseMode(mode)
    if mode == DefenseMode.NONE:
        return None
    if mode == DefenseMode.DIRECT:
        return direct_invert(G, x, cfg.model_copy(update={"init_mode": InitMode.RANDOM}))
    if I is None:
        raise ProjectionError("encoder defense needs an inverter")
    return encoder_project(G, I, x, cfg.model_copy(update={"init_mode": InitMode.ENCODER, "restarts": 1}))


def defend_classify(
    classifier: ModelHandle,
    G: ModelHandle,
    I: Optional[ModelHandle],
    x: torch.Tensor,
    cfg: ProjectionConfig,
    mode: DefenseMode = DefenseMode.ENCODER,
) -> torch.Tensor:
    """
    argmax f(x_proj), where x_proj is the projection of x (x itself for mode "none").

    Args:
        classifier: Deployed classifier f
        G: Generator
        I: Inverter paired with G (encoder mode)
        x: Image batch
        cfg: Projection settings
        mode: none | direct | encoder

    Returns:
        torch.Tensor: (n,) predicted labels
    """
    result = purify(G, I, x, cfg, mode)
    purified = x if result is None else result.x_proj
    return predict(classifier, purified, batch_size=cfg.batch_size)


def defended_accuracy(classifier: ModelHandle, G: ModelHandle, I: Optional[ModelHandle],
                      x: torch.Tensor, y: torch.Tensor, cfg: ProjectionConfig,
                      mode: DefenseMode = DefenseMode.ENCODER) -> float:
    labels = defend_classify(classifier, G, I, x, cfg, mode)
    return (labels == y).double().mean().item()


# ==================== DETECTION ====================

def detection_score(
    classifier: ModelHandle,
    x: torch.Tensor,
    x_proj: torch.Tensor,
    space: str = "feature",
) -> torch.Tensor:
    """
    A(x) = ‖Φ(x) − Φ(x_proj)‖₂ per sample (or ‖x − x_proj‖₂ with space="image").

    Args:
        classifier: Deployed classifier supplying Φ
        x: Input batch
        x_proj: Its projection
        space: "feature" or "image"

    Returns:
        torch.Tensor: (n,) non-negative scores
    """
    if x.shape != x_proj.shape:
        raise SpecError(f"detection needs matching batches, got {tuple(x.shape)} and {tuple(x_proj.shape)}")
    with torch.no_grad():
        if space == "image":
            return safe_l2_norm(x - x_proj)
        if space != "feature":
            raise SpecError(f"unknown detection space '{space}'")
        return safe_l2_norm(classifier_features(classifier, x) - classifier_features(classifier, x_proj))


def detection_auc(clean_scores: Sequence[float], attacked_scores: Sequence[float]) -> float:
    """
    P(attacked score > clean score), ties counted half.

    Raises:
        DatasetError: Either list is empty or holds a non-finite score
    """
    clean = np.asarray(clean_scores, dtype=np.float64).ravel()
    attacked = np.asarray(attacked_scores, dtype=np.float64).ravel()
    if clean.size == 0 or attacked.size == 0:
        raise DatasetError("detection AUC needs non-empty clean and attacked score lists")
    if not (np.isfinite(clean).all() and np.isfinite(attacked).all()):
        raise DatasetError("detection AUC got non-finite scores")
    labels = np.concatenate([np.zeros(clean.size), np.ones(attacked.size)])
    return float(roc_auc_score(labels, np.concatenate([clean, attacked])))


def detection_records(scores: torch.Tensor, attacked: bool, family: str) -> List[DetectionRecord]:
    return [
        DetectionRecord(score=float(s), attacked=attacked, family=family, sample_id=i)
        for i, s in enumerate(scores.tolist())
    ]


# ==================== RECONSTRUCTION METRICS ====================

def eval_metrics(
    originals: torch.Tensor,
    reconstructions: torch.Tensor,
    labels: torch.Tensor,
    classifier: ModelHandle,
    batch_size: int = 512,
) -> MetricsReport:
    """
    Reconstruction quality of aligned batches.

    Proxy scores use the classifier's own features Φ and class probabilities.

    Args:
        originals: Input images
        reconstructions: Their reconstructions
        labels: True labels of the originals
        classifier: Classifier f = C ∘ Φ
        batch_size: Evaluation batch size

    Returns:
        MetricsReport
    """
    if originals.shape != reconstructions.shape:
        raise DatasetError(f"misaligned batches: {tuple(originals.shape)} vs {tuple(reconstructions.shape)}")

    def _batched(fn, x: torch.Tensor) -> np.ndarray:
        with torch.no_grad():
            return torch.cat([fn(classifier, x[i:i + batch_size])
                              for i in range(0, x.shape[0], batch_size)]).double().numpy()

    mse = mse_per_sample(originals.detach().numpy(), reconstructions.detach().numpy())
    logits = _batched(classifier_logits, reconstructions)
    fid, clipped = proxy_fid(_batched(classifier_features, originals), _batched(classifier_features, reconstructions))
    if clipped:
        logger.warning("Covariance square root clipped negative eigenvalues")

    return MetricsReport(
        mse_mean=float(mse.mean()),
        mse_std=float(mse.std()),
        accuracy=float((logits.argmax(axis=1) == labels.numpy()).mean()),
        proxy_is=proxy_inception_score(logits),
        proxy_fid=fid,
        n_samples=int(originals.shape[0]),
        covariance_clipped=clipped,
    )


def ablation_report(
    G: ModelHandle,
    cfg: InverterTrainConfig,
    classifier: ModelHandle,
    x: torch.Tensor,
    y: torch.Tensor,
) -> AblationReport:
    """
    Train a full and an adversarial-loss-free inverter under identical seeds
    and budgets, then compare their encoder reconstructions (T = 0) of x.

    Args:
        G: Frozen generator
        cfg: Full-objective config (its disable_adv flag is ignored)
        classifier: Classifier for accuracy and proxy scores
        x: Evaluation images
        y: Their labels

    Returns:
        AblationReport: Both metric sets and whether ablated MSE ≤ full MSE
        and ablated FID ≥ full FID
    """
    reports: Dict[bool, MetricsReport] = {}
    zero_steps = ProjectionConfig(steps=0, init_mode=InitMode.ENCODER)
    for disabled in (False, True):
        I, _, _ = train_inverter(G, cfg.model_copy(update={"disable_adv": disabled}))
        recon = encoder_project(G, I, x, zero_steps).x_proj
        reports[disabled] = eval_metrics(x, recon, y, classifier)
        logger.info(f"Ablation disable_adv={disabled}: mse={reports[disabled].mse_mean:.4f} "
                    f"fid={reports[disabled].proxy_fid:.4f}")

    full, ablated = reports[False], reports[True]
    return AblationReport(
        full=full,
        ablated=ablated,
        direction_holds=ablated.mse_mean <= full.mse_mean and ablated.proxy_fid >= full.proxy_fid,
    )


# ==================== SPEED / ACCURACY ====================

def speed_accuracy_curve(
    classifier: ModelHandle,
    G: ModelHandle,
    I: ModelHandle,
    x: torch.Tensor,
    y: torch.Tensor,
    effective_iterations: Sequence[int],
    restarts: int = 10,
    alpha: float = 0.1,
    seed: int = 0,
    batch_size: int = 256,
) -> List[Dict[str, float]]:
    """
    Clean defended accuracy at matched effective iterations E:
    encoder init (R=1, T=E) versus random restarts (R, T=E // R).

    Returns:
        List of rows {effective_iterations, encoder_accuracy, random_restart_accuracy}
    """
    rows = []
    for budget in effective_iterations:
        enc_cfg = ProjectionConfig(steps=budget, alpha=alpha, init_mode=InitMode.ENCODER,
                                   seed=seed, batch_size=batch_size)
        rand_cfg = ProjectionConfig(steps=budget // restarts, alpha=alpha, restarts=restarts,
                                    init_mode=InitMode.RANDOM, seed=seed, batch_size=batch_size)
        row = {
            "effective_iterations": float(budget),
            "encoder_accuracy": defended_accuracy(classifier, G, I, x, y, enc_cfg, DefenseMode.ENCODER),
            "random_restart_accuracy": defended_accuracy(classifier, G, None, x, y, rand_cfg, DefenseMode.DIRECT),
        }
        logger.info(f"E={budget}: encoder {row['encoder_accuracy']:.3f} "
                    f"random-restart {row['random_restart_accuracy']:.3f}")
        rows.append(row)
    return rows
