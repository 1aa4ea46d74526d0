"""
Reconstruction Metrics
Per-sample MSE and proxy Inception-style scores computed over the deployed
classifier's own features and class probabilities.
"""

import logging
from typing import Tuple

import numpy as np
from scipy.special import log_softmax

from ganinvert.middleware.error_handler import DatasetError

logger = logging.getLogger(__name__)

# eigenvalues below -tol · λ_max count as clipped; smaller ones are round-off
CLIP_TOLERANCE = 1e-10


def mse_per_sample(originals: np.ndarray, reconstructions: np.ndarray) -> np.ndarray:
    """Mean over pixels of the squared error, one value per sample."""
    if originals.shape != reconstructions.shape:
        raise DatasetError(f"shape mismatch: {originals.shape} vs {reconstructions.shape}")
    diff = (originals.astype(np.float64) - reconstructions.astype(np.float64)).reshape(len(originals), -1)
    return np.mean(diff ** 2, axis=1)


# ==================== FRÉCHET DISTANCE ====================

def _symmetric_sqrt(mat: np.ndarray) -> Tuple[np.ndarray, bool]:
    """Square root of a symmetric PSD matrix; negative eigenvalues are clipped to 0 and flagged."""
    sym = 0.5 * (mat + mat.T)
    w, v = np.linalg.eigh(sym)
    clipped = bool(np.any(w < -CLIP_TOLERANCE * max(float(w.max()), 0.0)))
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return root, clipped


def trace_sqrt_product(sigma1: np.ndarray, sigma2: np.ndarray) -> Tuple[float, bool]:
    """
    Tr((Σ₁Σ₂)^{1/2}) via Tr((A Σ₂ A)^{1/2}) with A = Σ₁^{1/2}; both factors symmetric.

    Returns:
        Tuple of (trace, whether any eigenvalue had to be clipped)
    """
    a, clipped_a = _symmetric_sqrt(sigma1)
    inner, clipped_inner = _symmetric_sqrt(a @ sigma2 @ a)
    return float(np.trace(inner)), clipped_a or clipped_inner


def frechet_distance(mu1: np.ndarray, sigma1: np.ndarray, mu2: np.ndarray,
                     sigma2: np.ndarray) -> Tuple[float, bool]:
    """
    ‖μ₁ − μ₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^{1/2}) between two Gaussians.

    Returns:
        Tuple of (distance ≥ 0, covariance_clipped flag)
    """
    mu1, mu2 = np.atleast_1d(mu1).astype(np.float64), np.atleast_1d(mu2).astype(np.float64)
    sigma1, sigma2 = np.atleast_2d(sigma1).astype(np.float64), np.atleast_2d(sigma2).astype(np.float64)
    if mu1.shape != mu2.shape or sigma1.shape != sigma2.shape:
        raise DatasetError("Fréchet distance needs statistics of equal dimension")
    tr_sqrt, clipped = trace_sqrt_product(sigma1, sigma2)
    diff = mu1 - mu2
    value = float(diff @ diff + np.trace(sigma1) + np.trace(sigma2) - 2.0 * tr_sqrt)
    return max(value, 0.0), clipped


def feature_statistics(features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and unbiased covariance of (n, k) features."""
    features = np.asarray(features, dtype=np.float64).reshape(len(features), -1)
    if len(features) < 2:
        raise DatasetError("feature statistics need at least 2 samples")
    return features.mean(axis=0), np.atleast_2d(np.cov(features, rowvar=False))


def proxy_fid(features_a: np.ndarray, features_b: np.ndarray) -> Tuple[float, bool]:
    """Fréchet distance between Gaussian fits of two feature sets."""
    mu_a, sigma_a = feature_statistics(features_a)
    mu_b, sigma_b = feature_statistics(features_b)
    return frechet_distance(mu_a, sigma_a, mu_b, sigma_b)


# ==================== INCEPTION-STYLE SCORE ====================

def proxy_inception_score(logits: np.ndarray) -> float:
    """exp(E_x[KL(p(y|x) ‖ p(y))]) from classifier logits."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or len(logits) == 0:
        raise DatasetError("inception score needs a non-empty (n, classes) logit batch")
    log_p = log_softmax(logits, axis=1)
    p = np.exp(log_p)
    log_marginal = np.log(np.clip(p.mean(axis=0), 1e-300, None))
    kl = np.sum(p * (log_p - log_marginal), axis=1)
    return float(np.exp(kl.mean()))
