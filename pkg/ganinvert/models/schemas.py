"""
Pydantic Schemas
Typed, validated contracts for network specs, algorithm configs and reports.
"""

import hashlib
import json
import math
from enum import Enum
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


def canonical_hash(payload: Any) -> str:
    """SHA-256 of the canonical JSON encoding of a JSON-able payload."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# Enums
class NetworkRole(str, Enum):
    """The four network roles"""
    GENERATOR = "generator"
    INVERTER = "inverter"
    DISCRIMINATOR = "discriminator"
    CLASSIFIER = "classifier"


class LayerKind(str, Enum):
    DENSE = "dense"
    CONV = "conv"
    CONV_TRANSPOSE = "conv_transpose"
    RESHAPE = "reshape"
    FLATTEN = "flatten"


class Activation(str, Enum):
    NONE = "none"
    RELU = "relu"
    LEAKY_RELU = "leaky_relu"
    TANH = "tanh"
    SIGMOID = "sigmoid"


class AttackFamily(str, Enum):
    """Attack families"""
    FGSM = "fgsm"
    CW_L2 = "cw_l2"
    REPARAM = "reparam"
    BPDA = "bpda"
    BLACKBOX = "blackbox"


class InitMode(str, Enum):
    RANDOM = "random"
    ENCODER = "encoder"


class DefenseMode(str, Enum):
    """How inputs are purified before classification"""
    NONE = "none"
    DIRECT = "direct"
    ENCODER = "encoder"


# ==================== NETWORK SCHEMAS ====================

class LayerSpec(BaseModel):
    """One rung of a layer ladder"""
    kind: LayerKind = Field(..., description="Layer type")
    out: Optional[int] = Field(None, gt=0, description="Output features (dense) or channels (conv)")
    kernel: int = Field(4, gt=0, description="Kernel size (conv layers)")
    stride: int = Field(2, gt=0, description="Stride (conv layers)")
    padding: int = Field(1, ge=0, description="Padding (conv layers)")
    output_padding: int = Field(0, ge=0, description="Extra output rows/cols (conv_transpose)")
    shape: Optional[List[int]] = Field(None, description="Target (C, H, W) for reshape")
    activation: Activation = Field(Activation.NONE, description="Activation after the layer")
    batch_norm: bool = Field(False, description="BatchNorm before the activation")

    model_config = ConfigDict(
        use_enum_values=False,
        json_schema_extra={
            "example": {"kind": "conv_transpose", "out": 64, "kernel": 4, "stride": 2,
                        "padding": 1, "activation": "relu", "batch_norm": True}
        }
    )

    @model_validator(mode="after")
    def _check_fields(self) -> "LayerSpec":
        if self.kind in (LayerKind.DENSE, LayerKind.CONV, LayerKind.CONV_TRANSPOSE) and self.out is None:
            raise ValueError(f"{self.kind.value} layer needs 'out'")
        if self.kind == LayerKind.RESHAPE and not self.shape:
            raise ValueError("reshape layer needs 'shape'")
        return self


class NetworkSpec(BaseModel):
    """Declarative network description"""
    role: NetworkRole = Field(..., description="Network role")
    latent_dim: int = Field(..., gt=0, description="Latent dimensionality d")
    image_shape: Tuple[int, ...] = Field(..., description="(height, width, channels) or (features,)")
    layers: List[LayerSpec] = Field(..., min_length=1, description="Layer ladder, input to output")
    num_classes: Optional[int] = Field(None, gt=1, description="Classifier output classes")

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "role": "generator",
                "latent_dim": 64,
                "image_shape": [28, 28, 1],
                "layers": [
                    {"kind": "dense", "out": 6272, "activation": "relu"},
                    {"kind": "reshape", "shape": [128, 7, 7]},
                    {"kind": "conv_transpose", "out": 64, "activation": "relu"},
                    {"kind": "conv_transpose", "out": 1, "activation": "tanh"},
                ],
            }
        }
    )

    @field_validator("image_shape")
    @classmethod
    def _check_image_shape(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if len(v) not in (1, 3) or any(s <= 0 for s in v):
            raise ValueError("image_shape must be (h, w, c) or (features,) with positive sizes")
        return tuple(v)

    @property
    def is_vector_data(self) -> bool:
        return len(self.image_shape) == 1

    @property
    def image_size(self) -> int:
        """Number of scalars in one image (h·w·c)."""
        return math.prod(self.image_shape)

    def spec_hash(self) -> str:
        return canonical_hash(self.model_dump(mode="json"))


# ==================== TRAINING CONFIGS ====================

class GanTrainConfig(BaseModel):
    """GAN pre-training hyperparameters"""
    iterations: int = Field(20000, gt=0, description="Generator updates")
    batch_size: int = Field(64, gt=0)
    learning_rate: float = Field(2e-4, gt=0)
    beta1: float = Field(0.5, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    latent_dim: int = Field(64, gt=0)
    seed: int = Field(0)
    log_interval: int = Field(500, gt=0)
    num_workers: int = Field(0, ge=0, description="DataLoader prefetch workers")

    model_config = ConfigDict(
        json_schema_extra={"example": {"iterations": 20000, "batch_size": 64, "beta1": 0.5, "beta2": 0.999}}
    )


class ClassifierTrainConfig(BaseModel):
    """Classifier training hyperparameters"""
    iterations: int = Field(3000, gt=0)
    batch_size: int = Field(64, gt=0)
    learning_rate: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    seed: int = Field(0)
    log_interval: int = Field(500, gt=0)
    num_workers: int = Field(0, ge=0)


class LossWeights(BaseModel):
    """Effective loss weights after ablation / margin resolution"""
    lambda_adv: float
    lambda_semantic: float
    lambda_latent: float
    eta: float


class InverterTrainConfig(BaseModel):
    """Data-free inverter training hyperparameters"""
    lambda_adv: float = Field(1.0, ge=0.0, description="λ1, adversarial weight")
    lambda_semantic: float = Field(100.0, ge=0.0, description="λ2, semantic weight")
    lambda_latent: float = Field(1.0, ge=0.0, description="λ3, latent weight")
    eta: Optional[float] = Field(
        None, ge=0.0,
        description="Hinge margin in image L2 units; default 0.05·sqrt(h·w·c)"
    )
    iterations: int = Field(20000, ge=0)
    batch_size: int = Field(64, gt=0)
    learning_rate: float = Field(2e-4, gt=0)
    beta1: float = Field(0.5, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    seed: int = Field(0)
    disable_adv: bool = Field(False, description="Ablation: η=0, λ1=λ3=0, λ2=1")
    prob_floor: float = Field(1e-7, gt=0.0, lt=0.5, description="Clamp for D probabilities before log")
    log_interval: int = Field(500, gt=0)
    record_interval: int = Field(1, gt=0, description="Keep every k-th iteration in the returned log")

    model_config = ConfigDict(
        json_schema_extra={"example": {"lambda_adv": 1.0, "lambda_semantic": 100.0, "lambda_latent": 1.0,
                                       "iterations": 20000, "disable_adv": False}}
    )

    def resolve_weights(self, image_shape: Tuple[int, ...]) -> LossWeights:
        """Apply the ablation flag and the default hinge margin."""
        if self.disable_adv:
            return LossWeights(lambda_adv=0.0, lambda_semantic=1.0, lambda_latent=0.0, eta=0.0)
        eta = self.eta if self.eta is not None else 0.05 * math.sqrt(math.prod(image_shape))
        return LossWeights(
            lambda_adv=self.lambda_adv,
            lambda_semantic=self.lambda_semantic,
            lambda_latent=self.lambda_latent,
            eta=eta,
        )


# ==================== PROJECTION / ATTACK CONFIGS ====================

class ProjectionConfig(BaseModel):
    """Latent projection settings"""
    steps: int = Field(200, ge=0, description="T, gradient steps per chain")
    alpha: float = Field(0.1, gt=0.0, description="Step size")
    restarts: int = Field(10, ge=1, description="R, random restarts (direct mode only)")
    init_mode: InitMode = Field(InitMode.RANDOM)
    seed: int = Field(0)
    batch_size: int = Field(256, gt=0, description="Images projected together")

    @model_validator(mode="after")
    def _encoder_single_chain(self) -> "ProjectionConfig":
        if self.init_mode == InitMode.ENCODER and self.restarts != 1:
            self.restarts = 1
        return self

    @property
    def effective_iterations(self) -> int:
        return self.restarts * self.steps


class AttackSpec(BaseModel):
    """One perturbation construction"""
    family: AttackFamily = Field(...)
    eps: float = Field(0.3, ge=0.0, le=1.0, description="L∞ budget in [0,1] pixel units")
    cw_binary_steps: int = Field(6, gt=0)
    cw_learning_rate: float = Field(0.2, gt=0.0)
    cw_iterations: int = Field(100, gt=0)
    cw_kappa: float = Field(0.0, ge=0.0)
    cw_initial_const: float = Field(1e-2, gt=0.0)
    bpda_steps: int = Field(50, gt=0)
    bpda_step_size: Optional[float] = Field(None, gt=0.0, description="[0,1] units; default eps/10")
    blackbox_rounds: int = Field(5, ge=0)
    blackbox_lambda: float = Field(0.1, gt=0.0, description="Jacobian augmentation step ([0,1] units)")
    blackbox_epochs: int = Field(10, gt=0)
    blackbox_learning_rate: float = Field(1e-3, gt=0.0)
    seed: int = Field(0)
    batch_size: int = Field(128, gt=0)

    model_config = ConfigDict(
        json_schema_extra={"example": {"family": "fgsm", "eps": 0.3}}
    )

    @property
    def eps_internal(self) -> float:
        """Budget in [-1,1] units."""
        return 2.0 * self.eps

    @property
    def bpda_step_internal(self) -> float:
        step = self.bpda_step_size if self.bpda_step_size is not None else self.eps / 10.0
        return 2.0 * step


class TheoremConfig(BaseModel):
    """Inversion-guarantee validation settings"""
    n_train: int = Field(10000, ge=1, description="n, training latents")
    m: int = Field(10000, ge=1, description="Fresh latents for the empirical probability")
    eps_prime: Optional[float] = Field(None, gt=0.0, description="Single test tolerance ε′")
    eps_prime_multipliers: List[float] = Field(
        default_factory=lambda: [0.5, 1.0, 2.0, 4.0],
        description="Sweep ε′ = k·sqrt(d) when eps_prime is unset",
    )
    n_pairs: int = Field(1000, ge=1)
    local_scale: float = Field(1e-3, gt=0.0, description="Perturbation size for local Lipschitz pairs")
    seed: int = Field(0)
    batch_size: int = Field(512, gt=0)


# ==================== REPORTS ====================

class TrainingLog(BaseModel):
    """Loss curves for one training run"""
    run: str = Field(..., description="gan | classifier | inverter")
    config_hash: str
    seed: int
    entries: List[Dict[str, float]] = Field(default_factory=list)

    def column(self, key: str) -> List[float]:
        return [e[key] for e in self.entries if key in e]


class DetectionRecord(BaseModel):
    """One detection score"""
    score: float = Field(..., ge=0.0)
    attacked: bool
    family: str
    sample_id: int


class MetricsReport(BaseModel):
    """Reconstruction quality"""
    mse_mean: float = Field(..., ge=0.0)
    mse_std: float = Field(..., ge=0.0)
    accuracy: float = Field(..., ge=0.0, le=1.0)
    proxy_is: float
    proxy_fid: float = Field(..., ge=0.0)
    n_samples: int
    covariance_clipped: bool = Field(False, description="Negative eigenvalues clipped in the FID square root")


class AblationReport(BaseModel):
    full: MetricsReport
    ablated: MetricsReport
    direction_holds: bool = Field(..., description="ablated MSE ≤ full MSE and ablated FID ≥ full FID")


class TheoremReport(BaseModel):
    """Inversion-guarantee check for one ε′"""
    n: int
    d: int
    eps: float
    eps_prime: float
    lipschitz_estimate: float = Field(..., description="L̂, a lower bound on L")
    p_hat: float = Field(..., ge=0.0, le=1.0)
    p_hat_ci: Tuple[float, float]
    bound: Optional[float] = Field(None, description="B(n,d,ε,ε′,L̂)")
    bound_at_2l: Optional[float] = Field(None, description="B(n,d,ε,ε′,2·L̂) sensitivity column")
    questionable_regime: bool = False
    status: Literal["satisfied", "unresolved", "violated", "vacuous", "questionable_regime", "hypothesis_unmet"]
    m: int
    seed: int
