"""
Experiment Configuration
The JSON experiment file the runner executes: stage list, data source and
one config block per stage. Published as a JSON schema by `ganinvert schema`.
"""

import json
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ganinvert.middleware.error_handler import ConfigError, config_error_from_validation
from ganinvert.models.schemas import (
    AttackFamily,
    AttackSpec,
    ClassifierTrainConfig,
    DefenseMode,
    GanTrainConfig,
    InitMode,
    InverterTrainConfig,
    ProjectionConfig,
    TheoremConfig,
)

logger = logging.getLogger(__name__)


class StageName(str, Enum):
    """Pipeline stages, in execution order"""
    PRETRAIN = "pretrain"
    TRAIN_INVERTER = "train-inverter"
    ATTACK = "attack"
    DEFEND = "defend"
    DETECT = "detect"
    METRICS = "metrics"
    VALIDATE_THEOREM = "validate-theorem"
    REPORT = "report"


STAGE_ORDER: List[StageName] = list(StageName)


class DataConfig(BaseModel):
    """Where training and evaluation images come from"""
    kind: Literal["mnist", "gaussians"] = Field("mnist", description="IDX directory or synthetic 2-D modes")
    mnist_dir: Optional[Path] = Field(None, description="Directory with the four IDX files (GANINVERT_MNIST_DIR if unset)")
    train_limit: Optional[int] = Field(None, gt=0, description="Use only the first N training images")
    k_modes: int = Field(8, ge=1)
    n_train: int = Field(20000, ge=1, description="Synthetic training points")
    n_test: int = Field(2000, ge=1, description="Synthetic test points")
    radius: float = Field(0.8, ge=0.0, description="Ring radius; inside (-1, 1) so tanh generators can reach every mode")
    std: float = Field(0.02, gt=0.0)


class AttackStageConfig(BaseModel):
    specs: List[AttackSpec] = Field(
        default_factory=lambda: [AttackSpec(family=f) for f in AttackFamily],
        description="One adversarial set per spec",
    )
    n_samples: int = Field(1000, gt=0, description="Test images attacked")
    seed_set_size: int = Field(150, gt=0, description="Black-box substitute seed set (held-out test images)")

    @field_validator("specs")
    @classmethod
    def _unique_families(cls, v: List[AttackSpec]) -> List[AttackSpec]:
        families = [s.family for s in v]
        if len(set(families)) != len(families):
            raise ValueError("at most one spec per attack family")
        return v


class DefendStageConfig(BaseModel):
    modes: List[DefenseMode] = Field(default_factory=lambda: list(DefenseMode))
    encoder_projection: ProjectionConfig = Field(
        default_factory=lambda: ProjectionConfig(steps=1000, init_mode=InitMode.ENCODER, restarts=1)
    )
    direct_projection: ProjectionConfig = Field(
        default_factory=lambda: ProjectionConfig(steps=200, restarts=10, init_mode=InitMode.RANDOM)
    )
    speed_accuracy_iterations: List[int] = Field(default_factory=lambda: [50, 200, 1000])
    speed_accuracy_restarts: int = Field(10, ge=1)
    speed_accuracy_samples: int = Field(200, gt=0)


class DetectStageConfig(BaseModel):
    spaces: List[Literal["feature", "image"]] = Field(default_factory=lambda: ["feature", "image"])


class MetricsStageConfig(BaseModel):
    n_samples: int = Field(1000, gt=0)
    direct_steps: int = Field(200, ge=0)
    encoder_steps: List[int] = Field(default_factory=lambda: [0, 200])
    ablation: bool = Field(False, description="Also train the adversarial-loss-free inverter and compare")


class ExperimentConfig(BaseModel):
    """A complete, reproducible experiment"""
    seed: int = Field(..., description="Global seed; every stage config inherits it")
    artifact_dir: Path = Field(Path("artifacts"), description="Overridden by GANINVERT_ARTIFACT_DIR")
    stages: List[StageName] = Field(default_factory=lambda: list(STAGE_ORDER))
    data: DataConfig = Field(default_factory=DataConfig)
    gan: GanTrainConfig = Field(default_factory=GanTrainConfig)
    classifier: ClassifierTrainConfig = Field(default_factory=ClassifierTrainConfig)
    inverter: InverterTrainConfig = Field(default_factory=InverterTrainConfig)
    attack: AttackStageConfig = Field(default_factory=AttackStageConfig)
    defend: DefendStageConfig = Field(default_factory=DefendStageConfig)
    detect: DetectStageConfig = Field(default_factory=DetectStageConfig)
    metrics: MetricsStageConfig = Field(default_factory=MetricsStageConfig)
    theorem: TheoremConfig = Field(default_factory=TheoremConfig)

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "seed": 0,
                "stages": ["pretrain", "train-inverter", "validate-theorem"],
                "data": {"kind": "gaussians", "k_modes": 8},
                "gan": {"iterations": 2000, "latent_dim": 2},
                "inverter": {"iterations": 2000},
            }
        }
    )

    @field_validator("stages")
    @classmethod
    def _ordered_stages(cls, v: List[StageName]) -> List[StageName]:
        if len(set(v)) != len(v):
            raise ValueError("stages must not repeat")
        positions = [STAGE_ORDER.index(s) for s in v]
        if positions != sorted(positions):
            raise ValueError(f"stages must follow the order {[s.value for s in STAGE_ORDER]}")
        return v

    @model_validator(mode="after")
    def _inherit_seed(self) -> "ExperimentConfig":
        for block in (self.gan, self.classifier, self.inverter, self.theorem,
                      self.defend.encoder_projection, self.defend.direct_projection):
            block.seed = self.seed
        for spec in self.attack.specs:
            spec.seed = self.seed
        return self


def load_experiment(path: Union[str, Path], seed: Optional[int] = None) -> ExperimentConfig:
    """
    Load and validate an experiment file.

    Args:
        path: JSON file
        seed: Overrides the file's global seed

    Returns:
        ExperimentConfig

    Raises:
        ConfigError: Unreadable file or schema violation
    """
    path = Path(path)
    try:
        payload: Dict[str, Any] = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read experiment config {path}: {e}") from e
    if seed is not None:
        payload["seed"] = seed
    try:
        return ExperimentConfig.model_validate(payload)
    except ValidationError as e:
        raise config_error_from_validation(e, source=str(path)) from e


def experiment_schema() -> Dict[str, Any]:
    return ExperimentConfig.model_json_schema()
