"""
Models __init__ file
"""

from .networks import (
    ModelHandle,
    build_model,
    default_classifier_spec,
    default_generator_spec,
    ensure_paired,
    mirror_spec,
    pair_with,
    validate_spec,
)
from .schemas import (
    AttackFamily,
    AttackSpec,
    DefenseMode,
    InitMode,
    LayerSpec,
    NetworkRole,
    NetworkSpec,
    ProjectionConfig,
    TheoremReport,
)

__all__ = [
    "ModelHandle",
    "build_model",
    "default_classifier_spec",
    "default_generator_spec",
    "ensure_paired",
    "mirror_spec",
    "pair_with",
    "validate_spec",
    "AttackFamily",
    "AttackSpec",
    "DefenseMode",
    "InitMode",
    "LayerSpec",
    "NetworkRole",
    "NetworkSpec",
    "ProjectionConfig",
    "TheoremReport",
]
