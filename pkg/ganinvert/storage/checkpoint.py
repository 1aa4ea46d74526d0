"""
Checkpoint Persistence
save_checkpoint / load_checkpoint on top of the named-array archive.
"""

import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch

from ganinvert.middleware.error_handler import (
    CheckpointIntegrityError,
    CheckpointSpecMismatchError,
    SpecError,
)
from ganinvert.models.networks import ModelHandle, build_model
from ganinvert.models.schemas import NetworkSpec
from ganinvert.storage.archive import read_archive, write_archive

logger = logging.getLogger(__name__)

_TORCH_DTYPES = {np.dtype("float32"): torch.float32, np.dtype("float64"): torch.float64}


def save_checkpoint(model: ModelHandle, path: Union[str, Path]) -> Path:
    """
    Persist a model's parameters and buffers with its spec and provenance.

    Args:
        model: Handle built from a declarative spec
        path: Destination file

    Returns:
        Path: Written archive
    """
    if model.spec is None:
        raise SpecError("only spec-built models can be checkpointed")

    metadata = {
        "kind": "checkpoint",
        "role": model.role.value,
        "spec": model.spec.model_dump(mode="json"),
        "spec_hash": model.spec_hash,
        "provenance": {k: v for k, v in model.metadata.items()},
    }
    written = write_archive(path, model.named_arrays(), metadata)
    logger.info(f"Saved {model.role.value} checkpoint to {written}")
    return written


def load_checkpoint(path: Union[str, Path], expected_spec: Optional[NetworkSpec] = None) -> ModelHandle:
    """
    Load a checkpoint, verifying integrity and (optionally) the spec.

    Args:
        path: Archive file
        expected_spec: Reject the archive unless its spec hash matches

    Returns:
        ModelHandle: Model in eval mode with the stored provenance

    Raises:
        CheckpointIntegrityError: Corrupt or truncated archive
        CheckpointSpecMismatchError: Spec hash or parameter shapes differ
    """
    arrays, metadata = read_archive(path)
    if metadata.get("kind") != "checkpoint":
        raise CheckpointIntegrityError(f"{path} holds '{metadata.get('kind')}', not a checkpoint")

    spec = NetworkSpec.model_validate(metadata["spec"])
    if spec.spec_hash() != metadata.get("spec_hash"):
        raise CheckpointIntegrityError(f"{path}: stored spec does not match its recorded hash")
    if expected_spec is not None and expected_spec.spec_hash() != spec.spec_hash():
        raise CheckpointSpecMismatchError(
            f"{path}: archive spec {spec.spec_hash()[:12]} != expected {expected_spec.spec_hash()[:12]}"
        )

    float_dtypes = {a.dtype for a in arrays.values() if a.dtype.kind == "f"}
    dtype = _TORCH_DTYPES.get(next(iter(float_dtypes)), torch.float32) if float_dtypes else torch.float32

    handle = build_model(spec, seed=0, dtype=dtype)
    state = handle.module.state_dict()
    if set(state) != set(arrays):
        raise CheckpointSpecMismatchError(
            f"{path}: parameter names differ (missing {sorted(set(state) - set(arrays))}, "
            f"unexpected {sorted(set(arrays) - set(state))})"
        )
    for name, tensor in state.items():
        if tuple(tensor.shape) != arrays[name].shape:
            raise CheckpointSpecMismatchError(
                f"{path}: {name} has shape {arrays[name].shape}, model expects {tuple(tensor.shape)}"
            )

    handle.module.load_state_dict({k: torch.from_numpy(v) for k, v in arrays.items()})
    handle.metadata = dict(metadata.get("provenance", {}))
    handle.module.eval()
    logger.info(f"Loaded {spec.role.value} checkpoint from {path}")
    return handle
