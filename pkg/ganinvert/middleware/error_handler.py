"""
Error Handling
Exception hierarchy for the inversion / purification toolkit and the mapping
from exceptions to stable CLI exit codes.
"""

import logging
from enum import IntEnum
from typing import Any, Dict, Iterable, Optional

from pydantic import ValidationError

logger = logging.getLogger(__name__)


class ExitCode(IntEnum):
    """Stable process exit codes (documented in README)."""
    OK = 0
    UNEXPECTED = 1
    CONFIG = 2
    MISSING_DEPENDENCY = 3
    STAGE_FAILURE = 4
    LOCKED = 5
    INTEGRITY = 6
    DATA = 7


class GanInvertError(Exception):
    """Base class for all expected failures."""

    exit_code: ExitCode = ExitCode.UNEXPECTED
    user_message: str = "Operation failed"

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.details: Dict[str, Any] = details

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error": type(self).__name__,
            "message": str(self),
            "user_message": self.user_message,
            "exit_code": int(self.exit_code),
            **self.details,
        }


# ==================== MODEL / STORAGE ERRORS ====================

class SpecError(GanInvertError):
    """A network spec does not chain (or violates a role invariant)."""
    exit_code = ExitCode.CONFIG
    user_message = "Network specification is invalid."

    def __init__(self, message: str, layer_index: Optional[int] = None):
        super().__init__(message, layer_index=layer_index)
        self.layer_index = layer_index


class CheckpointIntegrityError(GanInvertError):
    exit_code = ExitCode.INTEGRITY
    user_message = "Archive is corrupt or truncated."


class CheckpointSpecMismatchError(GanInvertError):
    exit_code = ExitCode.INTEGRITY
    user_message = "Checkpoint does not match the expected network specification."


class IdxFormatError(GanInvertError):
    exit_code = ExitCode.DATA
    user_message = "IDX file is malformed."


class DatasetError(GanInvertError):
    exit_code = ExitCode.DATA
    user_message = "Dataset request is invalid."


# ==================== ALGORITHM ERRORS ====================

class TrainingDivergenceError(GanInvertError):
    """Non-finite loss during training."""
    exit_code = ExitCode.STAGE_FAILURE
    user_message = "Training diverged (non-finite loss)."

    def __init__(self, message: str, iteration: int, component: str):
        super().__init__(message, iteration=iteration, component=component)
        self.iteration = iteration
        self.component = component


class ProjectionError(GanInvertError):
    exit_code = ExitCode.STAGE_FAILURE
    user_message = "Latent projection failed."


class PairingError(GanInvertError):
    """Inverter was not trained for the given generator."""
    exit_code = ExitCode.CONFIG
    user_message = "Inverter and generator do not belong together."


class AttackError(GanInvertError):
    exit_code = ExitCode.STAGE_FAILURE
    user_message = "Attack construction failed."

    def __init__(self, message: str, sample_index: Optional[int] = None):
        super().__init__(message, sample_index=sample_index)
        self.sample_index = sample_index


class BudgetViolationError(GanInvertError):
    exit_code = ExitCode.STAGE_FAILURE
    user_message = "An adversarial example left its perturbation budget."


class QueryError(GanInvertError):
    exit_code = ExitCode.STAGE_FAILURE
    user_message = "Label oracle query failed."


class TheoremPreconditionError(GanInvertError):
    exit_code = ExitCode.CONFIG
    user_message = "Bound arguments violate the theorem hypotheses."


# ==================== RUNNER ERRORS ====================

class ConfigError(GanInvertError):
    exit_code = ExitCode.CONFIG
    user_message = "Configuration failed validation."


class MissingDependencyError(GanInvertError):
    exit_code = ExitCode.MISSING_DEPENDENCY
    user_message = "A stage dependency is missing."


class StageFailureError(GanInvertError):
    exit_code = ExitCode.STAGE_FAILURE
    user_message = "A pipeline stage failed."


class LockError(GanInvertError):
    exit_code = ExitCode.LOCKED
    user_message = "Another runner holds the artifact directory."


class ReportError(GanInvertError):
    exit_code = ExitCode.MISSING_DEPENDENCY
    user_message = "Report inputs are missing."

    def __init__(self, message: str, missing: Iterable[str] = ()):
        missing = sorted(missing)
        super().__init__(message, missing=missing)
        self.missing = missing


def config_error_from_validation(exc: ValidationError, source: str = "config") -> ConfigError:
    """Convert a pydantic validation error into a ConfigError."""
    logger.warning(f"Validation error in {source}: {exc}")
    problems = "; ".join(
        f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors()
    )
    return ConfigError(f"{source} failed validation: {problems}")


def handle_cli_error(exc: BaseException) -> int:
    """
    Map an exception to its exit code, logging a user-facing message.

    Args:
        exc: Exception raised by a command

    Returns:
        int: Process exit code
    """
    if isinstance(exc, ValidationError):
        exc = config_error_from_validation(exc)

    if isinstance(exc, GanInvertError):
        logger.warning(f"{exc.user_message} {exc}")
        return int(exc.exit_code)

    if isinstance(exc, KeyboardInterrupt):
        logger.warning("Interrupted")
        return int(ExitCode.UNEXPECTED)

    logger.error(f"Unhandled error: {exc}", exc_info=exc)
    return int(ExitCode.UNEXPECTED)
