"""
Artifact Store
Owns one artifact directory: the run manifest, per-stage config hashes,
deterministic JSON writes and the single-runner lockfile.
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

from pydantic import BaseModel, Field

from ganinvert.middleware.error_handler import CheckpointIntegrityError, LockError
from ganinvert.models.schemas import canonical_hash
from ganinvert.utils.helpers import atomic_write_text, ensure_directory, file_sha256, format_timestamp

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
LOCK_NAME = ".lock"


class StageRecord(BaseModel):
    """Outputs of one completed stage"""
    stage: str
    config_hash: str = Field(..., description="Stage config + upstream hashes")
    completed_at: str
    artifacts: Dict[str, str] = Field(default_factory=dict, description="name → path relative to the artifact dir")
    digests: Dict[str, str] = Field(default_factory=dict, description="name → sha256 of the file")


class Manifest(BaseModel):
    """Every artifact a run produced, grouped by stage"""
    format_version: int = 1
    seed: Optional[int] = None
    stages: List[StageRecord] = Field(default_factory=list)

    def get(self, stage: str) -> Optional[StageRecord]:
        return next((s for s in self.stages if s.stage == stage), None)

    def artifact_names(self) -> List[str]:
        return [name for s in self.stages for name in s.artifacts]


def stage_config_hash(config: Any, upstream_hashes: Iterable[str] = ()) -> str:
    """
    Hash a stage config together with the hashes of the stages it depends on.

    Args:
        config: pydantic model or JSON-able value
        upstream_hashes: Config hashes of upstream stages, in dependency order

    Returns:
        str: SHA-256 hex digest
    """
    payload = config.model_dump(mode="json") if isinstance(config, BaseModel) else config
    return canonical_hash({"config": payload, "upstream": list(upstream_hashes)})


def dumps_deterministic(payload: Any) -> str:
    """JSON text with sorted keys, stable across reruns."""
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


class ArtifactStore:
    """One artifact directory and its manifest."""

    def __init__(self, root: Union[str, Path]):
        self.root = ensure_directory(root)
        self.manifest_path = self.root / MANIFEST_NAME

    def path(self, relative: str) -> Path:
        return self.root / relative

    def load_manifest(self) -> Manifest:
        if not self.manifest_path.exists():
            return Manifest()
        try:
            return Manifest.model_validate_json(self.manifest_path.read_text(encoding="utf-8"))
        except ValueError as e:
            raise CheckpointIntegrityError(f"manifest {self.manifest_path} is unreadable: {e}") from e

    def save_manifest(self, manifest: Manifest) -> Path:
        return atomic_write_text(self.manifest_path, dumps_deterministic(manifest))

    def write_json(self, relative: str, payload: Any) -> Path:
        return atomic_write_text(self.path(relative), dumps_deterministic(payload))

    def read_json(self, relative: str) -> Any:
        return json.loads(self.path(relative).read_text(encoding="utf-8"))

    def stage_is_current(self, manifest: Manifest, stage: str, config_hash: str) -> bool:
        """True when the stage's recorded hash matches and every output is intact."""
        record = manifest.get(stage)
        if record is None or record.config_hash != config_hash:
            return False
        for name, relative in record.artifacts.items():
            target = self.path(relative)
            if not target.exists() or file_sha256(target) != record.digests.get(name):
                logger.info(f"Stage {stage}: artifact {name} missing or changed, rerunning")
                return False
        return True

    def record_stage(
        self,
        manifest: Manifest,
        stage: str,
        config_hash: str,
        artifacts: Dict[str, str],
    ) -> StageRecord:
        """Replace (or append) the stage's record with freshly written outputs."""
        record = StageRecord(
            stage=stage,
            config_hash=config_hash,
            completed_at=format_timestamp(),
            artifacts=dict(sorted(artifacts.items())),
            digests={name: file_sha256(self.path(rel)) for name, rel in sorted(artifacts.items())},
        )
        manifest.stages = [s for s in manifest.stages if s.stage != stage] + [record]
        return record

    def find_artifact(self, name: str, manifest: Optional[Manifest] = None) -> Optional[Path]:
        manifest = manifest or self.load_manifest()
        for record in manifest.stages:
            if name in record.artifacts:
                return self.path(record.artifacts[name])
        return None


class RunnerLock:
    """Exclusive lockfile: one runner per artifact directory."""

    def __init__(self, root: Union[str, Path]):
        self.path = Path(root) / LOCK_NAME
        self._fd: Optional[int] = None

    def acquire(self) -> "RunnerLock":
        ensure_directory(self.path.parent)
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as e:
            raise LockError(f"{self.path} exists; another runner owns this artifact directory") from e
        os.write(self._fd, str(os.getpid()).encode("ascii"))
        return self

    def release(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
            try:
                self.path.unlink()
            except FileNotFoundError:
                pass

    def __enter__(self) -> "RunnerLock":
        return self.acquire()

    def __exit__(self, *exc_info: Any) -> None:
        self.release()
