"""
Runtime Settings
Environment-driven settings (prefix GANINVERT_, optional .env file).

Only the artifact directory overrides experiment configs; everything else
here concerns the process (logging and loader workers). Everything runs on CPU.
"""

import logging
from pathlib import Path
from typing import Literal, Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Process-level settings."""

    model_config = SettingsConfigDict(
        env_prefix="GANINVERT_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    artifact_dir: Optional[Path] = Field(
        None, description="Overrides ExperimentConfig.artifact_dir when set"
    )
    log_level: str = Field("INFO", description="Root log level")
    log_format: Literal["json", "color", "plain"] = Field("color", description="Log line format")
    num_workers: int = Field(0, ge=0, description="DataLoader prefetch workers")
    mnist_dir: Optional[Path] = Field(None, description="Directory holding MNIST-family IDX files")


_settings_instance: Optional[Settings] = None


def get_settings() -> Settings:
    """Get settings singleton"""
    global _settings_instance

    if _settings_instance is None:
        _settings_instance = Settings()
        logger.debug(f"Settings loaded: {_settings_instance.model_dump()}")

    return _settings_instance


def reset_settings() -> None:
    """Drop the cached settings (tests change the environment)."""
    global _settings_instance
    _settings_instance = None
