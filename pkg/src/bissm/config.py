"""Process configuration using Pydantic Settings."""

import os
from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="BISSM_",
        env_file=".env",
        env_file_encoding="utf-8",
    )

    log_level: str = "INFO"

    # Upper bound on gradient worker threads, also the default
    threads: int = Field(default_factory=lambda: min(os.cpu_count() or 1, 64), ge=1, le=64)

    # Default output directory when neither --out nor the config sets one
    output_dir: Path = Path("runs")


# Global settings instance
settings = Settings()
