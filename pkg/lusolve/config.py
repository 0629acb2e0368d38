from pathlib import Path

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="LUSOLVE_",
        case_sensitive=False,
        extra="ignore",
    )

    # Logging
    log_level: str = "INFO"

    # Artifacts are written to <output_root>/<problem-name>/<command>/
    output_root: Path = Path("out")

    # Worker threads for independent runs (manifold sweeps, return families).
    # Results are collected in submission order.
    threads: int = 1

    @field_validator("threads")
    @classmethod
    def _positive_threads(cls, v: int) -> int:
        if v < 1:
            raise ValueError("threads must be >= 1")
        return v


# Global settings instance
settings = Settings()
