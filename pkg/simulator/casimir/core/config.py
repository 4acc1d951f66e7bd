from __future__ import annotations

from functools import lru_cache
from pathlib import Path

from pydantic import Field, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

LOG_LEVELS = {"DEBUG", "INFO", "WARNING", "ERROR"}
LOG_FORMATS = {"json", "console"}


class Settings(BaseSettings):
    """Process-level settings. Experiment parameters live in the config documents."""

    model_config = SettingsConfigDict(
        env_prefix="CASIMIR_", env_file=".env", env_file_encoding="utf-8", extra="ignore"
    )

    app_name: str = Field(default="casimir")
    chain_threads: int = Field(
        default=1, ge=1, description="Sweep workers when --threads is absent"
    )
    log_level: str = Field(default="INFO")
    log_format: str = Field(default="json", description="Either 'json' or 'console'")
    output_dir: Path = Field(default=Path("runs"))
    csv_digits: int = Field(
        default=15, ge=12, le=17, description="Significant digits in CSV floats"
    )

    @model_validator(mode="before")
    @classmethod
    def normalize_logging(cls, data: dict) -> dict:
        data = dict(data)
        level = str(data.get("log_level", "INFO")).upper()
        if level not in LOG_LEVELS:
            raise ValueError(f"log_level must be one of {sorted(LOG_LEVELS)}, got '{level}'")
        data["log_level"] = level

        fmt = str(data.get("log_format", "json")).lower()
        if fmt not in LOG_FORMATS:
            raise ValueError(f"log_format must be one of {sorted(LOG_FORMATS)}, got '{fmt}'")
        data["log_format"] = fmt
        return data


@lru_cache(maxsize=None)
def get_settings() -> Settings:
    """
    Get cached settings instance.

    The environment is read once per process; call clear_settings_cache()
    after changing CASIMIR_* variables.
    """
    return Settings()


def clear_settings_cache() -> None:
    get_settings.cache_clear()
