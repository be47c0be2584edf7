#!/usr/bin/env python3
"""
Settings Module
===============

Process-level settings with environment overrides (prefix ``SKEWFLOW_``).
Scenario parameters live in the YAML scenario files, not here.
"""

from functools import lru_cache
from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


PROJECT_ROOT = Path(__file__).resolve().parent.parent
SCENARIO_DIR = PROJECT_ROOT / "config" / "scenarios"


class SkewflowSettings(BaseSettings):
    """
    Centralized runtime configuration.
    """

    model_config = SettingsConfigDict(env_prefix="SKEWFLOW_", extra="ignore")

    # Output
    output_dir: Path | None = None

    # Parallel stages
    threads: int = Field(default=1, ge=1)

    # Logging
    log_level: str = "INFO"
    log_format: str = "console"

    # Where built-in scenarios are looked up
    scenario_dir: Path = SCENARIO_DIR


@lru_cache(maxsize=1)
def get_settings() -> SkewflowSettings:
    """Cached settings instance."""
    return SkewflowSettings()


__all__ = ["PROJECT_ROOT", "SCENARIO_DIR", "SkewflowSettings", "get_settings"]
