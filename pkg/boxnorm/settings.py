from __future__ import annotations

from functools import lru_cache

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="BN_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Structured logging (diagnostic stream)
    log_format: str = "text"  # "json" or "text"
    log_level: str = "WARNING"

    # Numerics
    debug_checks: bool = False  # assert S(alpha) monotone over the breakpoint grid
    interp_tol: float = 1e-8

    # Experiments
    workers: int = 1
    config_dir: str = "config"
    movielens_path: str | None = None  # MovieLens 100k u.data, optional


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings()


def clear_settings_cache() -> None:
    get_settings.cache_clear()
