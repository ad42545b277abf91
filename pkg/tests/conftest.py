from __future__ import annotations

import os
from collections.abc import Generator
from pathlib import Path

import numpy as np
import pytest

from boxnorm.settings import clear_settings_cache, get_settings


@pytest.fixture(autouse=True)
def fresh_settings() -> Generator[None, None, None]:
    # Settings read the environment once per process; reset around each test.
    clear_settings_cache()
    yield
    clear_settings_cache()


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(20240601)


@pytest.fixture()
def slow_enabled() -> None:
    if os.environ.get("BN_RUN_SLOW") != "1":
        pytest.skip("BN_RUN_SLOW=1 not set")


@pytest.fixture()
def movielens_path(slow_enabled: None) -> Path:
    path = get_settings().movielens_path
    if not path:
        pytest.skip("BN_MOVIELENS_PATH not set")
    p = Path(path)
    if not p.exists():
        pytest.skip(f"MovieLens file not found: {p}")
    return p


@pytest.fixture()
def config_dir() -> Path:
    return Path(__file__).resolve().parents[1] / "config"
