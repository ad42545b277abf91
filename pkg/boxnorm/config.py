"""Experiment configuration: versioned `key=value` files under config/ plus overrides."""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from pathlib import Path
from typing import Any, Literal, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError, ValidationInfo, field_validator

from boxnorm.errors import ParameterError, ParseError
from boxnorm.settings import get_settings

logger = logging.getLogger(__name__)

_LIST_FIELDS = {"penalties", "lambdas", "ks", "a_values", "gammas", "sizes", "noise_levels", "ranks", "thresholds"}

C = TypeVar("C", bound=BaseModel)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = Field(default=0, ge=0)
    trials: int = Field(default=20, ge=1)
    tolerance: Literal["synthetic", "real"] = "synthetic"
    max_iter: int = Field(default=2000, ge=1)
    workers: int = Field(default=1, ge=1)
    output: str | None = None

    @field_validator("*", mode="before")
    @classmethod
    def _split_lists(cls, value: Any, info: ValidationInfo) -> Any:
        if info.field_name in _LIST_FIELDS and isinstance(value, str):
            return [v for v in (p.strip() for p in value.split(",")) if v]
        return value

    def echo(self) -> str:
        """`key=value` tokens that reproduce this configuration."""
        parts = []
        for key, value in self.model_dump().items():
            if value is None:
                continue
            if isinstance(value, list):
                value = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            parts.append(f"{key}={value}")
        return " ".join(parts)


class GridConfig(ExperimentConfig):
    lambdas: list[float] = Field(default_factory=lambda: [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0])
    ks: list[float] = Field(default_factory=lambda: [1.0, 2.0, 3.0, 4.0, 5.0])
    a_values: list[float] = Field(default_factory=lambda: [1e-3, 1e-2, 1e-1])
    gammas: list[float] = Field(default_factory=lambda: [0.1, 1.0])
    thresholds: list[float] = Field(default_factory=list)
    threshold: bool = True
    eps_m: float = Field(default=0.0, ge=0.0)


class CompleteConfig(GridConfig):
    d: int = Field(default=100, ge=1)
    rank: int = Field(default=5, ge=1)
    noise: bool = True
    rho: float = Field(default=0.2, gt=0.0, lt=1.0)
    validation: float = Field(default=0.1, gt=0.0, lt=1.0)
    penalties: list[Literal["fr", "trace", "el.net", "ksup", "box"]] = Field(
        default_factory=lambda: ["trace", "el.net", "ksup", "box"]
    )
    dataset: str | None = None
    format: Literal["movielens_tab", "jester_csv"] | None = None
    split_mode: Literal["uniform", "per_user", "per_user_count"] = "uniform"
    train_per_user: int | None = Field(default=None, ge=1)
    nmae_squared_form: bool = False


class MtlConfig(GridConfig):
    d: int = Field(default=100, ge=1)
    blocks: int = Field(default=5, ge=1)
    block_size: int = Field(default=20, ge=1)
    rho: float = Field(default=0.1, gt=0.0, lt=1.0)
    validation: float = Field(default=0.1, gt=0.0, lt=1.0)
    test: float | None = Field(default=None, gt=0.0, lt=1.0)
    penalties: list[Literal["fr", "trace", "el.net", "ksup", "box"]] = Field(
        default_factory=lambda: ["fr", "trace", "el.net", "ksup", "box"]
    )
    dataset: str | None = None
    format: Literal["lenk_table"] | None = None
    profiles_per_task: int = Field(default=20, ge=1)


class BenchConfig(ExperimentConfig):
    sizes: list[int] = Field(default_factory=lambda: [1024, 2048, 4096, 8192, 16384, 32768])
    k_fraction: float = Field(default=0.05, gt=0.0, le=1.0)
    lam: float = Field(default=1.0, gt=0.0)
    repeats: int = Field(default=11, ge=1)
    warmup: int = Field(default=3, ge=0)


class RolesConfig(GridConfig):
    d: int = Field(default=50, ge=1)
    rho: float = Field(default=0.2, gt=0.0, lt=1.0)
    validation: float = Field(default=0.1, gt=0.0, lt=1.0)
    rank: int = Field(default=5, ge=1)
    noise_levels: list[float] = Field(default_factory=lambda: [0.25, 0.5, 1.0, 2.0, 4.0])
    ranks: list[int] = Field(default_factory=lambda: [2, 4, 6, 8, 10])
    fixed_k: float = Field(default=5.0, gt=0.0)
    fixed_a: float = Field(default=1e-2, gt=0.0)


class GenLowrankConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    d: int = Field(default=100, ge=1)
    r: int = Field(default=5, ge=1)
    seed: int = Field(default=0, ge=0)
    noise: bool = True
    noise_scale: float = Field(default=1.0, ge=0.0)
    output: str | None = None


class GenBlocksConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    d: int = Field(default=100, ge=1)
    blocks: int = Field(default=5, ge=1)
    block_size: int = Field(default=20, ge=1)
    seed: int = Field(default=0, ge=0)
    noise: bool = True
    output: str | None = None


def parse_pairs(tokens: Sequence[str], *, source: str = "arguments") -> dict[str, str]:
    """`key=value` tokens to a dict; later keys win."""
    out: dict[str, str] = {}
    for token in tokens:
        key, sep, value = token.partition("=")
        if not sep or not key.strip():
            raise ParseError(f"expected key=value in {source}, got {token!r}")
        out[key.strip()] = value.strip()
    return out


def read_config_file(path: str | Path) -> dict[str, str]:
    """One `key=value` per line; blank lines and `#` comments are skipped."""
    p = Path(path)
    if not p.is_absolute() and not p.exists():
        p = Path(get_settings().config_dir) / p
    try:
        lines = p.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ParseError(f"cannot read config {p}: {exc}") from exc
    out: dict[str, str] = {}
    for line_number, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ParseError(f"expected key=value in {p}", line_number=line_number)
        out[key.strip()] = value.strip()
    return out


def load_experiment_config(
    model: type[C],
    *,
    path: str | Path | None = None,
    overrides: Mapping[str, str] | None = None,
) -> C:
    """File values first, then overrides; unknown keys are rejected."""
    raw: dict[str, Any] = {}
    if path is not None:
        raw.update(read_config_file(path))
    if overrides:
        raw.update(overrides)
    try:
        return model.model_validate(raw)
    except ValidationError as exc:
        raise ParameterError(f"invalid {model.__name__}: {exc}") from exc
