"""Synthetic problems, rating-file loaders, splits and evaluation metrics."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike

from boxnorm.errors import (
    DataValidationError,
    InputError,
    MetricError,
    ParameterError,
    ParseError,
)
from boxnorm.losses import ObservationMask, TaskDataset
from boxnorm.vecnorm import FloatArray

logger = logging.getLogger(__name__)

RatingFormat = Literal["movielens_tab", "jester_csv", "lenk_table"]
MetricKind = Literal["relative_sq", "nmae", "task_rmse", "multiclass_accuracy"]
SplitMode = Literal["uniform", "per_user", "per_user_count"]

MOVIELENS_RANGE = (1.0, 5.0)
JESTER_RANGE = (-10.0, 10.0)
JESTER_MISSING = 99.0
JESTER_FIELDS = 101
LENK_FEATURES = 14
LENK_RANGE = (0.0, 10.0)

_SETS = ("train", "validation", "test")


@dataclass(frozen=True, eq=False)
class CompletionProblem:
    train: ObservationMask
    validation: ObservationMask
    test: ObservationMask
    value_range: tuple[float, float]
    W_true: FloatArray | None = None
    W_clean: FloatArray | None = None

    def __post_init__(self) -> None:
        shapes = {self.train.shape, self.validation.shape, self.test.shape}
        if len(shapes) != 1:
            raise InputError("train, validation and test masks must share one grid")
        lo, hi = self.value_range
        if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
            raise InputError(f"invalid value range {self.value_range}")
        tr, va, te = self.train.cells(), self.validation.cells(), self.test.cells()
        if tr & va or tr & te or va & te:
            raise InputError("train, validation and test masks overlap")
        if self.W_true is not None and self.W_true.shape != self.train.shape:
            raise InputError("ground truth shape does not match the masks")

    @property
    def shape(self) -> tuple[int, int]:
        return self.train.shape

    def pooled(self) -> ObservationMask:
        parts = (self.train, self.validation, self.test)
        return ObservationMask.from_arrays(
            self.shape,
            np.concatenate([p.rows for p in parts]),
            np.concatenate([p.cols for p in parts]),
            np.concatenate([p.values for p in parts]),
        )


@dataclass(frozen=True)
class SplitSpec:
    """Fractions of observations for (train, validation, test).

    per_user: each row keeps ceil(train * count) training entries.
    per_user_count: each row keeps `train_per_user` training entries.
    Validation and test are then drawn uniformly from the remaining entries
    with counts round(fraction * total).
    """

    train: float
    validation: float
    test: float
    seed: int = 0
    mode: SplitMode = "uniform"
    train_per_user: int | None = None

    def __post_init__(self) -> None:
        fractions = (self.train, self.validation, self.test)
        if any(not (math.isfinite(f) and f > 0) for f in fractions):
            raise ParameterError(f"split fractions must be positive, got {fractions}")
        if sum(fractions) > 1.0 + 1e-12:
            raise ParameterError(f"split fractions sum to more than 1: {fractions}")
        if self.seed < 0:
            raise ParameterError(f"seed must be nonnegative, got {self.seed}")
        if self.mode not in ("uniform", "per_user", "per_user_count"):
            raise ParameterError(f"unknown split mode {self.mode!r}")
        if self.mode == "per_user_count" and (self.train_per_user is None or self.train_per_user < 1):
            raise ParameterError("per_user_count split needs a positive train_per_user")


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def _all_train(W: FloatArray, *, W_clean: FloatArray | None = None) -> CompletionProblem:
    full = ObservationMask.full(W)
    empty = ObservationMask.empty(W.shape)
    return CompletionProblem(
        train=full,
        validation=empty,
        test=empty,
        value_range=(float(W.min()), float(W.max())),
        W_true=W,
        W_clean=W_clean,
    )


def gen_lowrank(
    d: int, r: int, *, noise: bool = True, seed: int = 0, noise_scale: float = 1.0
) -> CompletionProblem:
    """W = A B^T + E with A, B (d x r) and E standard Gaussian; all entries in train."""
    if d < 1 or r < 1:
        raise ParameterError(f"need d >= 1 and r >= 1, got d={d}, r={r}")
    if r > d:
        raise ParameterError(f"rank r={r} exceeds dimension d={d}")
    if noise_scale < 0:
        raise ParameterError(f"noise_scale must be nonnegative, got {noise_scale}")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((d, r))
    B = rng.standard_normal((d, r))
    clean = A @ B.T
    E = rng.standard_normal((d, d))
    W = clean + noise_scale * E if noise else clean
    return _all_train(W, W_clean=clean)


def gen_block_clustered(
    d: int = 100,
    blocks: int = 5,
    block_size: int = 20,
    *,
    noise: bool = True,
    seed: int = 0,
) -> CompletionProblem:
    """Block-diagonal matrix, each block constant at a uniform integer in 1..10, plus noise."""
    if blocks < 1 or block_size < 1:
        raise ParameterError("blocks and block_size must be positive")
    if blocks * block_size > d:
        raise ParameterError(f"{blocks} blocks of size {block_size} do not fit in d={d}")
    rng = np.random.default_rng(seed)
    clean = np.zeros((d, d))
    levels = rng.integers(1, 11, size=blocks)
    for i, level in enumerate(levels):
        s = slice(i * block_size, (i + 1) * block_size)
        clean[s, s] = float(level)
    E = rng.standard_normal((d, d))
    W = clean + E if noise else clean
    return _all_train(W, W_clean=clean)


# ---------------------------------------------------------------------------
# Loaders
# ---------------------------------------------------------------------------


def _dense_index(ids: list[int]) -> dict[int, int]:
    return {v: i for i, v in enumerate(sorted(set(ids)))}


def _check_range(value: float, value_range: tuple[float, float], line_number: int) -> None:
    lo, hi = value_range
    if not lo <= value <= hi:
        raise DataValidationError(f"line {line_number}: rating {value} outside [{lo}, {hi}]")


def _load_movielens(text: str) -> CompletionProblem:
    users: list[int] = []
    items: list[int] = []
    ratings: list[float] = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise ParseError(f"expected 4 tab-separated fields, got {len(fields)}", line_number=line_number)
        try:
            user, item, rating = int(fields[0]), int(fields[1]), float(fields[2])
            int(fields[3])
        except ValueError as exc:
            raise ParseError(f"malformed rating line: {exc}", line_number=line_number) from exc
        _check_range(rating, MOVIELENS_RANGE, line_number)
        users.append(user)
        items.append(item)
        ratings.append(rating)
    if not ratings:
        raise ParseError("no ratings found")
    row_of = _dense_index(users)
    col_of = _dense_index(items)
    mask = ObservationMask.from_arrays(
        (len(row_of), len(col_of)),
        [row_of[u] for u in users],
        [col_of[i] for i in items],
        ratings,
    )
    empty = ObservationMask.empty(mask.shape)
    return CompletionProblem(train=mask, validation=empty, test=empty, value_range=MOVIELENS_RANGE)


def _load_jester(text: str) -> CompletionProblem:
    rows: list[int] = []
    cols: list[int] = []
    ratings: list[float] = []
    n_users = 0
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != JESTER_FIELDS:
            raise ParseError(f"expected {JESTER_FIELDS} fields, got {len(fields)}", line_number=line_number)
        try:
            values = [float(f) for f in fields[1:]]
        except ValueError as exc:
            raise ParseError(f"malformed rating: {exc}", line_number=line_number) from exc
        for j, v in enumerate(values):
            if v == JESTER_MISSING:
                continue
            _check_range(v, JESTER_RANGE, line_number)
            rows.append(n_users)
            cols.append(j)
            ratings.append(v)
        n_users += 1
    if not ratings:
        raise ParseError("no ratings found")
    mask = ObservationMask.from_arrays((n_users, JESTER_FIELDS - 1), rows, cols, ratings)
    empty = ObservationMask.empty(mask.shape)
    return CompletionProblem(train=mask, validation=empty, test=empty, value_range=JESTER_RANGE)


_DELIMITER = re.compile(r"[,\s;]+")


def _load_lenk(text: str, profiles_per_task: int) -> TaskDataset:
    if profiles_per_task < 1:
        raise ParameterError(f"profiles_per_task must be positive, got {profiles_per_task}")
    table: list[list[float]] = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = [f for f in _DELIMITER.split(stripped) if f]
        if len(fields) != LENK_FEATURES + 1:
            raise ParseError(
                f"expected {LENK_FEATURES} features and a rating, got {len(fields)} fields",
                line_number=line_number,
            )
        try:
            row = [float(f) for f in fields]
        except ValueError as exc:
            raise ParseError(f"malformed number: {exc}", line_number=line_number) from exc
        _check_range(row[-1], LENK_RANGE, line_number)
        table.append(row)
    if not table or len(table) % profiles_per_task:
        raise ParseError(f"{len(table)} rows do not form whole tasks of {profiles_per_task} profiles")
    arr = np.asarray(table).reshape(-1, profiles_per_task, LENK_FEATURES + 1)
    return TaskDataset(X=arr[:, :, :LENK_FEATURES].copy(), y=arr[:, :, LENK_FEATURES].copy())


def load_ratings(
    path: str | Path, fmt: RatingFormat, *, profiles_per_task: int = 20
) -> CompletionProblem | TaskDataset:
    """Parse a rating file; completion formats put every rating in the train mask."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    match fmt:
        case "movielens_tab":
            result: CompletionProblem | TaskDataset = _load_movielens(text)
        case "jester_csv":
            result = _load_jester(text)
        case "lenk_table":
            result = _load_lenk(text, profiles_per_task)
        case _:
            raise ParameterError(f"unknown rating format {fmt!r}")
    logger.info("loaded ratings", extra={"path": str(path), "format": fmt})
    return result


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def format_problem(problem: CompletionProblem) -> str:
    """`dims d T` / `range lo hi` header, then one `row col value set` line per observation."""
    d, T = problem.shape
    lo, hi = problem.value_range
    lines = [f"dims {d} {T}", f"range {lo!r} {hi!r}"]
    for name, mask in zip(_SETS, (problem.train, problem.validation, problem.test), strict=True):
        for i, j, v in zip(mask.rows.tolist(), mask.cols.tolist(), mask.values.tolist(), strict=True):
            lines.append(f"{i} {j} {float(v)!r} {name}")
    return "\n".join(lines) + "\n"


def write_problem(problem: CompletionProblem, path: str | Path) -> None:
    Path(path).write_text(format_problem(problem), encoding="utf-8")


def read_problem(path: str | Path) -> CompletionProblem:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if len(lines) < 2:
        raise ParseError("missing dims/range header")
    head = lines[0].split()
    rng_line = lines[1].split()
    if len(head) != 3 or head[0] != "dims":
        raise ParseError("expected `dims d T`", line_number=1)
    if len(rng_line) != 3 or rng_line[0] != "range":
        raise ParseError("expected `range lo hi`", line_number=2)
    try:
        shape = (int(head[1]), int(head[2]))
        value_range = (float(rng_line[1]), float(rng_line[2]))
    except ValueError as exc:
        raise ParseError(f"malformed header: {exc}") from exc

    buckets: dict[str, list[tuple[int, int, float]]] = {s: [] for s in _SETS}
    for line_number, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) not in (3, 4):
            raise ParseError("expected `row col value [set]`", line_number=line_number)
        name = fields[3] if len(fields) == 4 else "train"
        if name not in buckets:
            raise ParseError(f"unknown set {name!r}", line_number=line_number)
        try:
            buckets[name].append((int(fields[0]), int(fields[1]), float(fields[2])))
        except ValueError as exc:
            raise ParseError(f"malformed observation: {exc}", line_number=line_number) from exc
    masks = [ObservationMask.from_triples(shape, buckets[s]) for s in _SETS]
    return CompletionProblem(train=masks[0], validation=masks[1], test=masks[2], value_range=value_range)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def metrics(
    pred: ArrayLike,
    truth: ArrayLike,
    kind: MetricKind,
    value_range: tuple[float, float] | None = None,
    *,
    nmae_squared_form: bool = False,
) -> float:
    """Evaluation metrics.

    relative_sq: ||truth - pred||^2 / ||truth||^2.
    nmae: mean |truth - pred| / (r_max - r_min) over observed values. With
    `nmae_squared_form` the squared-norm variant ||diff||^2 (r_max - r_min) / #obs.
    task_rmse: per-task RMSE averaged over tasks, arrays of shape (T, n).
    multiclass_accuracy: `pred` holds scores (n, classes), `truth` the labels.
    """
    p = np.asarray(pred, dtype=np.float64)
    if kind == "multiclass_accuracy":
        labels = np.asarray(truth, dtype=np.int64).ravel()
        if labels.size == 0:
            raise MetricError("no examples to score")
        if p.ndim != 2 or p.shape[0] != labels.size:
            raise MetricError(f"scores must have shape ({labels.size}, classes), got {p.shape}")
        return float(np.mean(np.argmax(p, axis=1) == labels))

    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise MetricError(f"prediction shape {p.shape} does not match truth shape {t.shape}")
    if t.size == 0:
        raise MetricError("empty observation set")
    diff = t - p
    match kind:
        case "relative_sq":
            denom = float(np.sum(t**2))
            if denom == 0:
                raise MetricError("relative error undefined for a zero truth")
            return float(np.sum(diff**2)) / denom
        case "nmae":
            if value_range is None:
                raise MetricError("nmae needs the rating range")
            span = value_range[1] - value_range[0]
            if span <= 0:
                raise MetricError(f"invalid rating range {value_range}")
            if nmae_squared_form:
                return float(np.sum(diff**2)) * span / t.size
            return float(np.mean(np.abs(diff))) / span
        case "task_rmse":
            if t.ndim != 2 or t.shape[1] == 0:
                raise MetricError("task_rmse needs (T, n) arrays with n >= 1")
            return float(np.mean(np.sqrt(np.mean(diff**2, axis=1))))
    raise MetricError(f"unknown metric {kind!r}")


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


def _draw(pool: np.ndarray, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(pool)
    return perm[:count], perm[count:]


def split(problem: CompletionProblem, spec: SplitSpec) -> CompletionProblem:
    """Redistribute all observations of `problem` into train/validation/test."""
    obs = problem.pooled()
    n = len(obs)
    rng = np.random.default_rng(spec.seed)
    n_val = int(round(spec.validation * n))
    n_test = int(round(spec.test * n))

    if spec.mode == "uniform":
        n_train = int(round(spec.train * n))
        if n_train + n_val + n_test > n or n_train == 0:
            raise ParameterError(f"split {spec.train}/{spec.validation}/{spec.test} infeasible for {n} observations")
        perm = rng.permutation(n)
        train_idx = perm[:n_train]
        rest = perm[n_train:]
    else:
        order = np.argsort(obs.rows, kind="stable")
        bounds = np.flatnonzero(np.diff(obs.rows[order])) + 1
        train_parts: list[np.ndarray] = []
        rest_parts: list[np.ndarray] = []
        for group in np.split(order, bounds):
            if group.size == 0:
                continue
            if spec.mode == "per_user":
                keep = math.ceil(spec.train * group.size)
            else:
                keep = min(int(spec.train_per_user or 0), group.size)
            chosen, others = _draw(group, keep, rng)
            train_parts.append(chosen)
            rest_parts.append(others)
        train_idx = np.sort(np.concatenate(train_parts))
        rest = rng.permutation(np.concatenate(rest_parts))
        if n_val + n_test > rest.size:
            n_test = rest.size - n_val
            if n_test < 0:
                raise ParameterError("not enough observations left for validation")
            logger.info("test split truncated to the remaining observations", extra={"test": n_test})

    if n_val + n_test > rest.size:
        raise ParameterError(f"split {spec.train}/{spec.validation}/{spec.test} infeasible for {n} observations")
    val_idx = rest[:n_val]
    test_idx = rest[n_val : n_val + n_test]
    return replace(
        problem,
        train=obs.take(np.sort(train_idx)),
        validation=obs.take(np.sort(val_idx)),
        test=obs.take(np.sort(test_idx)),
    )


def split_tasks(
    data: TaskDataset, spec: SplitSpec
) -> tuple[TaskDataset, TaskDataset, TaskDataset]:
    """Split the examples of every task with one shared permutation."""
    n = data.n
    n_train = int(round(spec.train * n))
    n_val = int(round(spec.validation * n))
    n_test = int(round(spec.test * n))
    if min(n_train, n_val, n_test) < 1 or n_train + n_val + n_test > n:
        raise ParameterError(f"task split {spec.train}/{spec.validation}/{spec.test} infeasible for n={n}")
    perm = np.random.default_rng(spec.seed).permutation(n)
    return (
        data.take(np.sort(perm[:n_train])),
        data.take(np.sort(perm[n_train : n_train + n_val])),
        data.take(np.sort(perm[n_train + n_val : n_train + n_val + n_test])),
    )
