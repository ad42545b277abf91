"""Smooth losses for completion and multitask learning, and the cluster seminorms."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit

from boxnorm.errors import InputError, ParameterError
from boxnorm.spectral import as_matrix
from boxnorm.vecnorm import FloatArray

logger = logging.getLogger(__name__)

IntArray = NDArray[np.int64]


@dataclass(frozen=True, eq=False)
class ObservationMask:
    """Observed cells (rows[i], cols[i]) -> values[i] of a d x T grid."""

    shape: tuple[int, int]
    rows: IntArray
    cols: IntArray
    values: FloatArray

    def __post_init__(self) -> None:
        d, T = self.shape
        n = self.rows.size
        if self.cols.size != n or self.values.size != n:
            raise InputError("rows, cols and values must have equal length")
        if n and (self.rows.min() < 0 or self.rows.max() >= d or self.cols.min() < 0 or self.cols.max() >= T):
            raise InputError(f"observation index out of range for a {d}x{T} grid")
        if not np.all(np.isfinite(self.values)):
            raise InputError("observation values must be finite")
        flat = self.rows * T + self.cols
        if np.unique(flat).size != n:
            raise InputError("duplicate (row, col) observation")

    @classmethod
    def from_arrays(
        cls, shape: tuple[int, int], rows: ArrayLike, cols: ArrayLike, values: ArrayLike
    ) -> ObservationMask:
        return cls(
            shape=(int(shape[0]), int(shape[1])),
            rows=np.asarray(rows, dtype=np.int64).ravel(),
            cols=np.asarray(cols, dtype=np.int64).ravel(),
            values=np.asarray(values, dtype=np.float64).ravel(),
        )

    @classmethod
    def from_triples(
        cls, shape: tuple[int, int], triples: Sequence[tuple[int, int, float]]
    ) -> ObservationMask:
        if not triples:
            return cls.empty(shape)
        rows, cols, values = zip(*triples, strict=True)
        return cls.from_arrays(shape, rows, cols, values)

    @classmethod
    def empty(cls, shape: tuple[int, int]) -> ObservationMask:
        return cls.from_arrays(shape, [], [], [])

    @classmethod
    def full(cls, W: ArrayLike) -> ObservationMask:
        W = as_matrix(W)
        rows, cols = np.indices(W.shape)
        return cls.from_arrays(W.shape, rows, cols, W[rows, cols])

    def __len__(self) -> int:
        return int(self.rows.size)

    def take(self, idx: ArrayLike) -> ObservationMask:
        idx = np.asarray(idx, dtype=np.int64)
        return ObservationMask(self.shape, self.rows[idx], self.cols[idx], self.values[idx])

    def with_values(self, values: ArrayLike) -> ObservationMask:
        return ObservationMask.from_arrays(self.shape, self.rows, self.cols, values)

    def predict(self, W: FloatArray) -> FloatArray:
        return W[self.rows, self.cols]

    def cells(self) -> set[tuple[int, int]]:
        return set(zip(self.rows.tolist(), self.cols.tolist(), strict=True))

    def to_dense(self, fill: float = 0.0) -> FloatArray:
        out = np.full(self.shape, fill)
        out[self.rows, self.cols] = self.values
        return out


@dataclass(frozen=True, eq=False)
class TaskDataset:
    """Per-task designs X[t] (n x d) and targets y[t] (n), T tasks.

    For one-vs-rest classification `labels` holds the class of each pooled
    example; X[t] is then the same pooled design for every t and
    y[t, i] = +1 when labels[i] == t, else -1.
    """

    X: FloatArray
    y: FloatArray
    labels: IntArray | None = field(default=None)

    def __post_init__(self) -> None:
        if self.X.ndim != 3:
            raise InputError(f"X must have shape (T, n, d), got {self.X.shape}")
        if self.y.shape != self.X.shape[:2]:
            raise InputError(f"y must have shape {self.X.shape[:2]}, got {self.y.shape}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise InputError("task data must be finite")
        if self.labels is not None and self.labels.shape != (self.X.shape[1],):
            raise InputError("labels must have one entry per pooled example")

    @classmethod
    def from_tasks(cls, X: Sequence[ArrayLike], y: Sequence[ArrayLike]) -> TaskDataset:
        if len(X) != len(y) or not X:
            raise InputError("need one target vector per task and at least one task")
        xs = [np.asarray(x, dtype=np.float64) for x in X]
        ys = [np.asarray(v, dtype=np.float64) for v in y]
        if len({x.shape for x in xs}) != 1 or any(x.ndim != 2 for x in xs):
            raise InputError("all tasks need designs of one common shape (n, d)")
        return cls(X=np.stack(xs), y=np.stack(ys))

    @classmethod
    def one_vs_rest(cls, X: ArrayLike, labels: ArrayLike, n_classes: int) -> TaskDataset:
        X = as_matrix(X, name="X")
        lab = np.asarray(labels, dtype=np.int64).ravel()
        if lab.size != X.shape[0]:
            raise InputError("one label per example is required")
        if lab.size and (lab.min() < 0 or lab.max() >= n_classes):
            raise InputError(f"labels must lie in [0, {n_classes})")
        y = np.where(lab[None, :] == np.arange(n_classes)[:, None], 1.0, -1.0)
        return cls(X=np.broadcast_to(X, (n_classes, *X.shape)).copy(), y=y, labels=lab)

    @property
    def T(self) -> int:
        return int(self.X.shape[0])

    @property
    def n(self) -> int:
        return int(self.X.shape[1])

    @property
    def d(self) -> int:
        return int(self.X.shape[2])

    def take(self, idx: ArrayLike) -> TaskDataset:
        """Same examples idx (0-based) of every task."""
        idx = np.asarray(idx, dtype=np.int64)
        labels = None if self.labels is None else self.labels[idx]
        return TaskDataset(X=self.X[:, idx, :], y=self.y[:, idx], labels=labels)

    def predict(self, W: FloatArray) -> FloatArray:
        """(T, n) predictions <w_t, x_i^t>."""
        return np.einsum("tnd,dt->tn", self.X, W)

    def check_weights(self, W: FloatArray) -> None:
        if W.shape != (self.d, self.T):
            raise InputError(f"W must be {self.d}x{self.T}, got {W.shape}")


@dataclass(frozen=True, eq=False)
class ConnectivityInfo:
    """Partition of the tasks into Q clusters (0-based task indices)."""

    clusters: tuple[IntArray, ...]
    T: int

    def __post_init__(self) -> None:
        if any(c.size == 0 for c in self.clusters):
            raise ParameterError("empty cluster in task partition")
        seen = np.concatenate(self.clusters) if self.clusters else np.empty(0, dtype=np.int64)
        if seen.size != self.T or not np.array_equal(np.sort(seen), np.arange(self.T)):
            raise ParameterError(f"clusters must partition the tasks 0..{self.T - 1}")

    @classmethod
    def from_labels(cls, labels: ArrayLike) -> ConnectivityInfo:
        lab = np.asarray(labels, dtype=np.int64).ravel()
        groups = tuple(np.flatnonzero(lab == q) for q in np.unique(lab))
        return cls(clusters=groups, T=int(lab.size))

    @property
    def Q(self) -> int:
        return len(self.clusters)

    def connectivity_matrix(self) -> FloatArray:
        """M with M_st = 1/T_q when s and t share cluster q, else 0."""
        M = np.zeros((self.T, self.T))
        for c in self.clusters:
            M[np.ix_(c, c)] = 1.0 / c.size
        return M


def masked_sq_loss(W: ArrayLike, mask: ObservationMask) -> tuple[float, FloatArray]:
    W = as_matrix(W)
    if W.shape != mask.shape:
        raise InputError(f"W has shape {W.shape}, mask expects {mask.shape}")
    resid = mask.predict(W) - mask.values
    grad = np.zeros_like(W)
    grad[mask.rows, mask.cols] = 2.0 * resid
    return float(np.dot(resid, resid)), grad


def mtl_sq_loss(W: ArrayLike, data: TaskDataset) -> tuple[float, FloatArray]:
    """(1/(Tn)) sum_t ||y_t - X_t w_t||^2."""
    W = as_matrix(W)
    data.check_weights(W)
    scale = 1.0 / (data.T * data.n)
    resid = data.y - data.predict(W)  # (T, n)
    value = scale * float(np.sum(resid**2))
    grad = -2.0 * scale * np.einsum("tnd,tn->dt", data.X, resid)
    return value, grad


def logistic_mtl_loss(W: ArrayLike, data: TaskDataset) -> tuple[float, FloatArray]:
    """sum_t sum_i log(1 + exp(-y_ti <w_t, x_i>)), labels in {-1, +1}."""
    W = as_matrix(W)
    data.check_weights(W)
    if not np.all(np.isin(data.y, (-1.0, 1.0))):
        raise InputError("logistic loss needs labels in {-1, +1}")
    margins = data.y * data.predict(W)
    value = float(np.sum(np.logaddexp(0.0, -margins)))
    weights = -data.y * expit(-margins)
    grad = np.einsum("tnd,tn->dt", data.X, weights)
    return value, grad


def cluster_seminorms(W: ArrayLike, info: ConnectivityInfo) -> tuple[float, float, float]:
    """(omega_m, omega_b, omega_w) with omega_m + omega_b + omega_w = ||W||_F^2."""
    W = as_matrix(W)
    T = W.shape[1]
    if info.T != T:
        raise ParameterError(f"partition covers {info.T} tasks, W has {T}")
    U = np.full((T, T), 1.0 / T)
    M = info.connectivity_matrix()
    eye = np.eye(T)

    def quad(A: FloatArray) -> float:
        return float(np.trace(W @ A @ W.T))

    return quad(U), quad(M - U), quad(eye - M)


def cluster_precision(info: ConnectivityInfo, eps_b: float, eps_w: float) -> FloatArray:
    """Sigma^-1 = eps_b * M Pi + eps_w * (I - M Pi)."""
    T = info.T
    Pi = np.eye(T) - np.full((T, T), 1.0 / T)
    Mt = info.connectivity_matrix() @ Pi
    return eps_b * Mt + eps_w * (np.eye(T) - Mt)


def mean_penalty(W: ArrayLike, eps_m: float) -> tuple[float, FloatArray]:
    """eps_m tr(W U W^T) = eps_m T ||w_bar||^2, U = 11^T / T."""
    if not (math.isfinite(eps_m) and eps_m >= 0):
        raise ParameterError(f"mean weight eps_m must be nonnegative, got {eps_m}")
    W = as_matrix(W)
    T = W.shape[1]
    mean = W.mean(axis=1, keepdims=True)
    value = eps_m * T * float(np.sum(mean**2))
    grad = 2.0 * eps_m * np.broadcast_to(mean, W.shape).copy()
    return value, grad


# ---------------------------------------------------------------------------
# Loss handles used by the solver
# ---------------------------------------------------------------------------


class SmoothLoss(Protocol):
    @property
    def lipschitz(self) -> float | None: ...

    def __call__(self, W: FloatArray) -> tuple[float, FloatArray]: ...


class MaskedSquaredLoss:
    def __init__(self, mask: ObservationMask) -> None:
        self.mask = mask

    @property
    def lipschitz(self) -> float:
        return 2.0

    def __call__(self, W: FloatArray) -> tuple[float, FloatArray]:
        return masked_sq_loss(W, self.mask)


class MultitaskSquaredLoss:
    def __init__(self, data: TaskDataset) -> None:
        self.data = data
        top = max(float(np.linalg.norm(x, 2)) ** 2 for x in data.X)
        self._lipschitz = 2.0 * top / (data.T * data.n)

    @property
    def lipschitz(self) -> float:
        return self._lipschitz

    def __call__(self, W: FloatArray) -> tuple[float, FloatArray]:
        return mtl_sq_loss(W, self.data)


class LogisticLoss:
    def __init__(self, data: TaskDataset) -> None:
        if not np.all(np.isin(data.y, (-1.0, 1.0))):
            raise InputError("logistic loss needs labels in {-1, +1}")
        self.data = data
        self._lipschitz = 0.25 * max(float(np.linalg.norm(x, 2)) ** 2 for x in data.X)

    @property
    def lipschitz(self) -> float:
        return self._lipschitz

    def __call__(self, W: FloatArray) -> tuple[float, FloatArray]:
        return logistic_mtl_loss(W, self.data)


class MeanPenalizedLoss:
    """base(W) + weight * tr(W U W^T); the solver passes weight = lambda * eps_m."""

    def __init__(self, base: SmoothLoss, weight: float) -> None:
        if weight < 0:
            raise ParameterError(f"mean penalty weight must be nonnegative, got {weight}")
        self.base = base
        self.weight = weight

    @property
    def lipschitz(self) -> float | None:
        base = self.base.lipschitz
        return None if base is None else base + 2.0 * self.weight

    def __call__(self, W: FloatArray) -> tuple[float, FloatArray]:
        value, grad = self.base(W)
        if self.weight == 0:
            return value, grad
        mv, mg = mean_penalty(W, self.weight)
        return value + mv, grad + mg
