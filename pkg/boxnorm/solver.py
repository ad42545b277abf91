"""Accelerated proximal gradient (FISTA) with spectral penalties.

The objective is F(W) = loss(W) + lam * g(W) where g is one of the
`PenaltySpec` penalties. A step of size s applies the prox of (lam * s) * g.
`solve_centered` runs the same iteration on the stacked variable [V | z]
with W = V + z 1^T and the penalty acting on V only.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from boxnorm.errors import BoxNormError, NumericError, ParameterError
from boxnorm.losses import MeanPenalizedLoss, SmoothLoss
from boxnorm.spectral import PenaltySpec, penalty_value, sigma_norm, sigma_prox, thin_svd
from boxnorm.vecnorm import BoxParams, FloatArray

logger = logging.getLogger(__name__)

StepRule = Literal["fixed", "backtracking"]
Validator = Callable[[FloatArray], float]

TOLERANCE_PRESETS: dict[str, float] = {"synthetic": 1e-5, "real": 1e-3}
_BACKTRACK_FLOOR = 1e-20


@dataclass(frozen=True)
class SolveConfig:
    lam: float
    penalty: PenaltySpec
    tol: float = 1e-5
    max_iter: int = 2000
    step_rule: StepRule = "fixed"
    centered: bool = False
    eps_m: float = 0.0
    threshold_grid: tuple[float, ...] = ()
    backtrack_eta: float = 0.5
    backtrack_init: float = 1.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ParameterError(f"lambda must be nonnegative, got {self.lam}")
        if not self.tol > 0:
            raise ParameterError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ParameterError(f"max_iter must be at least 1, got {self.max_iter}")
        if self.step_rule not in ("fixed", "backtracking"):
            raise ParameterError(f"unknown step rule {self.step_rule!r}")
        if not 0 < self.backtrack_eta < 1:
            raise ParameterError(f"backtracking factor must lie in (0, 1), got {self.backtrack_eta}")
        if any(t < 0 for t in self.threshold_grid):
            raise ParameterError("threshold grid values must be nonnegative")
        if not (math.isfinite(self.eps_m) and self.eps_m >= 0):
            raise ParameterError(f"eps_m must be nonnegative, got {self.eps_m}")


@dataclass(eq=False)
class SolveReport:
    W_hat: FloatArray
    objective_trace: FloatArray
    iterations: int
    converged: bool
    z_hat: FloatArray | None = None
    selected: dict[str, float] = field(default_factory=dict)
    rank_after_threshold: int = 0
    metrics: dict[str, float] = field(default_factory=dict)


class SpectralPenalty:
    """Prox handle for a spectral penalty; prox(W, 0) is the identity."""

    def __init__(self, spec: PenaltySpec) -> None:
        self.spec = spec

    def value(self, W: FloatArray) -> float:
        return penalty_value(W, self.spec)

    def prox_and_value(self, W: FloatArray, lam: float) -> tuple[FloatArray, float]:
        if lam == 0:
            return W.copy(), self.value(W)
        if self.spec.kind == "sq_frobenius":
            out = W / (1.0 + lam)
            return out, 0.5 * float(np.sum(out**2))
        f = thin_svd(W)
        sigma = sigma_prox(f.sigma, self.spec, lam)
        return f.reconstruct(sigma), _sigma_penalty(sigma, self.spec)


def _sigma_penalty(sigma: FloatArray, spec: PenaltySpec) -> float:
    match spec.kind:
        case "sq_box" | "sq_ksup":
            return 0.5 * sigma_norm(sigma, spec.norm_spec()) ** 2
        case "trace":
            return float(sigma.sum())
        case "elastic_net":
            return float(sigma.sum()) + 0.5 * spec.gamma * float(np.dot(sigma, sigma))
        case _:
            return 0.5 * float(np.dot(sigma, sigma))


def numeric_rank(W: FloatArray) -> int:
    if W.size == 0:
        return 0
    return int(np.linalg.matrix_rank(W))


def _run(
    smooth: Callable[[FloatArray], tuple[float, FloatArray]],
    prox: Callable[[FloatArray, float], tuple[FloatArray, float]],
    x0: FloatArray,
    lipschitz: float | None,
    cfg: SolveConfig,
) -> tuple[FloatArray, list[float], int, bool]:
    lam = cfg.lam
    if cfg.step_rule == "fixed":
        if lipschitz is None or not lipschitz > 0:
            raise ParameterError("fixed step rule needs a positive Lipschitz constant")
        step = 1.0 / lipschitz
    else:
        step = cfg.backtrack_init

    x = x0.copy()
    f0, _ = smooth(x)
    _, g0 = prox(x, 0.0)
    f_prev = f0 + lam * g0
    if not math.isfinite(f_prev):
        raise NumericError("objective is not finite at the starting point", iteration=0)
    trace = [f_prev]
    y = x.copy()
    t = 1.0
    converged = False
    iteration = 0

    for iteration in range(1, cfg.max_iter + 1):
        fy, gy = smooth(y)
        if cfg.step_rule == "backtracking":
            while True:
                x_new, g_new = prox(y - step * gy, lam * step)
                diff = x_new - y
                f_new, _ = smooth(x_new)
                bound = fy + float(np.sum(gy * diff)) + float(np.sum(diff**2)) / (2.0 * step)
                if f_new <= bound + 1e-12 * max(1.0, abs(fy)):
                    break
                step *= cfg.backtrack_eta
                if step < _BACKTRACK_FLOOR:
                    raise NumericError("backtracking step underflow", iteration=iteration)
        else:
            x_new, g_new = prox(y - step * gy, lam * step)
            f_new, _ = smooth(x_new)

        obj = f_new + lam * g_new
        if not math.isfinite(obj):
            raise NumericError("objective diverged", iteration=iteration)
        trace.append(obj)
        logger.debug("fista step", extra={"iteration": iteration, "objective": obj, "step": step})

        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t = x_new, t_new

        if abs(obj - f_prev) / max(abs(f_prev), 1e-12) < cfg.tol:
            converged = True
            break
        f_prev = obj

    return x, trace, iteration, converged


def _smooth_loss(loss: SmoothLoss, cfg: SolveConfig) -> SmoothLoss:
    if cfg.eps_m > 0:
        return MeanPenalizedLoss(loss, cfg.lam * cfg.eps_m)
    return loss


def fista(loss: SmoothLoss, penalty: SpectralPenalty, cfg: SolveConfig, W0: FloatArray) -> SolveReport:
    """Minimize loss(W) + lam * g(W); the report holds the last iterate."""
    smooth = _smooth_loss(loss, cfg)
    W, trace, iterations, converged = _run(
        smooth, penalty.prox_and_value, np.asarray(W0, dtype=np.float64), smooth.lipschitz, cfg
    )
    logger.info(
        "fista finished",
        extra={
            "penalty": penalty.spec.label,
            "lam": cfg.lam,
            "iterations": iterations,
            "objective": trace[-1],
            "converged": converged,
        },
    )
    return SolveReport(
        W_hat=W,
        objective_trace=np.asarray(trace),
        iterations=iterations,
        converged=converged,
        rank_after_threshold=numeric_rank(W),
    )


def solve_centered(
    loss: SmoothLoss,
    penalty: SpectralPenalty,
    cfg: SolveConfig,
    W0: FloatArray,
    z0: FloatArray | None = None,
) -> SolveReport:
    """Minimize loss(V + z 1^T) + lam * g(V) over the stacked variable [V | z]."""
    W0 = np.asarray(W0, dtype=np.float64)
    d, T = W0.shape
    z_init = np.zeros(d) if z0 is None else np.asarray(z0, dtype=np.float64)
    if z_init.shape != (d,):
        raise ParameterError(f"z0 must have length {d}, got shape {z_init.shape}")
    smooth_w = _smooth_loss(loss, cfg)

    def smooth(S: FloatArray) -> tuple[float, FloatArray]:
        V, z = S[:, :T], S[:, T]
        value, G = smooth_w(V + z[:, None])
        return value, np.column_stack([G, G.sum(axis=1)])

    def prox(S: FloatArray, lam: float) -> tuple[FloatArray, float]:
        V_new, g = penalty.prox_and_value(S[:, :T], lam)
        return np.column_stack([V_new, S[:, T]]), g

    base = smooth_w.lipschitz
    lipschitz = None if base is None else base * (1.0 + T)
    S0 = np.column_stack([W0 - z_init[:, None], z_init])
    S, trace, iterations, converged = _run(smooth, prox, S0, lipschitz, cfg)
    V, z = S[:, :T], S[:, T].copy()
    W = V + z[:, None]
    logger.info(
        "centered fista finished",
        extra={
            "penalty": penalty.spec.label,
            "lam": cfg.lam,
            "iterations": iterations,
            "objective": trace[-1],
            "converged": converged,
        },
    )
    return SolveReport(
        W_hat=W,
        z_hat=z,
        objective_trace=np.asarray(trace),
        iterations=iterations,
        converged=converged,
        rank_after_threshold=numeric_rank(W),
    )


def solve(loss: SmoothLoss, cfg: SolveConfig, shape: tuple[int, int]) -> SolveReport:
    """Cold start from zero, centered or not as configured."""
    penalty = SpectralPenalty(cfg.penalty)
    W0 = np.zeros(shape)
    if cfg.centered:
        return solve_centered(loss, penalty, cfg, W0)
    return fista(loss, penalty, cfg, W0)


def default_threshold_grid(W: FloatArray, size: int = 20) -> tuple[float, ...]:
    """Log-spaced thresholds between 1e-4 * sigma_1 and sigma_1."""
    top = float(thin_svd(W).sigma[0]) if W.size else 0.0
    if top == 0:
        return (0.0,)
    return tuple(float(v) for v in np.geomspace(1e-4 * top, top, size))


def threshold_rank(
    W: FloatArray, grid: Sequence[float], validator: Validator
) -> tuple[FloatArray, int, float]:
    """Zero singular values below tau for each tau; keep the best by validation.

    Ties go to the first tau in ascending order.
    """
    if not grid:
        raise ParameterError("threshold grid is empty")
    f = thin_svd(W)
    best: tuple[float, FloatArray, float] | None = None
    for tau in sorted(grid):
        W_thr = f.reconstruct(np.where(f.sigma >= tau, f.sigma, 0.0))
        score = validator(W_thr)
        if best is None or score < best[0]:
            best = (score, W_thr, float(tau))
    assert best is not None
    _, W_thr, tau = best
    return W_thr, numeric_rank(W_thr), tau


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------

PenaltyName = Literal["fr", "trace", "el.net", "ksup", "box"]


@dataclass(frozen=True)
class GridCell:
    lam: float
    k: float | None = None
    a: float | None = None
    gamma: float | None = None

    def sort_key(self) -> tuple[float, float, float, float]:
        # smaller lambda, then smaller k, then larger a, then larger gamma
        return (
            self.lam,
            self.k if self.k is not None else 0.0,
            -(self.a if self.a is not None else 0.0),
            -(self.gamma if self.gamma is not None else 0.0),
        )

    def as_dict(self) -> dict[str, float]:
        out = {"lam": self.lam}
        for name in ("k", "a", "gamma"):
            value = getattr(self, name)
            if value is not None:
                out[name] = float(value)
        return out


@dataclass(frozen=True)
class SearchSpace:
    penalty: PenaltyName
    lams: tuple[float, ...]
    ks: tuple[float, ...] = ()
    a_values: tuple[float, ...] = ()
    gammas: tuple[float, ...] = ()
    b: float = 1.0

    def __post_init__(self) -> None:
        if not self.lams:
            raise ParameterError("lambda grid is empty")
        if self.penalty in ("ksup", "box") and not self.ks:
            raise ParameterError(f"{self.penalty} search needs a k grid")
        if self.penalty == "box" and not self.a_values:
            raise ParameterError("box search needs an a grid")
        if self.penalty == "el.net" and not self.gammas:
            raise ParameterError("elastic net search needs a gamma grid")

    def cells(self) -> list[GridCell]:
        out: list[GridCell] = []
        for lam in self.lams:
            match self.penalty:
                case "fr" | "trace":
                    out.append(GridCell(lam))
                case "el.net":
                    out.extend(GridCell(lam, gamma=g) for g in self.gammas)
                case "ksup":
                    out.extend(GridCell(lam, k=k) for k in self.ks)
                case "box":
                    out.extend(GridCell(lam, k=k, a=a) for k in self.ks for a in self.a_values)
        return out

    def penalty_for(self, cell: GridCell, r: int) -> PenaltySpec:
        match self.penalty:
            case "fr":
                return PenaltySpec("sq_frobenius")
            case "trace":
                return PenaltySpec("trace")
            case "el.net":
                return PenaltySpec("elastic_net", gamma=float(cell.gamma or 0.0))
            case "ksup":
                k = int(round(float(cell.k or 0)))
                return PenaltySpec("sq_ksup", k=k)
            case "box":
                params = BoxParams.from_k(float(cell.a or 0.0), self.b, float(cell.k or 0.0), r)
                return PenaltySpec("sq_box", box=params)
        raise ParameterError(f"unknown penalty {self.penalty!r}")


@dataclass(frozen=True, eq=False)
class LearningTask:
    """A loss on the training split plus validation and test error functions."""

    loss: SmoothLoss
    shape: tuple[int, int]
    validate: Validator
    test: Validator


@dataclass(eq=False)
class CellResult:
    cell: GridCell
    report: SolveReport
    val_error: float
    W_thr: FloatArray | None = None
    tau: float | None = None
    rank_thr: int | None = None
    val_error_thr: float | None = None


def _evaluate_cell(
    task: LearningTask, space: SearchSpace, cfg: SolveConfig, cell: GridCell, threshold: bool
) -> CellResult:
    r = min(task.shape)
    cell_cfg = replace(cfg, lam=cell.lam, penalty=space.penalty_for(cell, r))
    report = solve(task.loss, cell_cfg, task.shape)
    result = CellResult(cell=cell, report=report, val_error=task.validate(report.W_hat))
    if threshold:
        grid = cfg.threshold_grid or default_threshold_grid(report.W_hat)
        W_thr, rank, tau = threshold_rank(report.W_hat, grid, task.validate)
        result.W_thr, result.rank_thr, result.tau = W_thr, rank, tau
        result.val_error_thr = task.validate(W_thr)
    return result


def evaluate_grid(
    task: LearningTask,
    space: SearchSpace,
    cfg: SolveConfig,
    *,
    threshold: bool = False,
    workers: int = 1,
) -> list[CellResult]:
    """Solve every cell once (cold start); failed cells are logged and skipped."""
    cells = space.cells()
    results: dict[int, CellResult] = {}

    def run(i: int) -> tuple[int, CellResult | None]:
        cell = cells[i]
        try:
            return i, _evaluate_cell(task, space, cfg, cell, threshold)
        except BoxNormError as exc:
            logger.warning(
                "grid cell failed",
                extra={"penalty": space.penalty, "cell": cell.as_dict(), "error": str(exc)},
            )
            return i, None

    if workers <= 1:
        outcomes = [run(i) for i in range(len(cells))]
    else:
        outcomes = []
        with ThreadPoolExecutor(max_workers=workers) as executor:
            futures = {executor.submit(run, i): i for i in range(len(cells))}
            for future in as_completed(futures):
                outcomes.append(future.result())

    for i, result in outcomes:
        if result is not None:
            results[i] = result
    if not results:
        raise NumericError(f"every grid cell failed for penalty {space.penalty}")
    return [results[i] for i in sorted(results)]


def select_cell(results: Sequence[CellResult], *, thresholded: bool = False) -> CellResult:
    def key(r: CellResult) -> tuple[float, tuple[float, float, float, float]]:
        err = r.val_error_thr if thresholded else r.val_error
        if err is None:
            raise ParameterError("grid was evaluated without thresholding")
        return (err, r.cell.sort_key())

    return min(results, key=key)


def report_for(result: CellResult, task: LearningTask, *, thresholded: bool = False) -> SolveReport:
    """Final report of a selected cell, test metric computed once."""
    base = result.report
    selected = result.cell.as_dict()
    if thresholded:
        assert result.W_thr is not None and result.tau is not None and result.rank_thr is not None
        W = result.W_thr
        selected["threshold"] = result.tau
        rank = result.rank_thr
        val = result.val_error_thr
    else:
        W = base.W_hat
        rank = base.rank_after_threshold
        val = result.val_error
    return SolveReport(
        W_hat=W,
        z_hat=base.z_hat,
        objective_trace=base.objective_trace,
        iterations=base.iterations,
        converged=base.converged,
        selected=selected,
        rank_after_threshold=rank,
        metrics={"validation": float(val if val is not None else math.nan), "test": task.test(W)},
    )


def grid_search(
    task: LearningTask,
    space: SearchSpace,
    cfg: SolveConfig,
    *,
    threshold: bool = False,
    workers: int = 1,
) -> SolveReport:
    results = evaluate_grid(task, space, cfg, threshold=threshold, workers=workers)
    best = select_cell(results, thresholded=threshold)
    logger.info(
        "grid search selected",
        extra={"penalty": space.penalty, "cell": best.cell.as_dict(), "cells": len(results)},
    )
    return report_for(best, task, thresholded=threshold)


def default_lambda_grid(size: int = 10) -> tuple[float, ...]:
    return tuple(float(v) for v in np.geomspace(1e-4, 1e2, size))
