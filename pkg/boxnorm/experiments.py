"""Experiment runners behind the `complete`, `mtl`, `bench-prox` and `roles` commands.

Each runner returns a list of row dicts; the CLI writes them as CSV.
"""

from __future__ import annotations

import logging
import math
import statistics
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy import stats

from boxnorm.config import BenchConfig, CompleteConfig, GridConfig, MtlConfig, RolesConfig
from boxnorm.data import (
    CompletionProblem,
    SplitSpec,
    gen_block_clustered,
    gen_lowrank,
    load_ratings,
    metrics,
    split,
    split_tasks,
)
from boxnorm.errors import ConsistencyError, InputError, NumericError, ParameterError
from boxnorm.losses import MaskedSquaredLoss, MultitaskSquaredLoss, ObservationMask, TaskDataset
from boxnorm.prox import ProxConfig, prox_sq_ksup
from boxnorm.solver import (
    TOLERANCE_PRESETS,
    CellResult,
    LearningTask,
    SearchSpace,
    SolveConfig,
    evaluate_grid,
    report_for,
    select_cell,
)
from boxnorm.spectral import PenaltySpec
from boxnorm.vecnorm import FloatArray

logger = logging.getLogger(__name__)

Row = dict[str, Any]

BENCH_AGREEMENT_TOL = 1e-8


@dataclass
class TrialOutcome:
    error: float
    rank: int
    k: float | None
    a: float | None


def completion_task(
    problem: CompletionProblem, *, kind: str = "relative_sq", nmae_squared_form: bool = False
) -> LearningTask:
    """Masked squared loss on the training entries.

    Validation always scores against the observed values. Test scores against
    the noiseless matrix when the problem was generated (``W_clean`` set) and
    against the observed values otherwise.
    """

    def scorer(mask: ObservationMask, truth: FloatArray | None) -> Callable[[FloatArray], float]:
        target = mask.values if truth is None else truth[mask.rows, mask.cols]

        def score(W: FloatArray) -> float:
            return metrics(
                mask.predict(W),
                target,
                kind,  # type: ignore[arg-type]
                problem.value_range,
                nmae_squared_form=nmae_squared_form,
            )

        return score

    return LearningTask(
        loss=MaskedSquaredLoss(problem.train),
        shape=problem.shape,
        validate=scorer(problem.validation, None),
        test=scorer(problem.test, problem.W_clean),
    )


def multitask_task(train: TaskDataset, validation: TaskDataset, test: TaskDataset) -> LearningTask:
    def scorer(data: TaskDataset) -> Callable[[FloatArray], float]:
        def score(W: FloatArray) -> float:
            return metrics(data.predict(W), data.y, "task_rmse")

        return score

    return LearningTask(
        loss=MultitaskSquaredLoss(train),
        shape=(train.d, train.T),
        validate=scorer(validation),
        test=scorer(test),
    )


def search_space(name: str, cfg: GridConfig) -> SearchSpace:
    return SearchSpace(
        penalty=name,  # type: ignore[arg-type]
        lams=tuple(cfg.lambdas),
        ks=tuple(cfg.ks),
        a_values=tuple(cfg.a_values),
        gammas=tuple(cfg.gammas),
    )


def solve_template(cfg: GridConfig, *, centered: bool = False) -> SolveConfig:
    return SolveConfig(
        lam=0.0,
        penalty=PenaltySpec("trace"),
        tol=TOLERANCE_PRESETS[cfg.tolerance],
        max_iter=cfg.max_iter,
        centered=centered,
        eps_m=cfg.eps_m,
        threshold_grid=tuple(cfg.thresholds),
    )


def _outcome(result: CellResult, task: LearningTask, thresholded: bool) -> TrialOutcome:
    report = report_for(result, task, thresholded=thresholded)
    return TrialOutcome(
        error=report.metrics["test"],
        rank=report.rank_after_threshold,
        k=report.selected.get("k"),
        a=report.selected.get("a"),
    )


def _mean_or_blank(values: Sequence[float | None]) -> float | str:
    kept = [v for v in values if v is not None]
    return statistics.fmean(kept) if kept else ""


def _summarize(label: str, thresholded: bool, outcomes: Sequence[TrialOutcome]) -> Row:
    errors = [o.error for o in outcomes]
    return {
        "penalty": label,
        "thresholded": thresholded,
        "error_mean": statistics.fmean(errors),
        "error_std": statistics.stdev(errors) if len(errors) > 1 else 0.0,
        "rank": statistics.fmean(o.rank for o in outcomes),
        "k": _mean_or_blank([o.k for o in outcomes]),
        "a": _mean_or_blank([o.a for o in outcomes]),
        "trials": len(errors),
    }


def add_p_values(rows: list[Row], per_trial: dict[tuple[str, bool], list[float]]) -> None:
    """Paired t-test of each row's trial errors against the best row of its group."""
    for thresholded in (False, True):
        group = [r for r in rows if r["thresholded"] == thresholded]
        if not group:
            continue
        best = min(group, key=lambda r: r["error_mean"])
        base = per_trial[(best["penalty"], thresholded)]
        for row in group:
            errors = per_trial[(row["penalty"], thresholded)]
            if row is best or len(errors) < 2:
                row["p_value"] = ""
                continue
            result = stats.ttest_rel(errors, base)
            p = float(result.pvalue)
            row["p_value"] = "" if math.isnan(p) else p


def _run_trials(
    labels: Sequence[tuple[str, str, bool]],
    make_task: Callable[[int], LearningTask],
    cfg: GridConfig,
) -> list[Row]:
    """labels: (row label, penalty name, centered). One task per trial seed."""
    outcomes: dict[tuple[str, bool], list[TrialOutcome]] = {}
    completed = {label for label, _, _ in labels}
    for trial in range(cfg.trials):
        task = make_task(cfg.seed + trial)
        for label, name, centered in labels:
            if label not in completed:
                continue
            try:
                results = evaluate_grid(
                    task,
                    search_space(name, cfg),
                    solve_template(cfg, centered=centered),
                    threshold=cfg.threshold,
                    workers=cfg.workers,
                )
            except NumericError as exc:
                logger.warning("penalty failed in every cell", extra={"penalty": label, "trial": trial, "error": str(exc)})
                completed.discard(label)
                continue
            thresholded_options = (False, True) if cfg.threshold else (False,)
            for thresholded in thresholded_options:
                best = select_cell(results, thresholded=thresholded)
                outcomes.setdefault((label, thresholded), []).append(_outcome(best, task, thresholded))
        logger.info("trial finished", extra={"trial": trial})

    rows: list[Row] = []
    per_trial: dict[tuple[str, bool], list[float]] = {}
    for label, _, _ in labels:
        if label not in completed:
            continue
        for thresholded in (False, True):
            trial_outcomes = outcomes.get((label, thresholded))
            if not trial_outcomes:
                continue
            rows.append(_summarize(label, thresholded, trial_outcomes))
            per_trial[(label, thresholded)] = [o.error for o in trial_outcomes]
    if not rows:
        raise NumericError("every penalty failed")
    add_p_values(rows, per_trial)
    return rows


def _completion_source(cfg: CompleteConfig) -> Callable[[int], CompletionProblem]:
    fractions_left = 1.0 - cfg.rho - cfg.validation
    if fractions_left <= 0:
        raise ParameterError(f"rho={cfg.rho} plus validation={cfg.validation} leave no test entries")

    if cfg.dataset is not None:
        if cfg.format is None:
            raise ParameterError("dataset needs format=movielens_tab or format=jester_csv")
        loaded = load_ratings(cfg.dataset, cfg.format)
        if not isinstance(loaded, CompletionProblem):
            raise InputError(f"{cfg.format} did not produce a completion problem")

        def real(seed: int) -> CompletionProblem:
            spec = SplitSpec(
                cfg.rho,
                cfg.validation,
                fractions_left,
                seed=seed,
                mode=cfg.split_mode,
                train_per_user=cfg.train_per_user,
            )
            return split(loaded, spec)

        return real

    def synthetic(seed: int) -> CompletionProblem:
        problem = gen_lowrank(cfg.d, cfg.rank, noise=cfg.noise, seed=seed)
        return split(problem, SplitSpec(cfg.rho, cfg.validation, fractions_left, seed=seed))

    return synthetic


def run_completion(cfg: CompleteConfig) -> list[Row]:
    """Matrix completion table: one row per penalty, before and after thresholding."""
    source = _completion_source(cfg)
    kind = "nmae" if cfg.dataset is not None else "relative_sq"

    def make_task(seed: int) -> LearningTask:
        return completion_task(source(seed), kind=kind, nmae_squared_form=cfg.nmae_squared_form)

    labels = [(name, name, False) for name in cfg.penalties]
    return _run_trials(labels, make_task, cfg)


def run_mtl(cfg: MtlConfig) -> list[Row]:
    """Centered and uncentered variants of every penalty (labels `box`, `c-box`, ...)."""
    labels = [(name, name, False) for name in cfg.penalties]
    labels += [(f"c-{name}", name, True) for name in cfg.penalties]

    if cfg.dataset is not None:
        if cfg.format != "lenk_table":
            raise ParameterError("mtl dataset needs format=lenk_table")
        loaded = load_ratings(cfg.dataset, "lenk_table", profiles_per_task=cfg.profiles_per_task)
        if not isinstance(loaded, TaskDataset):
            raise InputError("lenk_table did not produce a task dataset")
        test = cfg.test if cfg.test is not None else 1.0 - cfg.rho - cfg.validation

        def lenk(seed: int) -> LearningTask:
            tr, va, te = split_tasks(loaded, SplitSpec(cfg.rho, cfg.validation, test, seed=seed))
            return multitask_task(tr, va, te)

        return _run_trials(labels, lenk, cfg)

    test = cfg.test if cfg.test is not None else 1.0 - cfg.rho - cfg.validation
    if test <= 0:
        raise ParameterError(f"rho={cfg.rho} plus validation={cfg.validation} leave no test entries")

    def blocks(seed: int) -> LearningTask:
        problem = gen_block_clustered(cfg.d, cfg.blocks, cfg.block_size, seed=seed)
        return completion_task(split(problem, SplitSpec(cfg.rho, cfg.validation, test, seed=seed)))

    return _run_trials(labels, blocks, cfg)


def _median_time(fn: Callable[[], object], repeats: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    return statistics.median(samples)


def run_bench_prox(cfg: BenchConfig) -> list[Row]:
    """Time the breakpoint prox against the (r, l) scan of the squared k-support norm."""
    rng = np.random.default_rng(cfg.seed)
    prox_cfg = ProxConfig(cfg.lam)
    rows: list[Row] = []
    for d in cfg.sizes:
        k = max(1, int(round(cfg.k_fraction * d)))
        w = rng.standard_normal(d)
        fast = prox_sq_ksup(w, k, prox_cfg, method="fast")
        reference = prox_sq_ksup(w, k, prox_cfg, method="reference")
        gap = float(np.max(np.abs(fast - reference)))
        if gap > BENCH_AGREEMENT_TOL:
            raise ConsistencyError(f"fast and reference prox disagree by {gap:.3e} at d={d}, k={k}")
        fast_s = _median_time(lambda: prox_sq_ksup(w, k, prox_cfg, method="fast"), cfg.repeats, cfg.warmup)
        ref_s = _median_time(lambda: prox_sq_ksup(w, k, prox_cfg, method="reference"), cfg.repeats, cfg.warmup)
        logger.info("benchmarked prox", extra={"d": d, "k": k, "fast": fast_s, "reference": ref_s})
        rows.append({"d": d, "k": k, "fast_seconds": fast_s, "reference_seconds": ref_s})
    return rows


def scaling_exponent(rows: Sequence[Row], column: str = "fast_seconds") -> float:
    """Slope of log(time) against log(d)."""
    if len(rows) < 2:
        raise ParameterError("need at least two sizes to fit a scaling exponent")
    x = np.log([float(r["d"]) for r in rows])
    y = np.log([max(float(r[column]), 1e-12) for r in rows])
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def run_parameter_roles(cfg: RolesConfig) -> list[Row]:
    """Validated `a` across noise levels (k fixed) and validated `k` across true ranks (a fixed)."""
    test = 1.0 - cfg.rho - cfg.validation
    if test <= 0:
        raise ParameterError(f"rho={cfg.rho} plus validation={cfg.validation} leave no test entries")
    template = solve_template(cfg)
    rows: list[Row] = []

    def study(
        name: str,
        values: Sequence[float],
        make: Callable[[float, int], CompletionProblem],
        space: SearchSpace,
        picked: str,
    ) -> None:
        for value in values:
            chosen: list[float] = []
            errors: list[float] = []
            for trial in range(cfg.trials):
                seed = cfg.seed + trial
                problem = split(make(value, seed), SplitSpec(cfg.rho, cfg.validation, test, seed=seed))
                task = completion_task(problem)
                results = evaluate_grid(task, space, template, workers=cfg.workers)
                best = select_cell(results)
                report = report_for(best, task)
                chosen.append(report.selected[picked])
                errors.append(report.metrics["test"])
            rows.append(
                {
                    "study": name,
                    "value": value,
                    f"selected_{picked}": statistics.fmean(chosen),
                    "error_mean": statistics.fmean(errors),
                }
            )

    def noisy(level: float, seed: int) -> CompletionProblem:
        return gen_lowrank(cfg.d, cfg.rank, seed=seed, noise_scale=level)

    def ranked(rank: float, seed: int) -> CompletionProblem:
        return gen_lowrank(cfg.d, int(rank), seed=seed)

    a_space = SearchSpace("box", tuple(cfg.lambdas), ks=(cfg.fixed_k,), a_values=tuple(cfg.a_values))
    k_space = SearchSpace("box", tuple(cfg.lambdas), ks=tuple(cfg.ks), a_values=(cfg.fixed_a,))
    snr_rows_start = len(rows)
    study("a_vs_noise", cfg.noise_levels, noisy, a_space, "a")
    for row in rows[snr_rows_start:]:
        row["snr"] = cfg.rank / float(row["value"]) ** 2
    study("k_vs_rank", [float(r) for r in cfg.ranks], ranked, k_space, "k")
    return rows
