from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from boxnorm.config import BenchConfig, CompleteConfig, MtlConfig, RolesConfig, load_experiment_config
from boxnorm.data import SplitSpec, gen_lowrank, split
from boxnorm.errors import ParameterError
from boxnorm.experiments import (
    add_p_values,
    completion_task,
    run_bench_prox,
    run_completion,
    run_mtl,
    run_parameter_roles,
    scaling_exponent,
    search_space,
    solve_template,
)
from boxnorm.solver import evaluate_grid, report_for, select_cell


def _by_label(rows: list[dict[str, object]], thresholded: bool = False) -> dict[str, dict[str, object]]:
    return {str(r["penalty"]): r for r in rows if r["thresholded"] == thresholded}


def _lenk_file(tmp_path: Path, rng: np.random.Generator, tasks: int, profiles: int) -> Path:
    w = rng.standard_normal(14)
    lines = ["# synthetic conjoint table"]
    for _ in range(tasks * profiles):
        x = rng.choice([-1.0, 1.0], size=14)
        rating = float(np.clip(np.round(5.0 + x @ w / 3.0), 0, 10))
        lines.append(" ".join(str(v) for v in [*x, rating]))
    path = tmp_path / "lenk.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_scaling_exponent() -> None:
    rows = [{"d": d, "fast_seconds": 1e-6 * d**2} for d in (100, 200, 400)]
    assert scaling_exponent(rows) == pytest.approx(2.0)
    with pytest.raises(ParameterError):
        scaling_exponent(rows[:1])


def test_add_p_values_blanks_the_best_row() -> None:
    rows: list[dict[str, object]] = [
        {"penalty": "trace", "thresholded": False, "error_mean": 0.5},
        {"penalty": "box", "thresholded": False, "error_mean": 0.4},
    ]
    per_trial = {("trace", False): [0.5, 0.52, 0.48], ("box", False): [0.4, 0.41, 0.39]}
    add_p_values(rows, per_trial)  # type: ignore[arg-type]
    assert rows[1]["p_value"] == ""
    assert isinstance(rows[0]["p_value"], float)
    assert 0.0 <= rows[0]["p_value"] <= 1.0  # type: ignore[operator]


def test_completion_task_tests_against_noiseless_matrix() -> None:
    problem = split(gen_lowrank(12, 2, seed=3), SplitSpec(0.5, 0.2, 0.3, seed=3))
    assert problem.W_true is not None and problem.W_clean is not None
    task = completion_task(problem)
    assert task.test(problem.W_clean) == 0.0
    assert task.test(problem.W_true) > 0.1
    assert task.validate(problem.W_true) == 0.0
    assert task.validate(problem.W_clean) > 0.1


def test_completion_task_without_clean_matrix_uses_observed_values() -> None:
    generated = split(gen_lowrank(12, 2, seed=3), SplitSpec(0.5, 0.2, 0.3, seed=3))
    problem = replace(generated, W_clean=None)
    assert problem.W_true is not None
    assert completion_task(problem).test(problem.W_true) == 0.0


def test_run_completion_tiny() -> None:
    cfg = load_experiment_config(
        CompleteConfig,
        overrides={
            "d": "10",
            "rank": "2",
            "rho": "0.5",
            "trials": "2",
            "penalties": "trace,el.net,ksup,box",
            "lambdas": "0.1,1.0",
            "ks": "1.0,2.0",
            "a_values": "0.01",
            "gammas": "0.1",
            "max_iter": "60",
        },
    )
    rows = run_completion(cfg)
    assert len(rows) == 8
    plain = _by_label(rows)
    assert set(plain) == {"trace", "el.net", "ksup", "box"}
    assert plain["trace"]["k"] == ""
    assert plain["box"]["a"] == pytest.approx(0.01)
    assert sum(1 for r in rows if r["p_value"] == "") >= 2


def test_run_mtl_tiny_reports_centered_variants() -> None:
    cfg = load_experiment_config(
        MtlConfig,
        overrides={
            "d": "6",
            "blocks": "2",
            "block_size": "3",
            "rho": "0.5",
            "trials": "1",
            "penalties": "fr,trace",
            "lambdas": "0.1,1.0",
            "max_iter": "40",
            "threshold": "false",
        },
    )
    rows = run_mtl(cfg)
    assert [r["penalty"] for r in rows] == ["fr", "trace", "c-fr", "c-trace"]


def test_run_mtl_on_lenk_table(tmp_path: Path, rng: np.random.Generator) -> None:
    path = _lenk_file(tmp_path, rng, tasks=4, profiles=10)
    cfg = load_experiment_config(
        MtlConfig,
        overrides={
            "dataset": str(path),
            "format": "lenk_table",
            "profiles_per_task": "10",
            "rho": "0.4",
            "validation": "0.3",
            "test": "0.3",
            "trials": "1",
            "penalties": "trace",
            "lambdas": "0.01,0.1",
            "max_iter": "40",
            "threshold": "false",
        },
    )
    rows = run_mtl(cfg)
    assert [r["penalty"] for r in rows] == ["trace", "c-trace"]
    assert all(float(r["error_mean"]) >= 0.0 for r in rows)  # type: ignore[arg-type]


def test_run_mtl_needs_lenk_format() -> None:
    cfg = load_experiment_config(MtlConfig, overrides={"dataset": "x.txt", "trials": "1"})
    with pytest.raises(ParameterError):
        run_mtl(cfg)


def test_run_parameter_roles_tiny() -> None:
    cfg = load_experiment_config(
        RolesConfig,
        overrides={
            "d": "8",
            "rank": "2",
            "rho": "0.5",
            "trials": "1",
            "noise_levels": "0.5,1.0",
            "ranks": "1,2",
            "lambdas": "0.1,1.0",
            "ks": "1.0,2.0",
            "a_values": "0.01,0.1",
            "fixed_k": "2.0",
            "max_iter": "40",
        },
    )
    rows = run_parameter_roles(cfg)
    assert [(r["study"], r["value"]) for r in rows] == [
        ("a_vs_noise", 0.5),
        ("a_vs_noise", 1.0),
        ("k_vs_rank", 1.0),
        ("k_vs_rank", 2.0),
    ]
    assert rows[0]["snr"] == pytest.approx(8.0)
    assert rows[0]["selected_a"] in (0.01, 0.1)
    assert rows[2]["selected_k"] in (1.0, 2.0)


def test_run_bench_prox_tiny() -> None:
    cfg = load_experiment_config(BenchConfig, overrides={"sizes": "50,100", "repeats": "2", "warmup": "1"})
    rows = run_bench_prox(cfg)
    assert [(r["d"], r["k"]) for r in rows] == [(50, 2), (100, 5)]


@pytest.mark.slow
def test_prox_speed_and_scaling(slow_enabled: None) -> None:
    rows = run_bench_prox(BenchConfig(sizes=[16000], k_fraction=0.05))
    assert rows[0]["k"] == 800
    assert rows[0]["reference_seconds"] >= 5.0 * rows[0]["fast_seconds"]
    scaling = run_bench_prox(BenchConfig(sizes=[2**p for p in range(10, 16)], k_fraction=0.05))
    assert scaling_exponent(scaling) < 1.3


@pytest.mark.slow
def test_synthetic_completion_table(slow_enabled: None, config_dir: Path) -> None:
    cfg = load_experiment_config(CompleteConfig, path=config_dir / "complete.v0.conf")
    rows = run_completion(cfg)
    plain = _by_label(rows)
    thresholded = _by_label(rows, thresholded=True)
    expected = {"trace": 0.4085, "el.net": 0.4081, "ksup": 0.4031, "box": 0.3898}
    expected_thresholded = {"trace": 0.3449, "el.net": 0.3445, "ksup": 0.3381, "box": 0.3380}
    for name, value in expected.items():
        assert plain[name]["error_mean"] == pytest.approx(value, abs=0.05)
        assert thresholded[name]["error_mean"] == pytest.approx(expected_thresholded[name], abs=0.05)
    assert plain["box"]["error_mean"] <= plain["ksup"]["error_mean"] <= plain["el.net"]["error_mean"]  # type: ignore[operator]
    assert plain["ksup"]["k"] == pytest.approx(3.0, abs=1.5)


@pytest.mark.slow
def test_thresholding_recovers_rank_five(slow_enabled: None, config_dir: Path) -> None:
    cfg = load_experiment_config(CompleteConfig, path=config_dir / "complete.v0.conf")
    recovered = 0
    for trial in range(cfg.trials):
        seed = cfg.seed + trial
        problem = split(gen_lowrank(cfg.d, cfg.rank, seed=seed), SplitSpec(cfg.rho, cfg.validation, 0.7, seed=seed))
        task = completion_task(problem)
        results = evaluate_grid(task, search_space("box", cfg), solve_template(cfg), threshold=True)
        report = report_for(select_cell(results, thresholded=True), task, thresholded=True)
        recovered += report.rank_after_threshold == 5
    assert recovered >= 0.9 * cfg.trials


@pytest.mark.slow
def test_clustered_multitask_centering_helps(slow_enabled: None, config_dir: Path) -> None:
    cfg = load_experiment_config(MtlConfig, path=config_dir / "mtl.v0.conf")
    rows = _by_label(run_mtl(cfg))
    for name in ("fr", "trace", "el.net", "ksup", "box"):
        assert rows[f"c-{name}"]["error_mean"] < rows[name]["error_mean"]  # type: ignore[operator]
    structured = [float(rows[n]["error_mean"]) for n in ("c-box", "c-ksup")]  # type: ignore[arg-type]
    plain = [float(rows[n]["error_mean"]) for n in ("c-trace", "c-el.net")]  # type: ignore[arg-type]
    assert min(structured) <= min(plain)
    assert max(structured) <= max(plain)


@pytest.mark.slow
def test_movielens_trace_nmae(movielens_path: Path) -> None:
    cfg = load_experiment_config(
        CompleteConfig,
        overrides={
            "dataset": str(movielens_path),
            "format": "movielens_tab",
            "rho": "0.5",
            "validation": "0.1",
            "split_mode": "per_user",
            "penalties": "trace",
            "tolerance": "real",
            "trials": "1",
            "threshold": "false",
        },
    )
    rows = _by_label(run_completion(cfg))
    assert rows["trace"]["error_mean"] == pytest.approx(0.2034, abs=0.005)
    assert rows["trace"]["rank"] == pytest.approx(87, abs=10)
