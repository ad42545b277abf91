from __future__ import annotations

import contextlib
import csv
import io
from pathlib import Path

import pytest

from boxnorm.cli import EXIT_OK, EXIT_USAGE, main
from boxnorm.data import read_problem


def _block(text: str) -> dict[str, str]:
    out = {}
    for line in text.strip().splitlines():
        key, _, value = line.partition("=")
        out[key] = value
    return out


def _csv_rows(path: Path) -> tuple[str, list[dict[str, str]]]:
    lines = path.read_text(encoding="utf-8").splitlines()
    return lines[0], list(csv.DictReader(lines[1:]))


def test_norm_ksup_vector(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    path = tmp_path / "w.txt"
    path.write_text("2 1 0.5\n", encoding="utf-8")
    assert main(["norm", "--ksup", str(path), "k=2"]) == EXIT_OK
    out = _block(capsys.readouterr().out)
    assert out["norm"] == "ksup"
    assert float(out["value"]) == pytest.approx(2.5)
    assert out["q"] == "1"


def test_norm_writes_to_current_stdout(tmp_path: Path) -> None:
    path = tmp_path / "w.txt"
    path.write_text("2 1 0.5\n", encoding="utf-8")
    buffer = io.StringIO()
    with contextlib.redirect_stdout(buffer):
        assert main(["norm", "--ksup", str(path), "k=2"]) == EXIT_OK
    assert _block(buffer.getvalue())["norm"] == "ksup"


def test_norm_ksup_rejects_fractional_k(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    vector = tmp_path / "w.txt"
    vector.write_text("2 1 0.5\n", encoding="utf-8")
    matrix = tmp_path / "m.txt"
    matrix.write_text("1 0\n0 2\n", encoding="utf-8")
    assert main(["norm", "--ksup", str(vector), "k=2.5"]) == EXIT_USAGE
    assert main(["norm", "--ksup", str(matrix), "k=1.5"]) == EXIT_USAGE
    assert capsys.readouterr().out == ""
    assert main(["norm", "--ksup", str(vector), "k=2.0"]) == EXIT_OK
    assert float(_block(capsys.readouterr().out)["value"]) == pytest.approx(2.5)


def test_norm_box_vector(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    path = tmp_path / "w.txt"
    path.write_text("3 4\n", encoding="utf-8")
    assert main(["norm", "--box", str(path), "a=1", "b=1", "c=2"]) == EXIT_OK
    out = _block(capsys.readouterr().out)
    assert float(out["value"]) == pytest.approx(5.0)
    assert float(out["dual"]) == pytest.approx(5.0)
    assert {"q", "ell", "alpha", "p_res"} <= out.keys()


def test_norm_trace_matrix(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    path = tmp_path / "W.txt"
    path.write_text("3 0\n0 4\n", encoding="utf-8")
    assert main(["norm", "--trace", str(path)]) == EXIT_OK
    out = _block(capsys.readouterr().out)
    assert out["norm"] == "spectral_trace"
    assert float(out["value"]) == pytest.approx(7.0)
    assert float(out["dual"]) == pytest.approx(4.0)
    assert out["rank"] == "2"
    assert float(out["sigma_max"]) == pytest.approx(4.0)


def test_norm_usage_errors(tmp_path: Path) -> None:
    assert main(["norm", "--ksup", str(tmp_path / "missing.txt"), "k=2"]) == EXIT_USAGE
    path = tmp_path / "w.txt"
    path.write_text("1 2 3\n", encoding="utf-8")
    assert main(["norm", "--ksup", str(path), "k=4"]) == EXIT_USAGE
    assert main(["norm", "--box", str(path), "a=1"]) == EXIT_USAGE
    assert main(["norm", str(path)]) == EXIT_USAGE


def test_gen_lowrank_is_reproducible(tmp_path: Path) -> None:
    first, second = tmp_path / "a.txt", tmp_path / "b.txt"
    assert main(["gen", "lowrank", "d=6", "r=2", "seed=3", f"output={first}"]) == EXIT_OK
    assert main(["gen", "lowrank", "d=6", "r=2", "seed=3", f"output={second}"]) == EXIT_OK
    assert first.read_bytes() == second.read_bytes()
    problem = read_problem(first)
    assert problem.shape == (6, 6)
    assert len(problem.train) == 36


def test_gen_blocks_to_stdout(capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["gen", "blocks", "d=4", "blocks=2", "block_size=2", "noise=false"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("dims 4 4\n")


def test_gen_rejects_bad_parameters() -> None:
    assert main(["gen", "lowrank", "d=3", "r=5"]) == EXIT_USAGE
    assert main(["gen", "lowrank", "colour=red"]) == EXIT_USAGE
    assert main(["gen", "lowrank", "d"]) == EXIT_USAGE


def test_complete_small_run(tmp_path: Path) -> None:
    output = tmp_path / "complete.csv"
    args = [
        "complete",
        "d=8",
        "rank=2",
        "rho=0.5",
        "validation=0.1",
        "trials=2",
        "penalties=trace,box",
        "lambdas=0.1,1.0",
        "ks=1.0,2.0",
        "a_values=0.1",
        "max_iter=50",
        "threshold=false",
        f"output={output}",
    ]
    assert main(args) == EXIT_OK
    echo, rows = _csv_rows(output)
    assert echo.startswith("# ")
    assert "d=8" in echo.split() and "trials=2" in echo.split()
    assert [r["penalty"] for r in rows] == ["trace", "box"]
    for row in rows:
        assert row["thresholded"] == "False"
        assert float(row["error_mean"]) >= 0.0
        assert row["trials"] == "2"
    assert sum(1 for r in rows if r["p_value"] == "") >= 1
    assert rows[1]["k"] != ""


def test_complete_reads_config_file(tmp_path: Path) -> None:
    conf = tmp_path / "small.conf"
    conf.write_text(
        "# tiny run\nd=6\nrank=1\nrho=0.5\nvalidation=0.1\ntrials=1\n"
        "penalties=trace\nlambdas=1.0\nmax_iter=20\nthreshold=true\n",
        encoding="utf-8",
    )
    output = tmp_path / "out.csv"
    assert main(["complete", "--config", str(conf), "seed=4", f"output={output}"]) == EXIT_OK
    echo, rows = _csv_rows(output)
    assert "seed=4" in echo.split()
    assert [(r["penalty"], r["thresholded"]) for r in rows] == [("trace", "False"), ("trace", "True")]


def test_complete_rejects_leftover_fractions() -> None:
    assert main(["complete", "rho=0.9", "validation=0.2", "trials=1"]) == EXIT_USAGE


def test_bench_prox_small(tmp_path: Path) -> None:
    output = tmp_path / "bench.csv"
    args = ["bench-prox", "sizes=16,32", "repeats=1", "warmup=0", f"output={output}"]
    assert main(args) == EXIT_OK
    _, rows = _csv_rows(output)
    assert [int(r["d"]) for r in rows] == [16, 32]
    assert [int(r["k"]) for r in rows] == [1, 2]
    assert all(float(r["fast_seconds"]) >= 0.0 for r in rows)
