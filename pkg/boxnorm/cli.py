from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any, TextIO

import numpy as np

from boxnorm.config import (
    BenchConfig,
    CompleteConfig,
    ExperimentConfig,
    GenBlocksConfig,
    GenLowrankConfig,
    MtlConfig,
    RolesConfig,
    load_experiment_config,
    parse_pairs,
    read_config_file,
)
from boxnorm.data import format_problem, gen_block_clustered, gen_lowrank
from boxnorm.errors import (
    BoxNormError,
    ConsistencyError,
    InputError,
    NumericError,
    ParameterError,
    ParseError,
)
from boxnorm.experiments import run_bench_prox, run_completion, run_mtl, run_parameter_roles
from boxnorm.logging_config import setup_logging
from boxnorm.settings import get_settings
from boxnorm.spectral import NormSpec, spectral_dual_norm, spectral_norm, thin_svd
from boxnorm.vecnorm import (
    BoxParams,
    box_norm,
    dual_box_norm,
    dual_k_support_norm,
    k_support_norm,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_SOLVE_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONSISTENCY = 3


def _read_numbers(path: str) -> np.ndarray:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    try:
        arr = np.loadtxt(io.StringIO(text.replace(",", " ")), ndmin=2)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if arr.size == 0:
        raise ParseError(f"{path}: no numbers found")
    return arr[0] if arr.shape[0] == 1 else arr


def _print_block(values: dict[str, Any], out: TextIO | None = None) -> None:
    out = out or sys.stdout
    for key, value in values.items():
        out.write(f"{key}={value}\n")


def _split_items(items: Sequence[str]) -> tuple[list[str], dict[str, str]]:
    plain = [i for i in items if "=" not in i]
    pairs = parse_pairs([i for i in items if "=" in i])
    return plain, pairs


def _float(pairs: dict[str, str], key: str) -> float:
    if key not in pairs:
        raise ParameterError(f"missing parameter {key}=")
    try:
        return float(pairs[key])
    except ValueError as exc:
        raise ParameterError(f"{key} must be a number, got {pairs[key]!r}") from exc


def _int(pairs: dict[str, str], key: str) -> int:
    value = _float(pairs, key)
    if not value.is_integer():
        raise ParameterError(f"{key} must be an integer, got {pairs[key]!r}")
    return int(value)


def _box_params(pairs: dict[str, str], d: int) -> BoxParams:
    a, b = _float(pairs, "a"), _float(pairs, "b")
    if "c" in pairs:
        return BoxParams(a=a, b=b, c=_float(pairs, "c"))
    return BoxParams.from_k(a, b, _float(pairs, "k"), d)


def cmd_norm(args: argparse.Namespace) -> int:
    plain, pairs = _split_items(args.items)
    if len(plain) != 1:
        raise ParameterError("norm needs exactly one input file")
    data = _read_numbers(plain[0])
    kind = args.kind

    if data.ndim == 1 and kind in ("box", "ksup"):
        if kind == "box":
            params = _box_params(pairs, data.size)
            value, cert = box_norm(data, params)
            _print_block(
                {
                    "norm": "box",
                    "value": repr(value),
                    "q": cert.q,
                    "ell": cert.ell,
                    "alpha": repr(cert.alpha),
                    "p_res": repr(cert.p_res),
                    "dual": repr(dual_box_norm(data, params)),
                }
            )
        else:
            k = _int(pairs, "k")
            value, q = k_support_norm(data, k)
            _print_block(
                {"norm": "ksup", "value": repr(value), "q": q, "dual": repr(dual_k_support_norm(data, k))}
            )
        return EXIT_OK

    W = data if data.ndim == 2 else data[None, :]
    r = min(W.shape)
    match kind:
        case "box":
            spec = NormSpec.of_box(_box_params(pairs, r))
        case "ksup":
            spec = NormSpec.ksup(_int(pairs, "k"))
        case "trace":
            spec = NormSpec.trace()
        case _:
            spec = NormSpec.frobenius()
    sigma = thin_svd(W).sigma
    _print_block(
        {
            "norm": f"spectral_{kind}",
            "value": repr(spectral_norm(W, spec)),
            "dual": repr(spectral_dual_norm(W, spec)),
            "rank": int(np.linalg.matrix_rank(W)),
            "sigma_max": repr(float(sigma[0])),
        }
    )
    return EXIT_OK


def _load(model: type[Any], args: argparse.Namespace) -> Any:
    overrides = parse_pairs(args.pairs)
    defaults: dict[str, str] = {}
    if issubclass(model, ExperimentConfig) and "workers" not in overrides:
        defaults["workers"] = str(get_settings().workers)
    from_file: dict[str, str] = {}
    if args.config:
        from_file = read_config_file(args.config)
    merged = {**defaults, **from_file, **overrides}
    return load_experiment_config(model, overrides=merged)


def write_rows(rows: Sequence[dict[str, Any]], echo: str, output: str | None) -> None:
    """CSV with a `# key=value ...` echo line and a header row."""
    fields: list[str] = []
    for row in rows:
        for key in row:
            if key not in fields:
                fields.append(key)
    buf = io.StringIO()
    buf.write(f"# {echo}\n")
    writer = csv.DictWriter(buf, fieldnames=fields, restval="", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    if output:
        Path(output).write_text(buf.getvalue(), encoding="utf-8")
    else:
        sys.stdout.write(buf.getvalue())


def _experiment(model: type[ExperimentConfig], runner: Callable[[Any], list[dict[str, Any]]]) -> Callable[[argparse.Namespace], int]:
    def command(args: argparse.Namespace) -> int:
        cfg = _load(model, args)
        rows = runner(cfg)
        write_rows(rows, cfg.echo(), cfg.output)
        return EXIT_OK

    return command


cmd_bench_prox = _experiment(BenchConfig, run_bench_prox)
cmd_complete = _experiment(CompleteConfig, run_completion)
cmd_mtl = _experiment(MtlConfig, run_mtl)
cmd_roles = _experiment(RolesConfig, run_parameter_roles)


def cmd_gen(args: argparse.Namespace) -> int:
    if args.kind == "lowrank":
        cfg = _load(GenLowrankConfig, args)
        problem = gen_lowrank(cfg.d, cfg.r, noise=cfg.noise, seed=cfg.seed, noise_scale=cfg.noise_scale)
    else:
        cfg = _load(GenBlocksConfig, args)
        problem = gen_block_clustered(cfg.d, cfg.blocks, cfg.block_size, noise=cfg.noise, seed=cfg.seed)
    text = format_problem(problem)
    if cfg.output:
        Path(cfg.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _guarded(func: Callable[[argparse.Namespace], int], args: argparse.Namespace) -> int:
    try:
        return func(args)
    except ConsistencyError as exc:
        logger.error("consistency check failed: %s", exc)
        return EXIT_CONSISTENCY
    except (ParameterError, InputError) as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except NumericError as exc:
        logger.error("solve failed: %s", exc)
        return EXIT_SOLVE_FAILURE
    except BoxNormError as exc:
        logger.error("%s", exc)
        return EXIT_SOLVE_FAILURE


def _experiment_parser(sub: Any, name: str, help_text: str, func: Callable[[argparse.Namespace], int]) -> None:
    p = sub.add_parser(name, help=help_text)
    p.add_argument("pairs", nargs="*", help="key=value overrides")
    p.add_argument("--config", type=str, default=None, help="key=value config file (e.g. config/complete.v0.conf)")
    p.set_defaults(func=func)


def main(argv: list[str] | None = None) -> int:
    settings = get_settings()
    setup_logging(log_format=settings.log_format, log_level=settings.log_level)

    parser = argparse.ArgumentParser(prog="boxnorm")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_norm = sub.add_parser("norm", help="Evaluate a vector or spectral norm of a numeric file")
    kinds = p_norm.add_mutually_exclusive_group(required=True)
    for kind in ("box", "ksup", "trace", "frobenius"):
        kinds.add_argument(f"--{kind}", dest="kind", action="store_const", const=kind)
    p_norm.add_argument("items", nargs="+", help="input file and key=value parameters (a, b, c or k)")
    p_norm.set_defaults(func=cmd_norm)

    _experiment_parser(sub, "bench-prox", "Time the fast against the reference k-support prox", cmd_bench_prox)
    _experiment_parser(sub, "complete", "Matrix completion runs over penalties", cmd_complete)
    _experiment_parser(sub, "mtl", "Clustered multitask runs, centered and uncentered", cmd_mtl)
    _experiment_parser(sub, "roles", "Validated box parameters across noise levels and ranks", cmd_roles)

    p_gen = sub.add_parser("gen", help="Write a synthetic completion problem")
    p_gen.add_argument("kind", choices=("lowrank", "blocks"))
    p_gen.add_argument("pairs", nargs="*", help="key=value parameters")
    p_gen.add_argument("--config", type=str, default=None)
    p_gen.set_defaults(func=cmd_gen)

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    return _guarded(args.func, args)


if __name__ == "__main__":
    raise SystemExit(main())
