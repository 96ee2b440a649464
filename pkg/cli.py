from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable
import argparse
import asyncio
import logging
import shutil
import sys
import tempfile

from dotenv import dotenv_values
from pydantic import ValidationError

from errors import ConfigurationError, PmsamError, from_validation_error
from harness import (
    Algorithm,
    ExperimentSpec,
    SummaryRow,
    compare_time,
    emit_convergence_csv,
    emit_report_json,
    emit_summary_csv,
    emit_timing_csv,
    run_experiment,
    preset_config,
)
from membrane_engine import PmsamConfig, check_config, execute
from monkey_core import MaParams, RunReport
from objective import BUILTIN_IDS, get_objective

logger = logging.getLogger("pmsam.cli")

SUBCOMMANDS = ("bench", "run", "compare", "trace")

# Flat config keys and their parsers.
CONFIG_KEYS: dict[str, type] = {
    "n": int,
    "m": int,
    "step_length": float,
    "eyesight": float,
    "somersault_lo": float,
    "somersault_hi": float,
    "d": int,
    "climb_number": int,
    "n_max": int,
    "t_max": int,
    "target_value": float,
    "seed": int,
    "climb_epsilon": float,
    "max_resample": int,
    "target_tolerance": float,
    "success_target": float,
    "somersault_shrink": float,
}

# Model field name -> config key, for error messages.
_FIELD_TO_KEY = {"cyclic_number": "n_max", "membranes": "m"}

DEFAULT_COMPARE_N = [20, 40, 80, 160]
TRACE_SCENARIO = {"n": 20, "m": 4, "n_max": 1}


@dataclass
class CliConfig:
    subcommand: str
    config_path: Path | None = None
    overrides: list[str] = field(default_factory=list)
    output_dir: Path = Path("results")
    seed: int | None = None
    function_ids: list[str] = field(default_factory=list)
    algorithm: Algorithm | None = None
    runs: int | None = None
    workers: int = 1
    n_values: list[int] = field(default_factory=list)


def _convert(key: str, text: str | None) -> int | float | None:
    if text is None:
        raise ConfigurationError(f"{key} has no value", key=key)
    text = text.strip()
    if key == "target_value" and text.lower() in ("", "none"):
        return None
    try:
        if CONFIG_KEYS[key] is int:
            try:
                return int(text)
            except ValueError:
                as_float = float(text)
                if not as_float.is_integer():
                    raise
                return int(as_float)
        return float(text)
    except ValueError:
        raise ConfigurationError(f"{key} must be numeric, got {text!r}", key=key) from None


def collect_values(config_path: str | Path | None, overrides: list[str]) -> dict[str, str | None]:
    """Raw key=value pairs: the file first, then each override in order."""
    values: dict[str, str | None] = {}
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}", key="config")
        values.update(dotenv_values(path))
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"override must look like KEY=VALUE, got {item!r}", key=item)
        values[key.strip()] = value
    unknown = sorted(key for key in values if key not in CONFIG_KEYS)
    if unknown:
        raise ConfigurationError(f"unknown config key: {unknown[0]}", key=unknown[0])
    return values


def parse_config(
    config_path: str | Path | None = None,
    overrides: list[str] | None = None,
    seed: int | None = None,
) -> PmsamConfig:
    """Build a validated PmsamConfig from a flat key=value file, overrides and a seed."""
    raw = collect_values(config_path, overrides or [])
    values = {key: _convert(key, text) for key, text in raw.items()}
    if seed is not None:
        values["seed"] = seed

    ma_fields = {
        "n": "n",
        "d": "d",
        "step_length": "step_length",
        "eyesight": "eyesight",
        "somersault_lo": "somersault_lo",
        "somersault_hi": "somersault_hi",
        "climb_number": "climb_number",
        "n_max": "cyclic_number",
        "climb_epsilon": "climb_epsilon",
        "max_resample": "max_resample",
        "success_target": "success_target",
        "somersault_shrink": "somersault_shrink",
    }
    config_fields = {
        "m": "membranes",
        "t_max": "t_max",
        "target_value": "target_value",
        "target_tolerance": "target_tolerance",
        "seed": "seed",
    }
    try:
        ma = MaParams(**{ma_fields[k]: v for k, v in values.items() if k in ma_fields})
        config = PmsamConfig(
            ma=ma, **{config_fields[k]: v for k, v in values.items() if k in config_fields}
        )
    except ValidationError as exc:
        error = from_validation_error(exc)
        key = _FIELD_TO_KEY.get(error.key, error.key)
        raise ConfigurationError(
            f"Invalid value for {key}: {exc.errors()[0]['msg']}", key=key
        ) from None
    return check_config(config)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key=value parameter file")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE"
    )
    common.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--function", dest="function_ids", action="append", default=[])
    common.add_argument("--algorithm", type=Algorithm, choices=list(Algorithm))
    common.add_argument("--runs", type=int)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--n-values", type=int, nargs="+", default=[])
    common.add_argument("--log-level", default="WARNING")

    parser = argparse.ArgumentParser(
        prog="pmsam", description="Monkey Algorithm and PMSAM experiment runner"
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    sub.add_parser("bench", parents=[common], help="reproduce the 12-function benchmark table")
    sub.add_parser("run", parents=[common], help="run one function with one or both algorithms")
    sub.add_parser("compare", parents=[common], help="logical-time comparison of MA and PMSAM")
    sub.add_parser("trace", parents=[common], help="print the phase/tick log of n=20, m=4")
    return parser


def to_cli_config(args: argparse.Namespace) -> CliConfig:
    return CliConfig(
        subcommand=args.subcommand,
        config_path=args.config,
        overrides=list(args.overrides),
        output_dir=args.out,
        seed=args.seed,
        function_ids=list(args.function_ids),
        algorithm=args.algorithm,
        runs=args.runs,
        workers=args.workers,
        n_values=list(args.n_values),
    )


def _check_functions(function_ids: list[str], d: int) -> None:
    for fid in function_ids:
        get_objective(fid, d)


def _positive(value: int | None, key: str) -> None:
    if value is not None and value < 1:
        raise ConfigurationError(f"{key} must be at least 1, got {value}", key=key)


def _publish(output_dir: Path, artifacts: dict[str, Callable[[Path], Path]]) -> list[Path]:
    """Write every artifact to a scratch directory, then move all of them into `output_dir`."""
    for name in artifacts:
        target = output_dir / name
        if target.is_dir():
            raise IsADirectoryError(f"output path is a directory: {target}")
    with tempfile.TemporaryDirectory(prefix="pmsam-") as scratch:
        staged = [emit(Path(scratch) / name) for name, emit in artifacts.items()]
        output_dir.mkdir(parents=True, exist_ok=True)
        published = [Path(shutil.move(str(path), str(output_dir / path.name))) for path in staged]
    logger.info(f"[Publish] wrote {', '.join(p.name for p in published)} to {output_dir}")
    return published


async def _bench(cli: CliConfig, base: PmsamConfig, explicit: set[str]) -> None:
    function_ids = cli.function_ids or list(BUILTIN_IDS)
    _check_functions(function_ids, base.ma.d)
    specs: list[ExperimentSpec] = []
    for fid in function_ids:
        config = check_config(preset_config(fid, base, explicit))
        specs.append(
            ExperimentSpec(
                function_ids=[fid],
                algorithm=cli.algorithm or Algorithm.BOTH,
                config=config,
                runs=cli.runs or 20,
                base_seed=config.seed,
            )
        )
    rows: list[SummaryRow] = []
    reports: list[RunReport] = []
    for spec in specs:
        spec_rows, spec_reports = await run_experiment(spec, cli.workers)
        rows.extend(spec_rows)
        reports.extend(spec_reports)
    _publish(
        cli.output_dir,
        {
            "summary.csv": lambda path: emit_summary_csv(rows, path),
            "convergence.csv": lambda path: emit_convergence_csv(reports, path),
            "report.json": lambda path: emit_report_json(rows, reports, path, specs),
        },
    )


async def _run(cli: CliConfig, base: PmsamConfig) -> None:
    function_ids = cli.function_ids or ["f1"]
    _check_functions(function_ids, base.ma.d)
    spec = ExperimentSpec(
        function_ids=function_ids,
        algorithm=cli.algorithm or Algorithm.PMSAM,
        config=base,
        runs=cli.runs or 1,
        base_seed=base.seed,
    )
    rows, reports = await run_experiment(spec, cli.workers)
    _publish(
        cli.output_dir,
        {
            "convergence.csv": lambda path: emit_convergence_csv(reports, path),
            "report.json": lambda path: emit_report_json(rows, reports, path, [spec]),
        },
    )


async def _compare(cli: CliConfig, base: PmsamConfig) -> None:
    n_values = cli.n_values or DEFAULT_COMPARE_N
    too_small = [n for n in n_values if n < base.membranes]
    if too_small:
        raise ConfigurationError(
            f"population n={too_small[0]} is smaller than m={base.membranes}", key="m"
        )
    rows = await compare_time(n_values, base.membranes, base.ma)
    _publish(cli.output_dir, {"timing.csv": lambda path: emit_timing_csv(rows, path)})


async def _trace(cli: CliConfig, base: PmsamConfig) -> None:
    fid = (cli.function_ids or ["f1"])[0]
    config = base.model_copy(
        update={
            "membranes": TRACE_SCENARIO["m"],
            "ma": base.ma.model_copy(
                update={"n": TRACE_SCENARIO["n"], "cyclic_number": TRACE_SCENARIO["n_max"]}
            ),
        }
    )
    region = await execute(get_objective(fid, config.ma.d), config, cli.workers)
    print("iteration\tphase\tt\tmembranes")
    for entry in region.log:
        print(f"{entry.iteration}\t{entry.phase}\t{entry.t}\t{entry.membranes}")


async def dispatch(cli: CliConfig) -> int:
    """Run one subcommand. Returns the exit status; errors print one line to stderr."""
    try:
        if cli.subcommand not in SUBCOMMANDS:
            raise ConfigurationError(f"unknown subcommand: {cli.subcommand}", key="subcommand")
        _positive(cli.runs, "runs")
        _positive(cli.workers, "workers")
        explicit = set(collect_values(cli.config_path, cli.overrides))
        base = parse_config(cli.config_path, cli.overrides, cli.seed)
        logger.info(f"[{cli.subcommand}] config: {base.model_dump()}")
        if cli.subcommand == "bench":
            await _bench(cli, base, explicit)
        elif cli.subcommand == "run":
            await _run(cli, base)
        elif cli.subcommand == "compare":
            await _compare(cli, base)
        else:
            await _trace(cli, base)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PmsamError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level.upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    return asyncio.run(dispatch(to_cli_config(args)))


if __name__ == "__main__":
    sys.exit(main())
