"""
cli.py — Command-line entry point.

    memheat run <config>          run the task the config declares
    memheat simulate <config>     free evolution of any config
    memheat control <config>      penalized solve (config task must be 'control')
    memheat sweep <config>        ε-sweep (config task must be 'sweep')
    memheat truncation <config>   Taylor truncation study
    memheat check <config>        validation + geometry flags, no time stepping
    memheat report <dir>          tabulate every summary.json under a directory
    memheat batch <configs...>    independent runs on a thread pool

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""
import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from memheat import __version__
from memheat.core.config import settings
from memheat.core.engine import ExperimentEngine, load_config
from memheat.core.errors import LabError
from memheat.core.observability import start_metrics_server
from memheat.core.persistence import ResultStore
from memheat.utils.logger import logger

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3

RUN_COMMANDS = ("run", "simulate", "control", "sweep", "truncation")


def _print_validation_error(source: str, exc: ValidationError) -> None:
    print(f"error: invalid config {source}", file=sys.stderr)
    for err in exc.errors():
        loc = ".".join(str(part) for part in err["loc"]) or "<root>"
        print(f"  {loc}: {err['msg']}", file=sys.stderr)


def _guarded(source: str, action) -> int:
    """Runs action() and maps failures onto exit codes."""
    try:
        action()
    except ValidationError as e:
        _print_validation_error(source, e)
        return EXIT_INVALID
    except LabError as e:
        print(f"error: {source}: {e}", file=sys.stderr)
        return e.exit_code
    return EXIT_OK


def _cmd_run(args: argparse.Namespace) -> int:
    task_kind = None if args.command == "run" else args.command

    def action():
        config = load_config(args.config)
        if args.output:
            config = config.model_copy(
                update={"output": config.output.model_copy(update={"directory": str(Path(args.output).resolve())})}
            )
        result = ExperimentEngine().run(config, task_kind)
        print(result.output_dir)

    return _guarded(args.config, action)


def _cmd_check(args: argparse.Namespace) -> int:
    def action():
        report = ExperimentEngine().check(load_config(args.config))
        print(json.dumps(report, indent=2, sort_keys=True))

    return _guarded(args.config, action)


def _fmt(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.4e}"
    return str(value)


def report_rows(directory: Path) -> List[Dict[str, Any]]:
    rows = []
    for path in ResultStore.list_summaries(directory):
        summary = ResultStore.load_summary(path)
        if summary is None:
            continue
        geometry, results = summary["geometry"], summary["results"]
        rows.append({
            "run": summary.get("name", path.parent.name),
            "task": summary.get("task"),
            "kernel": summary.get("kernel"),
            "support": geometry.get("support_type"),
            "coverage": geometry.get("coverage"),
            "split": geometry.get("split"),
            "energy": results.get("energy"),
            "residual_y": results.get("residual_y"),
            "residual_z1": results.get("residual_z1"),
            "slope": results.get("slope"),
        })
    return rows


def _cmd_report(args: argparse.Namespace) -> int:
    directory = Path(args.directory)
    rows = report_rows(directory)
    if not rows:
        print(f"error: no valid summary.json under {directory}", file=sys.stderr)
        return EXIT_INVALID

    table = Table(title=f"memheat runs in {directory}")
    for column in rows[0]:
        table.add_column(column, justify="right" if column in ("energy", "residual_y", "residual_z1", "slope") else "left")
    for row in rows:
        table.add_row(*(_fmt(v) for v in row.values()))
    Console(width=200).print(table)
    return EXIT_OK


def _claimed_directories(engine: ExperimentEngine, paths: List[str]) -> Dict[str, Path]:
    """Output directory of every config that loads; unloadable ones report their own error when run."""
    directories: Dict[str, Path] = {}
    for path in paths:
        try:
            directories[path] = engine.output_dir(load_config(path)).resolve()
        except (ValidationError, LabError):
            continue
    return directories


def _cmd_batch(args: argparse.Namespace) -> int:
    engine = ExperimentEngine()
    workers = args.workers or settings.BATCH_WORKERS

    directories = _claimed_directories(engine, args.configs)
    owners: Dict[Path, List[str]] = {}
    for path, directory in directories.items():
        owners.setdefault(directory, []).append(path)
    # configs sharing an output directory would overwrite each other's artifacts
    rejected = {path for paths in owners.values() if len(paths) > 1 for path in paths}
    for path in args.configs:
        if path in rejected:
            print(f"error: {path}: same output directory {directories[path]} as another config", file=sys.stderr)

    def run_one(path: str) -> int:
        if path in rejected:
            return EXIT_INVALID
        return _guarded(path, lambda: engine.run(load_config(path)))

    with ThreadPoolExecutor(max_workers=workers) as pool:
        codes = list(pool.map(run_one, args.configs))
    for path, code in zip(args.configs, codes):
        logger.info(f"[batch] {path}: exit {code}")
    return max(codes, default=EXIT_OK)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memheat",
        description="Numerical lab for null controllability of heat equations with memory.",
    )
    parser.add_argument("--version", action="version", version=f"memheat {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in RUN_COMMANDS:
        p = sub.add_parser(name, help=f"{name} an experiment config")
        p.add_argument("config", type=Path)
        p.add_argument("--output", type=Path, help="output directory (overrides the config)")
        p.set_defaults(handler=_cmd_run)

    p = sub.add_parser("check", help="validate a config and print its geometry flags")
    p.add_argument("config", type=Path)
    p.set_defaults(handler=_cmd_check)

    p = sub.add_parser("report", help="tabulate run summaries under a directory")
    p.add_argument("directory", type=Path)
    p.set_defaults(handler=_cmd_report)

    p = sub.add_parser("batch", help="run several configs concurrently")
    p.add_argument("configs", nargs="+")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(handler=_cmd_batch)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if settings.PROMETHEUS_PORT:
        start_metrics_server(settings.PROMETHEUS_PORT)
    return args.handler(args)


if __name__ == "__main__":
    raise SystemExit(main())
