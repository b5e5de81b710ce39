"""Command-line front end of the simulator."""
# pylint: disable=W0613
import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

from loguru import logger

from ..custom_exceptions import (
    GeometryError,
    ScenarioConfigError,
    SimulationFault,
    UnknownScenario,
)
from ..paging.profiles import Isa, get_profile
from ..paging.target import global_bit_offset, va_indices
from ..scenario.builtins import builtin_document, builtin_scenarios
from ..scenario.config import (
    ScenarioConfig,
    apply_overrides,
    dump_scenario,
    load_scenario,
    parse_scenario,
)
from ..scenario.engine import run
from .report import (
    build_report,
    render_summary,
    write_report,
    write_trace,
)
from .utility import DEFAULT_CONFIG_PATH, get_config, setup_logging

APP_VERSION = "1.0.0"
EXIT_OK = 0
EXIT_RUNTIME_ERROR = 1
EXIT_CONFIG_ERROR = 2


def _int(text: str) -> int:
    """argparse type accepting 0x-prefixed numbers."""
    try:
        return int(text, 0)
    except ValueError as error:
        raise argparse.ArgumentTypeError(f"not a number: {text}") from error


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with the run, list-scenarios, geometry and sweep
    subcommands."""
    parser = argparse.ArgumentParser(
        prog="gbhammer",
        description="Deterministic simulator of global-bit TLB sharing "
        "induced by RowHammer flips in page tables.",
    )
    parser.add_argument(
        "--config",
        default=str(DEFAULT_CONFIG_PATH),
        help="tool settings file (INI)",
    )
    parser.add_argument("--log-level", help="override [LOGGING] LEVEL")
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {APP_VERSION}"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    scenario_options = argparse.ArgumentParser(add_help=False)
    scenario_options.add_argument(
        "scenario", help="scenario YAML file or builtin name"
    )
    scenario_options.add_argument("--seed", type=_int, help="scenario seed")
    scenario_options.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a dotted scenario key; repeatable",
    )
    scenario_options.add_argument("--report", help="write the report here")

    run_cmd = commands.add_parser(
        "run", parents=[scenario_options], help="run one scenario"
    )
    run_cmd.add_argument("--trace", help="write trace lines here")
    run_cmd.add_argument(
        "--save-config",
        help="write the effective scenario as YAML here",
    )
    run_cmd.set_defaults(handler=_cmd_run)

    list_cmd = commands.add_parser(
        "list-scenarios", help="list builtin scenarios"
    )
    list_cmd.set_defaults(handler=_cmd_list)

    geometry = commands.add_parser(
        "geometry", help="global-bit offset of a va's entry"
    )
    geometry.add_argument(
        "--isa", required=True, choices=[isa.value for isa in Isa]
    )
    geometry.add_argument("--va", required=True, type=_int)
    geometry.add_argument(
        "--level", type=int, help="level index, 0 is the root (default leaf)"
    )
    geometry.set_defaults(handler=_cmd_geometry)

    sweep = commands.add_parser(
        "sweep",
        parents=[scenario_options],
        help="run a scenario for several values of one key",
    )
    sweep.add_argument("--param", required=True, help="dotted scenario key")
    sweep.add_argument(
        "--values",
        required=True,
        nargs="+",
        help="values to try, space or comma separated",
    )
    sweep.set_defaults(handler=_cmd_sweep)
    return parser


def is_scenario_file(target: str) -> bool:
    """True if target names a YAML file rather than a builtin."""
    path = Path(target)
    return path.suffix in (".yaml", ".yml") or path.is_file()


def resolve_scenario(
    target: str, overrides: Sequence[str] = (), seed: Optional[int] = None
) -> ScenarioConfig:
    """
    Load, override and validate a scenario.

    Args:
        target (str): YAML path or builtin name.
        overrides (Sequence[str]): key=value strings, applied in order.
        seed (int | None): Shorthand for a seed override, applied first.

    Raises:
        ScenarioConfigError: for an invalid document or override.
        UnknownScenario: for an unknown builtin name.
    """
    overrides = list(overrides)
    if seed is not None:
        overrides.insert(0, f"seed={seed}")
    if is_scenario_file(target):
        return load_scenario(target, overrides)
    return parse_scenario(apply_overrides(builtin_document(target), overrides))


def _cmd_run(args: argparse.Namespace, settings) -> int:
    config = resolve_scenario(args.scenario, args.overrides, args.seed)
    report = build_report(run(config))
    print(render_summary(report))
    if args.trace:
        write_trace(args.trace, report["trace"])
    if args.save_config:
        path = Path(args.save_config)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dump_scenario(config), encoding="utf-8")
    if args.report:
        write_report(args.report, report)
    return EXIT_OK


def _cmd_list(args: argparse.Namespace, settings) -> int:
    for name, document in builtin_scenarios().items():
        print(f"{name:<22} {document['isa']:<7} {document['description']}")
    return EXIT_OK


def _cmd_geometry(args: argparse.Namespace, settings) -> int:
    profile = get_profile(args.isa)
    level = profile.leaf_level if args.level is None else args.level
    try:
        offset = global_bit_offset(profile, level, args.va)
    except GeometryError as error:
        print(f"error: {error}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    spec = profile.levels[level]
    indices = " ".join(
        f"L{number}={index}"
        for number, index in enumerate(va_indices(profile, args.va))
    )
    print(f"isa={profile.isa.value} va={args.va:#x} level={level}")
    print(f"indices: {indices}")
    print(
        f"global_bit_offset={offset} (= {spec.entry_width_bits} * "
        f"{spec.index(args.va)} + {spec.global_bit})"
    )
    return EXIT_OK


def sweep_one(job) -> dict:
    """Run one sweep point; a top-level function so workers can pickle it."""
    target, overrides, seed, param, value = job
    config = resolve_scenario(target, [*overrides, f"{param}={value}"], seed)
    result = run(config)
    return {
        "value": value,
        "exploit_success": result.verdict.exploit_success,
        "gbhammer": list(result.verdict.gbhammer_outcomes),
        "misdirection_count": result.verdict.misdirection_count,
    }


def _split_values(values: Sequence[str]) -> List[str]:
    return [part for value in values for part in value.split(",") if part]


def _cmd_sweep(args: argparse.Namespace, settings) -> int:
    values = _split_values(args.values)
    # Fail on a bad document before starting any worker.
    resolve_scenario(args.scenario, args.overrides, args.seed)
    jobs = [
        (args.scenario, args.overrides, args.seed, args.param, value)
        for value in values
    ]
    workers = settings.getint("SWEEP", "WORKERS", fallback=1)
    if workers > 1 and len(jobs) > 1:
        logger.info(f"Sweeping {len(jobs)} values on {workers} workers")
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(sweep_one, jobs))
    else:
        rows = [sweep_one(job) for job in jobs]
    print(f"{args.param:<32} exploit_success  misdirections  gbhammer")
    for row in rows:
        print(
            f"{row['value']:<32} {str(row['exploit_success']).lower():<16} "
            f"{row['misdirection_count']:<14} {','.join(row['gbhammer'])}"
        )
    if args.report:
        Path(args.report).write_text(
            json.dumps(
                {"param": args.param, "rows": rows}, sort_keys=True, indent=2
            )
            + "\n",
            encoding="utf-8",
        )
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Entry point.

    Args:
        argv (Sequence[str] | None): Arguments without the program name;
            sys.argv[1:] if None.

    Returns:
        int: 0 on a clean run whatever the verdict, 2 on a configuration
            error, 1 on a runtime error.
    """
    args = build_parser().parse_args(argv)
    settings = get_config(args.config)
    setup_logging(
        args.log_level or settings["LOGGING"]["LEVEL"],
        settings["LOGGING"]["LOG_FILE"],
    )
    try:
        return args.handler(args, settings)
    except (ScenarioConfigError, UnknownScenario) as error:
        logger.error(f"Configuration error: {error}")
        print(f"error: {error}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except (SimulationFault, OSError) as error:
        logger.exception(f"Run failed: {error}")
        print(f"error: {error}", file=sys.stderr)
        return EXIT_RUNTIME_ERROR
