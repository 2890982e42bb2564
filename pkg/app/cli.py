"""Command line front end: ``rbd-lab <command> --config run.toml``."""

import argparse
import dataclasses
import json
import os
import sys
import tomllib
from pathlib import Path
from typing import List, Optional

import pandas as pd
from pydantic import ValidationError

from app.config import LOG_FILE, LOG_MODULES, OUTPUT_DIR, WORKERS
from app.exceptions import ConfigError, InfeasibleBudgetError, RbdLabError
from app.models.dynamics import CompensationParams
from app.models.fixed_point import FxpFormat
from app.models.hardware import DspCostTable
from app.models.robot import RobotModel
from app.robots import load_robot
from app.schemas.run_config import RunConfig
from app.services.hw_model import (
    budget_sweep,
    compare_minv_variants,
    divider_utilization,
    horizon_sweep,
    minimum_budget,
    plan_pipeline,
    profile_functions,
    reuse_savings,
)
from app.services.icms import (
    QuantSetup,
    analyze_errors,
    export_error_stats,
    export_trajectory_csv,
    rollout_pair,
)
from app.services.quant_search import search, summary_table
from app.services.rbd_kernels import MINV_VARIANTS
from app.services.verification import failed_checks, verify_model
from app.utils.logging import (
    configure_logging,
    get_logger,
    level_from_name,
    parse_module_levels,
)

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_DOMAIN = 2

PRUNING_COLUMNS = ["format", "status", "metric", "value", "tolerance", "rollout", "fraction", "error"]


# Config loading


def load_config(path: Path) -> RunConfig:
    """Parse and validate a TOML run configuration."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or None
        raise ConfigError(first["msg"], field) from exc
    cfg.base_dir = path.resolve().parent
    _check_files(cfg)
    return cfg


def _resolve(cfg: RunConfig, value: str) -> Path:
    path = Path(value)
    if not path.is_absolute() and cfg.base_dir is not None:
        path = cfg.base_dir / path
    return path


def _check_files(cfg: RunConfig):
    for field, value in (("compensation", cfg.compensation), ("sim.dataset", cfg.sim.dataset)):
        if value is not None and not _resolve(cfg, value).is_file():
            raise ConfigError(f"file not found: {value}", field)


def load_model(cfg: RunConfig) -> RobotModel:
    model = load_robot(cfg.robot, cfg.base_dir)
    if cfg.end_effector is not None:
        model = dataclasses.replace(model, end_effector=cfg.end_effector)
        try:
            model.end_effector_frame
        except KeyError:
            raise ConfigError(f"no frame named {cfg.end_effector!r}", "end_effector") from None
    return model


def load_compensation(cfg: RunConfig, model: RobotModel) -> Optional[CompensationParams]:
    if cfg.compensation is None:
        return None
    try:
        data = json.loads(_resolve(cfg, cfg.compensation).read_text(encoding="utf-8"))
        params = CompensationParams.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"unreadable compensation file: {exc}", "compensation") from exc
    if params.n != model.n:
        raise ConfigError(f"offset is {params.n}x{params.n}, robot has {model.n} joints", "compensation")
    return params


def _sim(cfg: RunConfig):
    """SimConfig with the dataset path resolved against the config directory."""
    if cfg.sim.dataset is None:
        return cfg.sim
    return cfg.sim.model_copy(update={"dataset": str(_resolve(cfg, cfg.sim.dataset))})


def output_dir(cfg: RunConfig, override: Optional[str]) -> Path:
    path = Path(override or cfg.output_dir or OUTPUT_DIR)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_json(path: Path, payload) -> Path:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


def write_csv(path: Path, frame: pd.DataFrame) -> Path:
    frame.to_csv(path, index=False, float_format="%.12g", lineterminator="\n")
    logger.info(f"Wrote {path}")
    return path


# Commands


def cmd_quantize_search(cfg: RunConfig, out: Path, workers: int) -> int:
    if cfg.search is None:
        raise ConfigError("quantize-search needs a [search] section", "search")
    model = load_model(cfg)
    report = search(
        model,
        cfg.controller,
        cfg.search,
        _sim(cfg),
        cfg.seed,
        cfg.rounding,
        cfg.accumulate,
        cfg.minv_variant,
        workers,
    )
    logger.info(f"Search finished in {report.wall_time_s:.3f} s")
    write_json(out / "report.json", report.model_dump(mode="json"))
    write_csv(out / "pruning_log.csv", pd.DataFrame(report.pruning_log(), columns=PRUNING_COLUMNS))
    if report.compensation is not None:
        write_json(out / "compensation.json", report.compensation)
    print(summary_table(report))
    return EXIT_OK if report.passed else EXIT_DOMAIN


def cmd_verify(cfg: RunConfig, out: Path, samples: int) -> int:
    model = load_model(cfg)
    report = verify_model(model, samples, cfg.seed)
    write_json(out / "verify.json", report.model_dump(mode="json"))
    for check in report.checks:
        print(
            f"{check.name:<40} {'pass' if check.passed else 'FAIL':>4} "
            f"{check.residual:>12.3e} <= {check.threshold:.0e}"
        )
    failed = failed_checks(report)
    if failed:
        logger.error(f"Failed checks: {', '.join(failed)}")
        return EXIT_DOMAIN
    return EXIT_OK


def _plan_format(cfg: RunConfig, override: Optional[str]) -> FxpFormat:
    if override:
        return FxpFormat.parse(override)
    if cfg.format is None:
        raise ConfigError("plan needs fixed_format in the config or --format", "fixed_format")
    return cfg.format


def cmd_plan(cfg: RunConfig, out: Path, fmt_override: Optional[str] = None) -> int:
    model = load_model(cfg)
    fmt = _plan_format(cfg, fmt_override)
    hw = cfg.hw
    table = DspCostTable.from_config(hw.cost_table)
    plans = {}
    payload = {
        "robot": model.name,
        "format": str(fmt),
        "family": hw.family,
        "budget": hw.budget,
        "minimum_budget": {},
    }
    division_units = 0
    for variant in MINV_VARIANTS:
        profiles = profile_functions(model, variant)
        payload["minimum_budget"][variant] = minimum_budget(profiles)
        for reuse in (False, True):
            plans[f"{'on' if reuse else 'off'}-{variant}"] = plan_pipeline(
                profiles, fmt, hw.family, hw.budget, reuse, hw, table, model.parents
            )
        if variant == hw.minv_variant:
            division_units = len(
                {u.key for units in profiles.values() for u in units if u.divisions}
            )
            if hw.budgets:
                write_csv(
                    out / "budget_sweep.csv",
                    budget_sweep(profiles, fmt, hw.family, hw.budgets, hw, table, model.parents),
                )

    off, on = plans[f"off-{hw.minv_variant}"], plans[f"on-{hw.minv_variant}"]
    utilization = None
    if on.dividers:
        utilization = divider_utilization(division_units, on.dividers, on.module_ii.get("Minv", 1))
    payload.update(
        {
            "minv_variant": hw.minv_variant,
            "off": off.to_dict(),
            "on": on.to_dict(),
            "reuse_savings": reuse_savings(off, on),
            "divider_utilization": utilization,
            "minv_comparison": compare_minv_variants(model, fmt, hw.family, hw.budget, hw, table),
        }
    )
    write_json(out / "plan.json", payload)
    sweep = horizon_sweep(plans, hw.horizons, hw.iterations)
    write_csv(out / "sweep.csv", sweep)

    print(f"{'plan':<14} {'DSPs':>6} {'II(dFD)':>8} {'latency(dFD) us':>16}")
    for label in sorted(plans):
        plan = plans[label]
        print(
            f"{label:<14} {plan.total_dsps:>6} {plan.function_ii['dFD']:>8} "
            f"{plan.latency('dFD') * 1e6:>16.3f}"
        )
    print(f"reuse saves {payload['reuse_savings']:.1%} of the DSPs ({hw.minv_variant} M⁻¹)")
    return EXIT_OK


def cmd_rollout(cfg: RunConfig, out: Path, samples: int) -> int:
    if cfg.format is None:
        raise ConfigError("rollout needs fixed_format", "fixed_format")
    model = load_model(cfg)
    sim = _sim(cfg)
    setup = QuantSetup(
        cfg.format,
        cfg.rounding,
        cfg.accumulate,
        cfg.minv_variant,
        load_compensation(cfg, model),
    )
    pair = rollout_pair(model, cfg.controller, setup, sim, cfg.seed)
    stats = analyze_errors([pair], model, setup, samples, cfg.seed)
    export_trajectory_csv(pair, out / "trajectory.csv")
    metrics = pair.metrics()
    export_error_stats(
        stats,
        out / "errors.json",
        {
            "robot": model.name,
            "controller": cfg.controller.kind,
            "format": str(cfg.format),
            "seed": cfg.seed,
            "metrics": metrics,
        },
    )
    for name, value in sorted(metrics.items()):
        print(f"max {name} error: {value:.4e}")
    return EXIT_OK


# Entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="Run configuration (TOML)")
    common.add_argument("--seed", type=int, help="Override the config seed")
    common.add_argument("--out", help="Output directory for artifacts")
    common.add_argument(
        "--log-level",
        choices=["trace", "debug", "info", "warning", "error", "critical"],
        help="Log level",
    )
    common.add_argument("--log-file", help="Also write logs to this file")
    common.add_argument(
        "--log-module",
        action="append",
        default=[],
        metavar="NAME=LEVEL",
        help="Level for one logger, e.g. rbd_kernels=TRACE (repeatable)",
    )
    common.add_argument("--workers", type=int, default=WORKERS, help="Worker threads")

    parser = argparse.ArgumentParser(
        prog="rbd-lab", description="Quantized rigid-body-dynamics lab"
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser(
        "quantize-search", parents=[common], help="Search the cheapest passing fixed-point format"
    )
    verify = commands.add_parser("verify", parents=[common], help="Check kernel properties")
    verify.add_argument("--samples", type=int, default=100, help="Random states per check")
    plan = commands.add_parser("plan", parents=[common], help="Model DSP allocation and control rate")
    plan.add_argument("--format", help="Format 'Qi.f' overriding fixed_format")
    rollout = commands.add_parser(
        "rollout", parents=[common], help="Export one real/quantized trajectory pair"
    )
    rollout.add_argument("--samples", type=int, default=200, help="States for kernel error statistics")
    return parser


def run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("must be non-negative", "seed")
        cfg.seed = args.seed
    out = output_dir(cfg, args.out)
    logger.info(f"Running {args.command} on {cfg.robot} (seed {cfg.seed}) into {out}")
    if args.command == "quantize-search":
        return cmd_quantize_search(cfg, out, args.workers)
    if args.command == "verify":
        return cmd_verify(cfg, out, args.samples)
    if args.command == "plan":
        return cmd_plan(cfg, out, args.format)
    return cmd_rollout(cfg, out, args.samples)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    # Set environment variable for custom log level
    if args.log_level:
        os.environ["LOG_LEVEL"] = args.log_level.upper()
    try:
        module_levels = parse_module_levels([LOG_MODULES, *args.log_module])
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    configure_logging(level_from_name(args.log_level), args.log_file or LOG_FILE, module_levels)

    try:
        return run(args)
    except InfeasibleBudgetError as exc:
        logger.error(str(exc))
        print(f"minimum feasible budget: {exc.minimum}", file=sys.stderr)
        return EXIT_DOMAIN
    except ValueError as exc:
        logger.error(f"Input error: {exc}", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RbdLabError as exc:
        logger.error(f"{type(exc).__name__}: {exc}", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
