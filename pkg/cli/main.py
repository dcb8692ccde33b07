"""Command-line entry point: parse flags, merge them over an experiment file, run, write the report."""

import argparse
import logging
import pathlib
import sys
import time
from typing import Any, Dict, List, Optional

from core.config import settings
from core.models import ExperimentConfig
from core.persistence import emit_report
from core.resolvent_scan import bound_ids
from core.shear_profile import preset_names

from cli.services import experiments
from cli.utils import EXIT_INVALID_INPUT, report_checks, report_error

logger = logging.getLogger(__name__)

COMMANDS = {
    "profile-check": "check a preset against condition (M) and certify its heat flow",
    "scan": "sweep resolvent bounds over (nu, k, lambda) and fit power laws in nu",
    "lin-evolve": "integrate the linearized problem and tabulate the space-time ledger",
    "nonlinear": "integrate the nonlinear problem and tabulate the energy ledger",
    "threshold": "bisect the stability threshold amplitude over a nu sweep",
    "selftest": "run the internal consistency checks",
}

# flag dest -> config key
FLAG_KEYS = {
    "profile": "profile",
    "nu": "nu_list",
    "nu_list": "nu_list",
    "k": "k_list",
    "bounds": "bounds",
    "horizon": "horizon",
    "forcing": "forcing",
    "amp": "amplitude",
    "jobs": "jobs",
    "seed": "seed",
    "nodes": "nodes",
}


def _float_list(text: str) -> List[float]:
    return [float(item) for item in text.split(",") if item.strip()]


def _int_list(text: str) -> List[int]:
    return [int(item) for item in text.split(",") if item.strip()]


def _str_list(text: str) -> List[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def _schema_epilog() -> str:
    lines = ["experiment file keys (TOML or JSON; flags override file values):"]
    for name, field in ExperimentConfig.model_fields.items():
        default = field.get_default(call_default_factory=True)
        if hasattr(default, "model_dump"):
            default = default.model_dump()
        description = f"  {field.description}" if field.description else ""
        lines.append(f"  {name} = {default!r}{description}")
    lines.append(f"profiles: {', '.join(preset_names())}")
    lines.append(f"bounds: {', '.join(bound_ids())}")
    lines.append("exit codes: 0 all checks passed, 1 a check failed, 2 invalid input, 3 numerical failure")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shearstab",
        description="Spectral solver and verification harness for monotone shear flows between no-slip walls.",
        epilog=_schema_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, help_text in COMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text, description=help_text)
        sub.add_argument("--config", type=pathlib.Path, help="experiment file (.toml or .json)")
        sub.add_argument("--out", type=pathlib.Path, help="output directory (default results/<command>)")
        sub.add_argument("--profile", help="profile preset name")
        sub.add_argument("--nu", type=_float_list, help="viscosity or comma-separated viscosities")
        sub.add_argument("--nu-list", dest="nu_list", type=_float_list, help="comma-separated viscosities")
        sub.add_argument("--k", type=_int_list, help="comma-separated wavenumbers")
        sub.add_argument("--bounds", type=_str_list, help="comma-separated bound ids")
        sub.add_argument("--horizon", type=float, help="final time")
        sub.add_argument("--forcing", choices=["none", "decaying-sine"])
        sub.add_argument("--amp", type=float, help="perturbation amplitude ||u_in||_H2")
        sub.add_argument("--jobs", type=int, help="worker threads")
        sub.add_argument("--seed", type=int)
        sub.add_argument("--nodes", type=int, help="Chebyshev nodes")
    return parser


def merge_config(args: argparse.Namespace) -> ExperimentConfig:
    """File values first, explicit flags on top, then validation."""
    data: Dict[str, Any] = experiments.load_config_data(args.config) if args.config else {}
    if "nu" in data:
        data["nu_list"] = data.pop("nu")
        if not isinstance(data["nu_list"], list):
            data["nu_list"] = [data["nu_list"]]
    data["command"] = args.command
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            data[key] = value
    return experiments.validate_config(data)


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=settings.LOG_LEVEL, format="%(levelname)s:%(name)s:%(message)s")
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 0 for --help and 2 for usage errors
        return EXIT_INVALID_INPUT if e.code else 0

    started = time.monotonic()
    try:
        config = merge_config(args)
        out_dir = args.out or pathlib.Path("results") / config.command
        logger.info(f"Running {config.command} on profile {config.profile.name}")
        bundle = experiments.run_command(config, out_dir)
        manifest = experiments.build_manifest(
            ["shearstab", *argv], config, experiments.grid_sizes(config), started
        )
        outputs = emit_report(bundle, out_dir, manifest)
    except Exception as e:
        return report_error(e)

    logger.info(f"Wrote {len(outputs)} files to {out_dir}")
    return report_checks(bundle.checks)


if __name__ == "__main__":
    sys.exit(main())
