"""
Command-line entry point
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from aslpinn import __version__
from aslpinn.cli.commands import (
    cmd_evaluate,
    cmd_export_maps,
    cmd_fit,
    cmd_generate,
    parse_voxel,
)
from aslpinn.config import RunConfig, settings
from aslpinn.exceptions import (
    AslPinnError,
    ConfigurationError,
    DatasetError,
    UsageError,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VOXEL_FAILURES = 3


def configure_logging(level: Optional[str] = None):
    """Console plus file logging, configured once per process"""
    level_name = (level or ("DEBUG" if settings.debug else settings.log_level)).upper()
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stdout)]
    if settings.log_to_file:
        settings.log_path.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(settings.log_path / 'aslpinn.log'))
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


class ArgumentParser(argparse.ArgumentParser):
    """argparse that raises UsageError instead of exiting with status 2"""

    def error(self, message):
        raise UsageError(message)


def _float_list(value: str) -> List[float]:
    try:
        return [float(part) for part in value.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{value}'") from e


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="aslpinn", description="Perfusion parameter estimation with "
                            "PINN, SUPINN and robust least squares")
    parser.add_argument("--version", action="version", version=f"aslpinn {__version__}")
    parser.add_argument("--log-level", help="overrides ASLPINN_LOG_LEVEL")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    def common(sub):
        sub.add_argument("--config", type=Path, help="JSON config file; flags override it")
        sub.add_argument("--seed", type=int)

    generate = subparsers.add_parser("generate", help="write a synthetic phantom dataset")
    common(generate)
    generate.add_argument("--output", type=Path, required=True, help="dataset JSON path")
    generate.add_argument("--width", type=int)
    generate.add_argument("--height", type=int)
    generate.add_argument("--noise-std", type=float, help="fraction of the peak signal")
    generate.add_argument("--noise-sweep", type=_float_list,
                          help="comma-separated noise stds, one dataset each")
    generate.add_argument("--t1b", type=float)
    generate.add_argument("--smoothness", type=float)
    generate.add_argument("--mask-shape", help="full or ellipse")

    fit = subparsers.add_parser("fit", help="fit every masked voxel of a dataset")
    common(fit)
    fit.add_argument("--dataset", type=Path, required=True)
    fit.add_argument("--method", help="lsf, lsf-multi, pinn or supinn")
    fit.add_argument("--output", type=Path, required=True, help="output directory")
    fit.add_argument("--jobs", type=int, help="worker processes (default: logical cores)")
    fit.add_argument("--tier-iterations", type=int, nargs=3, metavar=("FORWARD", "INVERSE", "FINE"))
    fit.add_argument("--learning-rates", type=float, nargs=3, metavar=("FORWARD", "INVERSE", "FINE"))
    fit.add_argument("--gamma", type=float)
    fit.add_argument("--n-collocation", type=int)
    fit.add_argument("--n-branches", type=int)
    fit.add_argument("--smoothing-k", type=float)
    fit.add_argument("--lsf-mode", help="fixed-t1b or free-t1b")
    fit.add_argument("--at-grid", type=_float_list, help="comma-separated LSF start ATs, ms")

    evaluate = subparsers.add_parser("evaluate", help="score results against ground truth")
    evaluate.add_argument("--results", type=Path, action="append", required=True,
                          help="results.json or fit output directory; repeatable")
    evaluate.add_argument("--dataset", type=Path, action="append", required=True,
                          help="dataset of the matching --results; repeatable")
    evaluate.add_argument("--output", type=Path, required=True, help="report directory")

    export = subparsers.add_parser("export-maps", help="export parameter maps")
    export.add_argument("--results", type=Path, required=True)
    export.add_argument("--output", type=Path, required=True)
    export.add_argument("--dataset", type=Path, help="adds relative-error maps")
    export.add_argument("--png", action="store_true", help="also write grayscale images")
    export.add_argument("--voxel", type=parse_voxel, help="ROW,COL signal plot")
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """Nested config overrides; None means the flag was not given"""
    def get(name):
        return getattr(args, name, None)

    def as_tuple(value):
        return tuple(value) if value is not None else None

    return {
        "seed": get("seed"),
        "method": get("method"),
        "jobs": get("jobs"),
        "noise_sweep": get("noise_sweep"),
        "phantom": {
            "seed": get("seed"),
            "width": get("width"),
            "height": get("height"),
            "noise_std": get("noise_std"),
            "t1b": get("t1b"),
            "smoothness": get("smoothness"),
            "mask_shape": get("mask_shape"),
        },
        "train": {
            "seed": get("seed"),
            "tier_iterations": as_tuple(get("tier_iterations")),
            "learning_rates": as_tuple(get("learning_rates")),
            "gamma": get("gamma"),
            "n_collocation": get("n_collocation"),
            "n_branches": get("n_branches"),
            "smoothing_k": get("smoothing_k"),
        },
        "lsf": {
            "mode": get("lsf_mode"),
            "at_grid": get("at_grid"),
        },
    }


def run(args: argparse.Namespace) -> int:
    if args.command == "evaluate":
        if len(args.results) != len(args.dataset):
            raise UsageError("--results and --dataset must be given the same number of times")
        summary = cmd_evaluate(list(zip(args.results, args.dataset)), args.output)
        print(summary["text"], end="")
        return EXIT_OK

    if args.command == "export-maps":
        summary = cmd_export_maps(args.results, args.output, dataset=args.dataset,
                                  png=args.png, voxel=args.voxel)
        print(f"Wrote {len(summary['files'])} file(s) to {summary['output_dir']}")
        return EXIT_OK

    cfg = RunConfig.from_sources(args.config, overrides_from_args(args))
    if args.command == "generate":
        summary = cmd_generate(cfg, args.output)
        print(
            f"Generated {len(summary['files'])} dataset(s): {summary['height']}x{summary['width']} "
            f"grid, {summary['n_masked']} masked voxels, {summary['n_points']} time points, "
            f"t1b={summary['t1b']:g} ms, seed={summary['seed']}"
        )
        for path in summary["files"]:
            print(f"  {path}")
        return EXIT_OK

    summary = cmd_fit(cfg, args.dataset, args.output)
    print(
        f"{summary['method']}: {summary['n_fitted']} voxel(s) fitted, "
        f"{summary['n_failed']} failed -> {summary['output_dir']}"
    )
    return EXIT_VOXEL_FAILURES if summary["n_failed"] else EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"aslpinn: error: {e}", file=sys.stderr)
        return EXIT_USAGE

    configure_logging(args.log_level)
    try:
        return run(args)
    except (UsageError, ConfigurationError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_USAGE
    except DatasetError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_DATA
    except AslPinnError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_DATA
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
