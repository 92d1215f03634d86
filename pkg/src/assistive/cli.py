"""Command line entry point: ``assistive <job> --config PATH [--seed N] [--out DIR] [--deceptive]``.

Exit codes: 0 success, 2 usage/config error, 3 input format error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import traceback
from pathlib import Path

import yaml
from pydantic import ValidationError

from .classifiers import FormatError
from .config import ExperimentConfig, error_paths, load_config
from .meshio import MeshFormatError
from .runner import JOBS, InputError, run_experiment

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("assistive")


def _module_tag(exc: BaseException) -> str:
    """Name of the deepest package module in the traceback."""
    tag = "runner"
    for frame in traceback.extract_tb(exc.__traceback__):
        parts = Path(frame.filename).parts
        if "assistive" in parts:
            tag = Path(frame.filename).stem
    return tag


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="assistive", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="job", required=True)
    for name in JOBS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="YAML/JSON experiment config")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--out", type=Path, help="override the output directory")
        s.add_argument("--deceptive", action="store_true", help="flip the signal mode to deceptive")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        updates = {}
        if cfg.kind is not None and cfg.kind != args.job:
            print(f"usage error: kind: config says {cfg.kind!r} but job is {args.job!r}", file=sys.stderr)
            return EXIT_USAGE
        updates["kind"] = args.job
        if args.seed is not None:
            updates["seed"] = args.seed
        if args.out is not None:
            updates["output_dir"] = str(args.out.resolve())
        cfg = ExperimentConfig.model_validate({**cfg.model_dump(), **updates})
    except ValidationError as e:
        for line in error_paths(e):
            print(f"usage error: {line}", file=sys.stderr)
        return EXIT_USAGE
    except (yaml.YAMLError, ValueError, FileNotFoundError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    base = args.config.parent if args.config else Path(".")
    try:
        record = run_experiment(cfg, base, deceptive=args.deceptive)
    except (FormatError, MeshFormatError, InputError, FileNotFoundError) as e:
        print(f"[{_module_tag(e)}] input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as e:  # noqa: BLE001 - every other failure maps to the runtime exit code
        print(f"[{_module_tag(e)}] {type(e).__name__}: {e}", file=sys.stderr)
        if args.verbose:
            traceback.print_exc()
        return EXIT_RUNTIME
    print(record.run_dir)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
