"""``censurv generate|train|evaluate|sweep --config <path> [--out <dir>] [--seed <int>]``.

Exit codes: 0 success, 2 config error, 3 untrainable objective, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .core import DatasetFormatError
from .experiments import ConfigError, load_config, run_evaluate, run_generate, run_sweep, run_train
from .training import IncompatibleError, UntrainableError

EXIT_OK, EXIT_CONFIG, EXIT_UNTRAINABLE, EXIT_IO = 0, 2, 3, 4

COMMANDS = {
    "generate": run_generate,
    "train": run_train,
    "evaluate": run_evaluate,
    "sweep": run_sweep,
}

log = logging.getLogger("censurv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="censurv", description="Discrete-time survival experiments on censored data.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or name).splitlines()[0])
        p.add_argument("--config", required=True, type=Path, help="TOML or JSON config")
        p.add_argument("--out", type=Path, default=None,
                       help="output directory (default: config 'out' key, else ./out)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        out = args.out or Path(cfg.get("out", "out"))
        if not out.is_absolute() and args.out is None:
            out = Path(cfg["_base"]) / out
        paths = COMMANDS[args.command](cfg, out, args.seed)
    except UntrainableError as exc:
        print(f"censurv: untrainable: {exc}", file=sys.stderr)
        return EXIT_UNTRAINABLE
    except (ConfigError, IncompatibleError, DatasetFormatError) as exc:
        print(f"censurv: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"censurv: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    for key, path in paths.items():
        print(f"{key}: {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
