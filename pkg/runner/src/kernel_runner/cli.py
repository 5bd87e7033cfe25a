"""kernel-runner entry point."""

from __future__ import annotations

import argparse
import sys

from .executor import DEFAULT_TIMEOUT_S
from .server import RunnerSettings, load_mock_table, resolve_device, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kernel-runner",
        description="Kernel execution sandbox speaking one JSON record per "
                    "line on stdin/stdout.")
    parser.add_argument("--mock", metavar="COST_TABLE",
                        help="serve deterministic outcomes from a cost table "
                             "instead of executing")
    parser.add_argument("--device", choices=("auto", "cpu", "gpu"),
                        default="auto")
    parser.add_argument("--timeout-s", type=float, default=DEFAULT_TIMEOUT_S,
                        help="wall-clock limit per evaluation")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    mock_table = None
    if args.mock:
        try:
            mock_table = load_mock_table(args.mock)
        except Exception as exc:
            print(f"cannot load cost table: {exc}", file=sys.stderr)
            return 2
    settings = RunnerSettings(device=resolve_device(args.device),
                              mock_table=mock_table,
                              default_timeout_s=args.timeout_s)
    return serve(settings)


if __name__ == "__main__":
    sys.exit(main())
