"""CLI shim: mirror of the engine's `signal` flags, run out of process.

The adapter never links against the engine; it shells out to the
`ifengine` CLI so both sides stay pinned to the file protocol.
"""

from __future__ import annotations

import argparse
import subprocess
import sys


def engine_command() -> list[str]:
    return [sys.executable, "-m", "ifengine.cli"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trainer-adapter",
        description="Run engine token-signal kernels on exported record files.",
    )
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in ("select", "tea", "report"):
        p = sub.add_parser(mode)
        p.add_argument("--records", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--r", type=float, default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--literal-quantile", action="store_true", dest="literal_quantile")
        p.add_argument("--tau", type=float, default=None)
        p.add_argument("--c", type=float, default=None)
        p.add_argument("--lam", type=float, default=None)
        p.add_argument("--l-grpo", type=float, default=None, dest="l_grpo")
        p.add_argument("--top-k", type=int, default=None, dest="top_k")
        p.add_argument("--min-freq", type=int, default=None, dest="min_freq")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    command = engine_command() + ["signal", args.mode, "--records", args.records, "--out", args.out]
    flag_map = [
        ("r", "--r"),
        ("alpha", "--alpha"),
        ("tau", "--tau"),
        ("c", "--c"),
        ("lam", "--lam"),
        ("l_grpo", "--l-grpo"),
        ("top_k", "--top-k"),
        ("min_freq", "--min-freq"),
    ]
    for attr, flag in flag_map:
        value = getattr(args, attr)
        if value is not None:
            command += [flag, str(value)]
    if args.literal_quantile:
        command.append("--literal-quantile")
    return subprocess.run(command).returncode


def main_entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    main_entry()
