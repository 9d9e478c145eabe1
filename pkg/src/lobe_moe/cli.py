"""Command line: ``lobe-moe <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields

from .config import STAGES, RunConfig, UsageError, build_config, read_config_file
from .core_data import DataError
from .evaluation import LeakageError
from .pipeline import InvariantError, StageError, run_stages
from .report import cmd_report

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3

SUBCOMMANDS = {
    "synth": ("synth",),
    "extract": ("extract",),
    "train-experts": ("experts",),
    "gate": ("gate",),
    "ensemble": ("ensemble",),
    "stage4": ("stage4",),
    "evaluate": ("evaluate",),
    "pipeline": STAGES,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _config_flags(default) -> argparse.ArgumentParser:
    # subcommand copies use SUPPRESS so they never overwrite flags given before the subcommand
    p = _Parser(add_help=False)
    p.add_argument("--config", default=default, help="INI-style config file; flags override its keys")
    for f in fields(RunConfig):
        if f.type in ("bool", bool):
            p.add_argument(_flag(f.name), dest=f.name, action="store_const", const=True, default=default)
        else:
            p.add_argument(_flag(f.name), dest=f.name, default=default, help=f"default: {f.default!r}")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lobe-moe", description="Regional mixture-of-experts experiments on volumetric scans.",
                     parents=[_config_flags(None)])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _config_flags(argparse.SUPPRESS)
    for name in (*SUBCOMMANDS, "report"):
        sp = sub.add_parser(name, parents=[common])
        sp.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
        if name == "pipeline":
            sp.add_argument("--no-resume", action="store_true", help="ignore the ledger and rerun every stage")
    return parser


def _overrides(args) -> dict:
    from .config import coerce
    out = {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            out[f.name] = v if isinstance(v, bool) else coerce(f.name, v)
    return out


def config_from_args(args) -> RunConfig:
    file_values = read_config_file(args.config) if args.config else {}
    return build_config(file_values, _overrides(args))


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, (InvariantError, LeakageError, AssertionError, FloatingPointError)):
        return EXIT_INVARIANT
    if isinstance(exc, (DataError, OSError, ValueError, KeyError)):
        return EXIT_DATA
    return EXIT_INVARIANT


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                            format="%(levelname)s %(message)s")
        cfg = config_from_args(args)
        if args.command == "report":
            sys.stdout.write(cmd_report(cfg.out))
            return EXIT_OK
        stages = SUBCOMMANDS[args.command]
        resume = not getattr(args, "no_resume", False)
        run = run_stages(cfg, stages, resume=resume)
        for stage in STAGES:
            if stage in run.ran:
                print(f"ran {stage}")
            elif stage in run.skipped:
                print(f"up to date {stage}")
        return EXIT_OK
    except SystemExit as exc:
        return int(exc.code or 0)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
