"""Command-line entry point.

    intentrl run <config-file> [--seed N] [--steps N] [--out DIR] [--override section.key=value ...]
    intentrl suite <name> [same flags]
    intentrl flops
    intentrl bias-demo

Exit status: 0 on success, 1 on usage or validation errors, 2 when a learner
produced non-finite values.
"""
from __future__ import annotations

import argparse
import json
import sys

from .. import diagnostics
from ..errors import ConfigError, NumericalError
from .config import apply_assignments, load_config, parse_overrides
from .runner import _json_clean, bias_summary, run
from .suites import SUITES, adjust, headline, suite_configs


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, help="run this single seed instead of the configured list")
    common.add_argument("--steps", type=int, help="override run.total_steps")
    common.add_argument("--out", help="output directory")
    common.add_argument(
        "--override", action="append", default=[], metavar="KEY=VALUE", help="dotted-path override, repeatable"
    )
    p = _Parser(prog="intentrl", description="Intentional-update streaming RL experiments.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    r = sub.add_parser("run", parents=[common], help="run one experiment from a config file")
    r.add_argument("config")
    s = sub.add_parser("suite", parents=[common], help="run a canned suite")
    s.add_argument("name", choices=sorted(SUITES))
    sub.add_parser("flops", help="print the per-update FLOPs table")
    sub.add_parser("bias-demo", help="print the action-reweighting bias demonstration")
    return p


def _emit(obj, stream):
    json.dump(_json_clean(obj), stream, indent=2, sort_keys=True)
    stream.write("\n")


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "intentrl: error: a subcommand is required")
        if args.command == "flops":
            print(diagnostics.flops_model().table(), file=stdout)
            return 0
        if args.command == "bias-demo":
            _emit(bias_summary(), stdout)
            return 0
        overrides = parse_overrides(args.override)
        if args.steps is not None and args.steps <= 0:
            raise ConfigError("must be positive", "--steps")
        if args.command == "run":
            cfg = apply_assignments(load_config(args.config), overrides)
            cfgs = [adjust(cfg, args.seed, args.steps, args.out)]
        else:
            cfgs = suite_configs(args.name, args.seed, args.steps, args.out, overrides)
        for cfg in cfgs:
            rec = run(cfg, cfg.run.output_dir)
            _emit({"experiment": cfg.experiment, "summary": rec.files["summary"], **headline(rec)}, stdout)
        return 0
    except UsageError as e:
        print(str(e), file=stderr)
        return 1
    except ConfigError as e:
        print(f"intentrl: invalid configuration: {e}", file=stderr)
        return 1
    except NumericalError as e:
        print(f"intentrl: numerical failure: {e}", file=stderr)
        return 2
    except OSError as e:
        print(f"intentrl: I/O error: {e}", file=stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
