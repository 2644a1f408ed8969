"""Command-line front door: configs in, tables and reports out.

Subcommands:
  run <config.toml> [--frozen file]   dispatch and write artifacts; exit 0
                                      iff every check passed
  freeze <config.toml> --checks ...   run, then pin selected check values
  validate <config.toml>              parse + round-trip the config
  list-builtins                       show the builtin model families

Environment: CHAINLAB_BASE_SEED overrides the config seed and
CHAINLAB_WORKERS the worker count; nothing else is read.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import config as C
from . import experiments
from .models import BUILTIN_NAMES
from .report import FreezeError, write_frozen

_BUILTIN_HELP = {
    "nearest_neighbor": "d, c: weight c on |x-y| = 1",
    "remark2_periodic": "r1, s1, r2, s2: parity-dependent first/second-neighbor bonds (d=1)",
    "radial_heavy_tail": "d, exponent, scale, offset: scale*(offset+|x-y|)^-exponent",
    "harnack_counterexample": "d, b, a: unit jumps plus atoms at +-b[n] e^1 with mass a[n]",
    "iid_table": "d, offsets, weights: symmetric translation-invariant table",
}


def _default_frozen(config_path: str) -> str:
    return str(Path(config_path).with_suffix(".frozen.json"))


def cmd_run(args) -> int:
    cfg = C.load(args.config)
    frozen = args.frozen or _default_frozen(args.config)
    report = experiments.run_config(cfg, frozen_path=frozen)
    for line in report.summary_lines():
        print(line)
    print(f"report: {Path(cfg.output_dir) / 'report.json'}")
    return 0 if report.passed else 1


def cmd_freeze(args) -> int:
    cfg = C.load(args.config)
    report = experiments.run_config(cfg, write_report=True)
    out = args.out or _default_frozen(args.config)
    tolerances = {cid: args.tol for cid in args.checks}
    modes = {cid: args.mode for cid in args.checks}
    try:
        write_frozen(out, report, args.checks, tolerances, modes)
    except FreezeError as e:
        print(f"freeze refused: {e}", file=sys.stderr)
        return 2
    print(f"froze {len(args.checks)} check(s) to {out}")
    return 0


def cmd_validate(args) -> int:
    cfg = C.load(args.config)
    text = C.serialize(cfg)
    again = C.parse(text)
    if again != cfg:
        print("config does not round-trip", file=sys.stderr)
        return 2
    print(f"ok: kind={cfg.kind} seed={cfg.seed} digest={cfg.digest()}")
    return 0


def cmd_list_builtins(_args) -> int:
    for name in BUILTIN_NAMES:
        print(f"{name}: {_BUILTIN_HELP[name]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chainlab", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--frozen", default=None, help="frozen-regression file")
    p_run.set_defaults(func=cmd_run)

    p_fr = sub.add_parser("freeze", help="pin check values as regressions")
    p_fr.add_argument("config")
    p_fr.add_argument("--checks", nargs="+", required=True)
    p_fr.add_argument("--out", default=None)
    p_fr.add_argument("--tol", type=float, default=0.05)
    p_fr.add_argument("--mode", choices=("band", "upper", "lower"), default="band")
    p_fr.set_defaults(func=cmd_freeze)

    p_val = sub.add_parser("validate", help="parse and round-trip a config")
    p_val.add_argument("config")
    p_val.set_defaults(func=cmd_validate)

    p_lb = sub.add_parser("list-builtins", help="list builtin model families")
    p_lb.set_defaults(func=cmd_list_builtins)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
