"""Command line entry point.

::

    carleman-lab constants --config laplacian.cfg
    carleman-lab suite --config affine_d2.cfg --format json --out results/

Exit status: 0 if every judged check passes, 1 if some check fails,
2 for usage and configuration errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional, Sequence

from .constants import carleman_constants
from .config import ConfigError, ExperimentConfig, load_config, with_overrides
from .params import FieldError
from .suite import report_csv, report_json, report_text, run_suite

COMMANDS = {
    "constants": ("constants",),
    "identities": ("constants", "identities"),
    "bounds": ("constants", "bounds"),
    "carleman": ("constants", "lemma41", "carleman"),
    "sweep": ("constants", "sweep"),
    "suite": ("constants", "bounds", "identities", "lemma41", "sweep"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="carleman-lab",
                     description="Numerical verification of a Carleman estimate.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="configuration file (default: built-in defaults)")
        p.add_argument("--out", help="directory for report and sweep files")
        p.add_argument("--format", choices=("csv", "json", "text"), default=None)
        p.add_argument("--seed", type=int, default=None, help="point sampling seed")
        p.add_argument("--jobs", type=int, default=1, help="worker threads")
    return parser


def _render(report, fmt: str) -> str:
    if fmt == "json":
        return report_json(report)
    if fmt == "csv":
        return report_csv(report)
    return report_text(report)


def _write_outputs(report, cfg: ExperimentConfig, out_dir: str, fmt: str, text: str):
    os.makedirs(out_dir, exist_ok=True)
    ext = {"json": "json", "csv": "csv", "text": "txt"}[fmt]
    with open(os.path.join(out_dir, f"report.{ext}"), "w", encoding="utf-8") as fh:
        fh.write(text)
    for name, csv_text in report.sweeps.items():
        with open(os.path.join(out_dir, f"sweep_{name}.csv"), "w", encoding="utf-8") as fh:
            fh.write(csv_text)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("carleman-lab: error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        cfg = with_overrides(cfg, args.seed, args.out, args.format)
        fmt = args.format or cfg.output.format
        report = run_suite(cfg, args.jobs, COMMANDS[args.command])
    except (ConfigError, FieldError, OSError) as exc:
        print(f"carleman-lab: error: {exc}", file=sys.stderr)
        return 2
    text = _render(report, fmt)
    if args.command == "constants" and fmt == "text":
        consts = carleman_constants(cfg.problem_params(), strict=False)
        text = consts.text() + "\n\n" + text
    sys.stdout.write(text)
    if args.out:
        _write_outputs(report, cfg, args.out, fmt, text)
    if not report.passed:
        for c in report.checks:
            if c.passed is False:
                print(f"FAILED {c.stage}/{c.name}: {c.message}".rstrip(": "),
                      file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
