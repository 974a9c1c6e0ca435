"""Command-line front end for the sweep harness.

Subcommands run a Monte-Carlo sweep or one of its derived reports and
write CSV plus JSON files into the output directory.  All of them accept
the same flags; ``--trials``, ``--seed`` and ``--threads`` override the
corresponding config fields.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .harness import (ExperimentConfig, load_config, run_sweep,
                      power_ratio_report, fairness_report,
                      subcarrier_power_report, convergence_report,
                      write_sweep_csv, write_subcarrier_csv,
                      write_convergence_csv, write_json)


def _add_common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", metavar="PATH",
                     help="INI experiment description (defaults used if omitted)")
    sub.add_argument("--out", metavar="DIR", default=".",
                     help="output directory (created if missing)")
    sub.add_argument("--trials", type=int, metavar="N",
                     help="override the trial count")
    sub.add_argument("--seed", type=int, metavar="S",
                     help="override the root seed")
    sub.add_argument("--threads", type=int, metavar="T",
                     help="override the worker thread count")


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    return replace(cfg, **overrides) if overrides else cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ofdm-rsma",
        description="Monte-Carlo comparison of OFDMA, OFDM-NOMA and "
                    "OFDM-RSMA over doubly-selective channels")
    subs = parser.add_subparsers(dest="command", required=True)
    for name, doc in (
            ("sweep", "full grid sweep: sweep.csv and summary.json"),
            ("power-report", "per-subcarrier allocations and power ratios"),
            ("fairness", "Jain fairness indices per grid cell"),
            ("convergence", "sum-rate iteration traces on one realization")):
        _add_common_flags(subs.add_parser(name, help=doc))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = _outdir(args)

    if args.command == "sweep":
        result = run_sweep(cfg)
        write_sweep_csv(result, out / "sweep.csv")
        write_json(result, out / "summary.json")
        print(f"wrote {out / 'sweep.csv'} and {out / 'summary.json'}")
    elif args.command == "power-report":
        result = run_sweep(cfg)
        rows = subcarrier_power_report(cfg)
        write_subcarrier_csv(rows, out / "subcarrier_power.csv")
        write_json(power_ratio_report(cfg, result), out / "power_ratios.json")
        print(f"wrote {out / 'subcarrier_power.csv'} and "
              f"{out / 'power_ratios.json'}")
    elif args.command == "fairness":
        result = run_sweep(cfg)
        write_sweep_csv(result, out / "fairness.csv")
        write_json(fairness_report(cfg, result), out / "fairness.json")
        print(f"wrote {out / 'fairness.csv'} and {out / 'fairness.json'}")
    elif args.command == "convergence":
        rows = convergence_report(cfg)
        write_convergence_csv(rows, out / "convergence.csv")
        write_json({"trace": rows}, out / "convergence.json")
        print(f"wrote {out / 'convergence.csv'} and {out / 'convergence.json'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
