"""Command line entry point: ``run``, ``summarize`` and ``compare``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .experiment import (
    AdmissionDenied,
    ExperimentConfig,
    ExperimentError,
    Scenario,
    compare_static_equivalent,
    format_summary,
    run_scenario,
    summarize,
    summarize_rows,
    read_csv,
    sweep_from_dir,
)
from .traffic import TraceFormatError


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vrslice", description="RAN slicing experiments for VR streaming")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="simulate one scenario and write per-second CSV")
    run.add_argument("--config", type=Path, help="JSON config; command line flags override it")
    run.add_argument("--scenario", help="no-slicing | static:<rbgs> | data-driven:<target_ms>[:<slack_ms>]")
    run.add_argument("--trace", help="trace CSV path, 'synth' or 'synth-constant'")
    run.add_argument("--duration", type=int, help="seconds (>= 60)")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory")

    sm = sub.add_parser("summarize", help="summary statistics of one or more run CSVs")
    sm.add_argument("csv", nargs="+", type=Path)
    sm.add_argument("--warmup", type=int, default=10, help="seconds trimmed from the start")
    sm.add_argument("--gnuplot", action="store_true", help="whitespace layout with '#' header")

    cp = sub.add_parser("compare", help="data-driven run against the latency-equivalent static allocation")
    cp.add_argument("data_driven", type=Path)
    cp.add_argument("sweep_dir", type=Path)
    cp.add_argument("--warmup", type=int, default=10)
    return p


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is not None:
        cfg = ExperimentConfig.from_json(args.config.read_text(encoding="utf-8"))
    elif args.scenario is None:
        raise ValueError("--scenario is required without --config")
    else:
        cfg = ExperimentConfig(Scenario.parse(args.scenario))
    if args.scenario is not None:
        cfg.scenario = Scenario.parse(args.scenario)
    if args.trace is not None:
        cfg.trace = args.trace
    if args.duration is not None:
        cfg.duration_s = args.duration
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    # re-run validation after overrides
    return ExperimentConfig(**{k: getattr(cfg, k) for k in cfg.__dataclass_fields__})


def main(argv: Optional[List[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.cmd == "run":
            path = run_scenario(_config_from_args(args))
            print(path)
        elif args.cmd == "summarize":
            text = format_summary(summarize(args.csv, args.warmup))
            if args.gnuplot:
                head, *rest = text.splitlines()
                text = "\n".join(["# " + head.replace("\t", " ")] + [r.replace("\t", " ") for r in rest])
            print(text)
        elif args.cmd == "compare":
            dd = summarize_rows(read_csv(args.data_driven), args.data_driven.stem, args.warmup)
            cmp = compare_static_equivalent(dd, sweep_from_dir(args.sweep_dir, args.warmup))
            print(cmp.report())
            return 0 if cmp.comparable else 3
    except AdmissionDenied as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ExperimentError, TraceFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
