"""Command-line interface.

Exit codes: 0 success, 1 invalid input, 2 numerical degeneracy.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

from .errors import InvalidInputError, NumericalSingularityError
from .fixedb import CvCache, SimulationConfig, critical_value
from .montecarlo import load_experiment, power_curve, rejection_table, spec_audit, write_rows_csv
from .pipeline import (
    ReportSpec,
    comparison_table,
    ingest_csv,
    ratio_table,
    run_report,
    slope_table,
    write_rows,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kernel", default="daniell", choices=["bartlett", "parzen", "qs", "daniell"])
    p.add_argument("--bandwidth", default="a91", help="'a91' or a fixed fraction b in (0, 1]")
    p.add_argument("--level", type=float, default=0.05, help="two-sided nominal level")
    p.add_argument("--seed", type=int, default=SimulationConfig.seed,
                   help="seed for simulated critical values and experiments")
    p.add_argument("--out-dir", type=Path, default=None, help="write files here instead of stdout")
    p.add_argument("--format", default="csv", choices=["csv", "json", "both"])


def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("data", type=Path, help="CSV with a time column and one column per series")
    p.add_argument("--time-column", default=None)


def _pairs(p: argparse.ArgumentParser, required: bool) -> None:
    p.add_argument("--pair", nargs=2, action="append", metavar=("NUM", "DEN"), default=[],
                   required=required, help="numerator and denominator labels; repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trendratio",
                                     description="Trend-slope ratio estimation with fixed-b inference.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trend", help="trend slopes with confidence intervals")
    _data_args(p)
    p.add_argument("--series", nargs="*", default=None, help="labels to report (default: all)")
    p.add_argument("--scale-per", type=float, default=10.0, help="report slopes per this many steps")
    _common(p)

    p = sub.add_parser("ratio", help="trend ratios with Fieller confidence sets")
    _data_args(p)
    _pairs(p, True)
    _common(p)

    p = sub.add_parser("compare", help="pairwise ratio and product differences")
    _data_args(p)
    _pairs(p, True)
    _common(p)

    p = sub.add_parser("report", help="slope, ratio and comparison tables with a JSON audit")
    _data_args(p)
    _pairs(p, False)
    p.add_argument("--scale-per", type=float, default=10.0)
    _common(p)

    p = sub.add_parser("simulate", help="Monte Carlo size and power experiments")
    p.add_argument("kind", choices=["null", "power"])
    p.add_argument("config", type=Path, help="JSON experiment config")
    p.add_argument("--replications", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", type=Path, default=None)
    p.add_argument("--format", default="csv", choices=["csv", "json", "both"])

    p = sub.add_parser("cv", help="fixed-b critical value")
    p.add_argument("--kernel", default="daniell", choices=["bartlett", "parzen", "qs", "daniell"])
    p.add_argument("--b", type=float, required=True)
    p.add_argument("--level", type=float, default=0.05)
    p.add_argument("--q", type=int, default=1)
    p.add_argument("--form", default="t", choices=["t", "wald"])
    p.add_argument("--replications", type=int, default=SimulationConfig.replications)
    p.add_argument("--steps", type=int, default=SimulationConfig.step_count)
    p.add_argument("--seed", type=int, default=SimulationConfig.seed)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--cache", type=Path, default=None, help="cv cache CSV (default: user cache)")
    p.add_argument("--no-cache", action="store_true")
    return parser


def _emit(name: str, rows: list[dict], args, audit: Optional[dict] = None) -> None:
    if args.out_dir is None:
        if args.format == "csv":
            w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]) if rows else [])
            w.writeheader()
            w.writerows(rows)
        else:
            json.dump({"rows": rows, "audit": audit}, sys.stdout, indent=2, default=str)
            sys.stdout.write("\n")
        return
    if args.format in ("csv", "both"):
        write_rows(rows, args.out_dir / f"{name}.csv")
    if args.format in ("json", "both") or audit is not None:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        payload = {"rows": rows, "audit": audit} if args.format != "csv" else {"audit": audit}
        (args.out_dir / f"{name}.json").write_text(json.dumps(payload, indent=2, default=str))


def _report_spec(args) -> ReportSpec:
    return ReportSpec(pairs=tuple(tuple(p) for p in getattr(args, "pair", [])), kernel=args.kernel,
                      bandwidth=args.bandwidth, level=args.level,
                      scale_per=getattr(args, "scale_per", 10.0), seed=args.seed)


def _run(args) -> int:
    cmd = args.command
    if cmd in ("trend", "ratio", "compare", "report"):
        with warnings.catch_warnings():
            # the pipeline also logs dropped series; show that once
            warnings.simplefilter("ignore", UserWarning)
            ds = ingest_csv(args.data, args.time_column)
        spec = _report_spec(args)
        if cmd == "report":
            if args.out_dir is None:
                raise InvalidInputError("report needs --out-dir")
            res = run_report(ds, spec, args.out_dir, args.format)
            for path in res["paths"].values():
                print(path)
            return EXIT_OK
        if cmd == "trend":
            rows, audit = slope_table(ds, spec, args.series or None)
        elif cmd == "ratio":
            rows, audit = ratio_table(ds, spec)
        else:
            rows, audit = comparison_table(ds, spec)
        _emit({"trend": "slopes", "ratio": "ratios", "compare": "comparisons"}[cmd], rows, args,
              {"settings": spec.settings(), "results": audit})
        return EXIT_OK

    if cmd == "simulate":
        kind, spec, grid = load_experiment(args.config)
        if kind != args.kind:
            logging.getLogger(__name__).info("config kind %s overridden by command %s", kind, args.kind)
        overrides = {k: getattr(args, k) for k in ("replications", "workers", "seed")
                     if getattr(args, k) is not None}
        if overrides:
            spec = type(spec)(**{**{f: getattr(spec, f) for f in spec.__dataclass_fields__}, **overrides})
        rows = power_curve(spec, grid) if args.kind == "power" else rejection_table(spec)
        dicts = [r.as_dict() for r in rows]
        audit = {"experiment": spec_audit(spec), "theta2_grid": grid}
        if args.out_dir is not None and args.format in ("csv", "both"):
            write_rows_csv(rows, args.out_dir / f"simulate_{args.kind}.csv")
            if args.format == "csv":
                (args.out_dir / f"simulate_{args.kind}.json").write_text(
                    json.dumps({"audit": audit}, indent=2, default=str))
                return EXIT_OK
        _emit(f"simulate_{args.kind}", dicts, args, audit)
        return EXIT_OK

    if cmd == "cv":
        cfg = SimulationConfig(args.replications, args.steps, args.seed, workers=args.workers)
        cache = None if args.no_cache else CvCache(args.cache) if args.cache else CvCache()
        cv = critical_value(args.kernel, args.b, args.level, args.q, args.form, cfg, cache)
        print(json.dumps(cv.as_dict(), indent=2))
        return EXIT_OK
    raise InvalidInputError(f"unknown command {cmd}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalSingularityError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
