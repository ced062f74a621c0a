"""CSV ingestion and slope / ratio / comparison reports.

A dataset CSV has one time column followed by one column per series. Labels
of the form ``SOURCE:LEVEL`` (for example ``RICH:850``) let the comparison
report match the same pair of levels across sources.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import InvalidInputError
from .fixedb import CvCache, SimulationConfig
from .inference import CvOptions, fieller_ci, ratio_diff_report, slope_ci
from .kernels import AndrewsAR1, Kernel, parse_bandwidth, parse_kernel
from .series import TrendPair, TrendSeries

__all__ = [
    "Dataset",
    "ReportSpec",
    "ingest_csv",
    "write_dataset_csv",
    "slope_table",
    "ratio_table",
    "comparison_table",
    "run_report",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    """Named series on a common time grid."""

    source: str
    series: dict
    start: float = 1.0
    step: float = 1.0

    def __post_init__(self) -> None:
        if not self.series:
            raise InvalidInputError(f"dataset {self.source!r} has no complete series")
        lengths = {s.T for s in self.series.values()}
        if len(lengths) != 1:
            raise InvalidInputError(f"series lengths differ: {sorted(lengths)}")

    @property
    def T(self) -> int:
        return next(iter(self.series.values())).T

    @property
    def labels(self) -> list[str]:
        return list(self.series)

    @property
    def times(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.T)

    def get(self, label: str) -> TrendSeries:
        try:
            return self.series[label]
        except KeyError:
            raise InvalidInputError(f"series {label!r} not in dataset {self.source!r}") from None

    def pair(self, numerator: str, denominator: str) -> TrendPair:
        return TrendPair(self.get(numerator), self.get(denominator))


def _parse_cell(cell: str, row: int, col: str) -> float:
    cell = cell.strip()
    if cell == "" or cell.upper() in ("NA", "NAN"):
        return math.nan
    try:
        return float(cell)
    except ValueError:
        raise InvalidInputError(f"row {row}, column {col!r}: cannot parse {cell!r}") from None


def ingest_csv(path: Union[str, Path], time_column: Optional[str] = None,
               source: Optional[str] = None) -> Dataset:
    """Read a dataset; series with any missing cell are dropped with a warning."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from exc
    if len(rows) < 2:
        raise InvalidInputError(f"{path} has no data rows")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2:
        raise InvalidInputError(f"{path} needs a time column and at least one series")
    dupes = sorted({h for h in header if header.count(h) > 1})
    if dupes:
        raise InvalidInputError(f"duplicate column labels: {dupes}")
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise InvalidInputError(f"line {i} has {len(r)} fields, header has {len(header)}")

    if time_column is not None and time_column not in header:
        raise InvalidInputError(f"time column {time_column!r} not found")
    tcol = header.index(time_column) if time_column is not None else 0
    data = np.array([[_parse_cell(c, i, header[j]) for j, c in enumerate(r)]
                     for i, r in enumerate(rows[1:], start=2)])
    times = data[:, tcol]
    if np.any(np.isnan(times)):
        raise InvalidInputError("time column has missing values")
    steps = np.diff(times)
    step = float(steps[0]) if steps.size else 1.0
    if steps.size and not np.allclose(steps, step):
        raise InvalidInputError("time column is not evenly spaced")

    series = {}
    dropped = []
    for j, label in enumerate(header):
        if j == tcol:
            continue
        col = data[:, j]
        if np.any(np.isnan(col)):
            dropped.append(label)
            continue
        series[label] = TrendSeries(col, label)
    if dropped:
        msg = f"dropped series with missing values: {', '.join(dropped)}"
        warnings.warn(msg, stacklevel=2)
        logger.warning(msg)
    return Dataset(source or path.stem, series, float(times[0]), step)


def write_dataset_csv(dataset: Dataset, path: Union[str, Path], time_label: str = "time") -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([time_label, *dataset.labels])
        cols = [dataset.series[k].values for k in dataset.labels]
        for i, t in enumerate(dataset.times):
            w.writerow([repr(float(t)), *(repr(float(c[i])) for c in cols)])
    return path


# ---------------------------------------------------------------------------
# reports

@dataclass(frozen=True)
class ReportSpec:
    """Which pairs to report and the inference settings shared by all tables."""

    pairs: tuple[tuple[str, str], ...] = ()
    kernel: Kernel = Kernel.DANIELL
    bandwidth: object = field(default_factory=AndrewsAR1)
    level: float = 0.05
    scale_per: float = 10.0
    seed: int = SimulationConfig.seed

    def __post_init__(self) -> None:
        object.__setattr__(self, "pairs", tuple(tuple(p) for p in self.pairs))
        object.__setattr__(self, "kernel", parse_kernel(self.kernel))
        object.__setattr__(self, "bandwidth", parse_bandwidth(self.bandwidth))
        if self.scale_per <= 0:
            raise InvalidInputError("scale_per must be positive")

    @cached_property
    def cv_options(self) -> CvOptions:
        # one cache for every table of the report
        return CvOptions(SimulationConfig(seed=self.seed), CvCache())

    def settings(self) -> dict:
        bw = "a91" if isinstance(self.bandwidth, AndrewsAR1) else self.bandwidth.b
        return {"kernel": self.kernel.value, "bandwidth_rule": bw, "level": self.level,
                "scale_per": self.scale_per, "seed": self.seed}


def _interval_cols(prefix: str, cs) -> dict:
    return {f"{prefix}kind": cs.kind, f"{prefix}lower": cs.lower, f"{prefix}upper": cs.upper}


def slope_table(dataset: Dataset, spec: ReportSpec, labels: Optional[Sequence[str]] = None):
    """Trend slopes per ``scale_per`` time steps with fixed-b intervals."""
    rows, audit = [], []
    for label in labels if labels is not None else dataset.labels:
        res = slope_ci(dataset.get(label), spec.level, spec.kernel, spec.bandwidth, spec.scale_per,
                       spec.cv_options)
        rows.append({"series": label, "slope": res.estimate,
                     "lower": res.confidence_set.lower, "upper": res.confidence_set.upper,
                     "b": res.variance.b_ratio, "cv": res.critical_value.value,
                     "flags": ";".join(res.flags)})
        audit.append({"series": label, **res.audit()})
    return rows, audit


def ratio_table(dataset: Dataset, spec: ReportSpec):
    """IV ratio estimates with Fieller confidence sets."""
    rows, audit = [], []
    for num, den in spec.pairs:
        res = fieller_ci(dataset.pair(num, den), spec.level, spec.kernel, spec.bandwidth,
                         spec.cv_options)
        rows.append({"numerator": num, "denominator": den, "ratio": res.estimate,
                     **_interval_cols("", res.confidence_set),
                     "b": res.variance.b_ratio, "cv": res.critical_value.value,
                     "flags": ";".join(res.flags)})
        audit.append({"numerator": num, "denominator": den, **res.audit()})
    return rows, audit


def _pair_key(num: str, den: str) -> tuple[str, str]:
    level = lambda s: s.split(":", 1)[1] if ":" in s else ""
    return level(num), level(den)


def _source(label: str) -> str:
    return label.split(":", 1)[0] if ":" in label else label


def comparison_pairs(spec: ReportSpec) -> list[tuple[tuple[str, str], tuple[str, str]]]:
    """All pairs of requested pairs that share the same levels."""
    groups: dict = {}
    for p in spec.pairs:
        groups.setdefault(_pair_key(*p), []).append(p)
    out = []
    for members in groups.values():
        out.extend(itertools.combinations(members, 2))
    return out


def comparison_table(dataset: Dataset, spec: ReportSpec, g_scale: float = 1e4):
    """Pairwise ratio differences (t_IV) and product differences (t_prod).

    ``star`` columns mark intervals that exclude zero, read off the test
    decision so roundoff around a degenerate interval cannot set them. ``g`` is shown
    multiplied by ``g_scale``.
    """
    rows, audit = [], []
    for p1, p2 in comparison_pairs(spec):
        cmp = ratio_diff_report(dataset.pair(*p1), dataset.pair(*p2), spec.level, spec.kernel,
                                spec.bandwidth, spec.cv_options)
        ci_d = cmp.iv.confidence_set
        ci_g = cmp.prod.confidence_set.scaled(g_scale)
        rows.append({
            "pair1": f"{p1[0]}/{p1[1]}", "pair2": f"{p2[0]}/{p2[1]}",
            "delta_theta": cmp.delta_theta, "delta_lower": ci_d.lower, "delta_upper": ci_d.upper,
            "delta_star": cmp.iv.reject, "t_iv": cmp.iv.statistic, "b_iv": cmp.iv.variance.b_ratio,
            "g_scaled": cmp.g_hat * g_scale, "g_lower": ci_g.lower, "g_upper": ci_g.upper,
            "g_star": cmp.prod.reject, "t_prod": cmp.prod.statistic,
            "b_prod": cmp.prod.variance.b_ratio,
            "flags": ";".join(sorted(set(cmp.iv.flags) | set(cmp.prod.flags))),
        })
        audit.append({"pair1": list(p1), "pair2": list(p2), "g_scale": g_scale,
                      "t_iv": cmp.iv.audit(), "t_prod": cmp.prod.audit()})
    return rows, audit


def write_rows(rows: list[dict], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else [])
        w.writeheader()
        w.writerows(rows)
    return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def run_report(dataset: Dataset, spec: ReportSpec, out_dir: Union[str, Path],
               fmt: str = "both") -> dict:
    """Write slope, ratio and comparison tables plus a JSON audit.

    Slopes are reported for every series named in ``spec.pairs`` (all series
    when no pairs are given). Returns the written paths and the row lists.
    """
    if fmt not in ("csv", "json", "both"):
        raise InvalidInputError(f"format must be csv, json or both, got {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for num, den in spec.pairs:
        dataset.get(num)
        dataset.get(den)
    labels = list(dict.fromkeys(l for p in spec.pairs for l in p)) or dataset.labels

    slopes, a_slopes = slope_table(dataset, spec, labels)
    ratios, a_ratios = ratio_table(dataset, spec)
    diffs, a_diffs = comparison_table(dataset, spec)
    tables = {"slopes": slopes, "ratios": ratios, "comparisons": diffs}

    paths = {}
    if fmt in ("csv", "both"):
        for name, rows in tables.items():
            paths[name] = write_rows(rows, out / f"{name}.csv")
    summary = {
        "dataset": {"source": dataset.source, "T": dataset.T, "start": dataset.start,
                    "step": dataset.step, "series": dataset.labels},
        "settings": spec.settings(),
        "slopes": a_slopes,
        "ratios": a_ratios,
        "comparisons": a_diffs,
    }
    if fmt in ("json", "both"):
        summary["tables"] = tables
    path = out / "report.json"
    path.write_text(json.dumps(summary, indent=2, default=_json_default))
    paths["audit"] = path
    return {"paths": paths, "tables": tables, "audit": summary}
