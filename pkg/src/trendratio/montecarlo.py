"""Simulation of trending pairs with AR(1) noise and size/power experiments.

Each replication draws its own innovations from ``default_rng([seed, rep])``,
so results do not depend on how replications are split into blocks or spread
over worker threads. Within a replication the same noise is reused for every
slope configuration and bandwidth rule (common random numbers).
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy.signal import lfilter

from .errors import InvalidInputError
from .fixedb import CvCache, SimulationConfig, critical_value
from .kernels import (
    AndrewsAR1,
    BandwidthRule,
    FixedFraction,
    Kernel,
    andrews_bandwidth_batch,
    lrv_batch,
    parse_bandwidth,
    parse_kernel,
)
from .series import PairSystem, TrendPair, centered_time, trend_sum_squares

__all__ = [
    "DgpSpec",
    "SlopeConfig",
    "ExperimentSpec",
    "RejectionRow",
    "simulate_noise",
    "simulate_system",
    "rejection_table",
    "power_curve",
    "load_experiment",
    "write_rows_csv",
    "SERIAL_AR",
    "SERIAL_CORR",
]

logger = logging.getLogger(__name__)

SERIAL_AR = (0.3, 0.7, 0.5, 0.9)
SERIAL_CORR = 0.5
STATISTICS = ("t_iv", "t_prod")


@dataclass(frozen=True)
class DgpSpec:
    """Two pairs of trending series with AR(1) noise and zero intercepts.

    ``ar_coeffs`` and ``slopes`` are ordered (numerator 1, denominator 1,
    numerator 2, denominator 2).
    """

    T: int
    ar_coeffs: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    within_pair_corr: float = 0.0
    slopes: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        if int(self.T) != self.T or self.T < 8:
            raise InvalidInputError(f"T must be an integer >= 8, got {self.T}")
        ar = tuple(float(a) for a in self.ar_coeffs)
        slopes = tuple(float(s) for s in self.slopes)
        if len(ar) != 4 or len(slopes) != 4:
            raise InvalidInputError("ar_coeffs and slopes need four entries each")
        if any(abs(a) >= 1 for a in ar):
            raise InvalidInputError(f"AR coefficients must lie in (-1, 1), got {ar}")
        if abs(self.within_pair_corr) >= 1:
            raise InvalidInputError(f"within-pair correlation must lie in (-1, 1), got {self.within_pair_corr}")
        object.__setattr__(self, "T", int(self.T))
        object.__setattr__(self, "ar_coeffs", ar)
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "within_pair_corr", float(self.within_pair_corr))

    @classmethod
    def iid(cls, T: int, slopes=(1.0, 1.0, 1.0, 1.0)) -> "DgpSpec":
        return cls(T, (0.0, 0.0, 0.0, 0.0), 0.0, slopes)

    @classmethod
    def serial(cls, T: int, slopes=(1.0, 1.0, 1.0, 1.0)) -> "DgpSpec":
        return cls(T, SERIAL_AR, SERIAL_CORR, slopes)


@dataclass(frozen=True)
class SlopeConfig:
    """Denominator slopes and ratios; numerator slope is theta * beta2."""

    beta2_1: float
    theta_1: float
    beta2_2: float
    theta_2: float

    def slopes(self) -> tuple[float, float, float, float]:
        return (self.theta_1 * self.beta2_1, self.beta2_1, self.theta_2 * self.beta2_2, self.beta2_2)

    def label(self) -> dict:
        # a zero denominator slope has an undefined ratio
        return {
            "beta2_1": self.beta2_1,
            "theta_1": self.theta_1 if self.beta2_1 != 0 else "na",
            "beta2_2": self.beta2_2,
            "theta_2": self.theta_2 if self.beta2_2 != 0 else "na",
        }


@dataclass(frozen=True)
class ExperimentSpec:
    """A grid of slope configurations and bandwidth rules for one noise panel."""

    T: int
    configs: tuple[SlopeConfig, ...]
    bandwidths: tuple[BandwidthRule, ...] = (AndrewsAR1(), FixedFraction(0.25), FixedFraction(0.5),
                                            FixedFraction(1.0))
    ar_coeffs: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    within_pair_corr: float = 0.0
    kernel: Kernel = Kernel.DANIELL
    level: float = 0.05
    replications: int = 10_000
    seed: int = 12345
    block_size: int = 500
    workers: int = 1
    cv_sim: SimulationConfig = field(default_factory=SimulationConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "configs", tuple(self.configs))
        object.__setattr__(self, "bandwidths", tuple(parse_bandwidth(b) for b in self.bandwidths))
        object.__setattr__(self, "kernel", parse_kernel(self.kernel))
        if self.replications < 1:
            raise InvalidInputError("replications must be positive")
        if self.replications < 1000:
            logger.warning("only %d replications; reported frequencies are noisy", self.replications)
        if not (0.0 < self.level <= 1.0):
            raise InvalidInputError(f"level must lie in (0, 1], got {self.level}")
        if not self.configs:
            raise InvalidInputError("experiment has no slope configurations")
        # validates T and the noise panel
        self.dgp(self.configs[0])

    def dgp(self, config: SlopeConfig) -> DgpSpec:
        return DgpSpec(self.T, self.ar_coeffs, self.within_pair_corr, config.slopes())


@dataclass(frozen=True)
class RejectionRow:
    T: int
    config: SlopeConfig
    bandwidth: str
    statistic: str
    rejections: int
    replications: int

    @property
    def frequency(self) -> float:
        return self.rejections / self.replications

    @property
    def std_error(self) -> float:
        p = self.frequency
        return math.sqrt(p * (1 - p) / self.replications)

    def as_dict(self) -> dict:
        return {
            "T": self.T,
            **self.config.label(),
            "bandwidth": self.bandwidth,
            "statistic": self.statistic,
            "rejections": self.rejections,
            "replications": self.replications,
            "frequency": self.frequency,
            "std_error": self.std_error,
        }


def bandwidth_name(rule: BandwidthRule) -> str:
    return "A91" if isinstance(rule, AndrewsAR1) else f"{rule.b:g}"


# ---------------------------------------------------------------------------
# data generation

def _innovations(rng: np.random.Generator, T: int, corr: float) -> np.ndarray:
    z = rng.standard_normal((T, 4))
    eps = z.copy()
    s = math.sqrt(1.0 - corr * corr)
    eps[:, 1] = corr * z[:, 0] + s * z[:, 1]
    eps[:, 3] = corr * z[:, 2] + s * z[:, 3]
    return eps


def simulate_noise(T: int, ar_coeffs, corr: float, seed: int, reps: Sequence[int]) -> np.ndarray:
    """AR(1) noise of shape (len(reps), T, 4) with zero initial conditions."""
    eps = np.stack([_innovations(np.random.default_rng([seed, int(r)]), T, corr) for r in reps])
    u = np.empty_like(eps)
    for c, phi in enumerate(ar_coeffs):
        # u_t = phi u_{t-1} + eps_t with u_0 = 0
        u[:, :, c] = lfilter([1.0], [1.0, -phi], eps[:, :, c], axis=1)
    return u


def _add_trends(u: np.ndarray, slopes) -> np.ndarray:
    t = np.arange(1, u.shape[1] + 1, dtype=float)
    return u + t[None, :, None] * np.asarray(slopes, dtype=float)[None, None, :]


def simulate_system(dgp: DgpSpec, seed: int, rep: int = 0) -> PairSystem:
    """One draw of the two-pair system for replication ``rep``."""
    u = simulate_noise(dgp.T, dgp.ar_coeffs, dgp.within_pair_corr, seed, [rep])
    y = _add_trends(u, dgp.slopes)[0]
    return PairSystem((
        TrendPair.from_arrays(y[:, 0], y[:, 1], "pair1"),
        TrendPair.from_arrays(y[:, 2], y[:, 3], "pair2"),
    ))


# ---------------------------------------------------------------------------
# vectorized statistics

def _batch_stats(y: np.ndarray, kernel: Kernel, rule: BandwidthRule):
    """t_IV (R = [1, -1]) and t_prod for a stack of systems of shape (R, T, 4).

    Returns the two statistics and the b ratios each one used.
    """
    R, T, _ = y.shape
    tc = centered_time(T)[None, :, None]
    stt = trend_sum_squares(T)
    d = y - y.mean(axis=1, keepdims=True)
    sums = np.sum(tc * d, axis=1)
    slopes = sums / stt
    resid = d - slopes[:, None, :] * tc

    with np.errstate(divide="ignore", invalid="ignore"):
        theta = sums[:, [0, 2]] / sums[:, [1, 3]]
        eps = d[:, :, [0, 2]] - theta[:, None, :] * d[:, :, [1, 3]]

    if isinstance(rule, FixedFraction):
        M_iv = np.full(R, rule.b * T)
    else:
        M_iv = andrews_bandwidth_batch(eps / sums[:, None, [1, 3]], kernel)
    om = lrv_batch(eps, kernel, M_iv)
    D1, D2 = sums[:, 1], sums[:, 3]
    with np.errstate(divide="ignore", invalid="ignore"):
        v = stt * (om[:, 0, 0] / D1**2 + om[:, 1, 1] / D2**2 - 2 * om[:, 0, 1] / (D1 * D2))
        t_iv = (theta[:, 0] - theta[:, 1]) / np.sqrt(v)

    U = resid[:, :, [0, 2, 1, 3]]
    s = slopes
    Rb = np.stack([s[:, 3], -s[:, 1], -s[:, 2], s[:, 0]], axis=1)
    g = s[:, 3] * s[:, 0] - s[:, 1] * s[:, 2]
    # lambda_g^2 = R_beta Omega_u R_beta' is the LRV of the scalar U_t R_beta'
    v = np.einsum("rti,ri->rt", U, Rb)[:, :, None]
    if isinstance(rule, FixedFraction):
        M_u = M_iv
    else:
        M_u = andrews_bandwidth_batch(v, kernel)
    lam = lrv_batch(v, kernel, M_u)[:, 0, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_prod = g / np.sqrt(lam / stt)
    return {"t_iv": (t_iv, M_iv / T), "t_prod": (t_prod, M_u / T)}


class _CvLookup:
    """Critical values for arrays of b ratios.

    The polynomial case is evaluated per replication. Simulated critical values
    are looked up on b rounded to 0.01, which keeps the number of distinct
    simulations small when the plug-in bandwidth varies by replication.
    """

    def __init__(self, kernel: Kernel, level: float, sim: SimulationConfig, cache: Optional[CvCache]):
        self.kernel, self.level, self.sim, self.cache = kernel, level, sim, cache
        self._memo: dict[float, float] = {}

    def __call__(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if self.level >= 1.0:
            return np.zeros_like(b)
        if self.kernel is Kernel.DANIELL and abs(self.level - 0.05) < 1e-12:
            from .fixedb import DANIELL_0025_COEFS
            return np.polynomial.polynomial.polyval(b, DANIELL_0025_COEFS)
        keys = np.clip(np.round(b, 2), 0.01, 1.0)
        out = np.empty_like(b)
        for k in np.unique(keys):
            k = float(k)
            if k not in self._memo:
                self._memo[k] = critical_value(self.kernel, k, self.level, 1, "t", self.sim, self.cache).value
            out[keys == k] = self._memo[k]
        return out


def _count_block(spec: ExperimentSpec, reps: range, cv: _CvLookup) -> np.ndarray:
    """Rejection counts of shape (configs, bandwidths, statistics) for one block."""
    u = simulate_noise(spec.T, spec.ar_coeffs, spec.within_pair_corr, spec.seed, reps)
    counts = np.zeros((len(spec.configs), len(spec.bandwidths), len(STATISTICS)), dtype=np.int64)
    for i, config in enumerate(spec.configs):
        y = _add_trends(u, config.slopes())
        for j, rule in enumerate(spec.bandwidths):
            stats = _batch_stats(y, spec.kernel, rule)
            for k, name in enumerate(STATISTICS):
                stat, b = stats[name]
                # ties and undefined statistics do not reject
                with np.errstate(invalid="ignore"):
                    counts[i, j, k] = int(np.sum(np.abs(stat) > cv(b)))
    return counts


def _run(spec: ExperimentSpec, cache: Optional[CvCache]) -> list[RejectionRow]:
    cv = _CvLookup(spec.kernel, spec.level, spec.cv_sim, cache)
    if not (spec.kernel is Kernel.DANIELL and abs(spec.level - 0.05) < 1e-12) and spec.level < 1.0:
        # fill fixed-b values up front so worker threads only read the memo
        for rule in spec.bandwidths:
            if isinstance(rule, FixedFraction):
                cv(np.array([rule.b]))
    blocks = [range(s, min(s + spec.block_size, spec.replications))
              for s in range(0, spec.replications, spec.block_size)]
    if spec.workers > 1:
        with ThreadPoolExecutor(spec.workers) as pool:
            parts = list(pool.map(lambda r: _count_block(spec, r, cv), blocks))
    else:
        parts = [_count_block(spec, r, cv) for r in blocks]
    total = np.sum(parts, axis=0)

    rows = []
    for i, config in enumerate(spec.configs):
        for j, rule in enumerate(spec.bandwidths):
            for k, name in enumerate(STATISTICS):
                rows.append(RejectionRow(spec.T, config, bandwidth_name(rule), name,
                                         int(total[i, j, k]), spec.replications))
    return rows


def rejection_table(spec: ExperimentSpec, cache: Optional[CvCache] = None) -> list[RejectionRow]:
    """Two-sided rejection frequencies of t_IV and t_prod for H0: theta1 = theta2."""
    return _run(spec, cache)


def power_curve(spec: ExperimentSpec, theta2_grid: Optional[Iterable[float]] = None,
                cache: Optional[CvCache] = None) -> list[RejectionRow]:
    """Rejection frequencies over a grid of theta2 with theta1 = 1.

    With ``theta2_grid`` given, each configuration of ``spec`` is expanded over
    the grid (its own theta_2 is replaced). Power is not size-adjusted.
    """
    if theta2_grid is not None:
        grid = [float(x) for x in theta2_grid]
        configs = tuple(SlopeConfig(c.beta2_1, c.theta_1, c.beta2_2, th)
                        for c in spec.configs for th in grid)
        spec = ExperimentSpec(**{**_spec_fields(spec), "configs": configs})
    return _run(spec, cache)


def _spec_fields(spec: ExperimentSpec) -> dict:
    return {f: getattr(spec, f) for f in spec.__dataclass_fields__}


# ---------------------------------------------------------------------------
# config and output

def load_experiment(path: Union[str, Path]) -> tuple[str, ExperimentSpec, Optional[list[float]]]:
    """Read an experiment from JSON.

    Keys: ``kind`` ("null" or "power"), ``T``, ``panel`` ("iid", "serial" or
    an object with ``ar_coeffs`` and ``within_pair_corr``), ``configs`` (list of
    [beta2_1, theta_1, beta2_2, theta_2]), optional ``theta2_grid``,
    ``bandwidths``, ``kernel``, ``level``, ``replications``, ``seed``,
    ``workers``.
    """
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read experiment config {path}: {exc}") from exc
    return experiment_from_dict(raw)


def experiment_from_dict(raw: dict) -> tuple[str, ExperimentSpec, Optional[list[float]]]:
    kind = raw.get("kind", "null")
    if kind not in ("null", "power"):
        raise InvalidInputError(f"kind must be 'null' or 'power', got {kind!r}")
    panel = raw.get("panel", "iid")
    if panel == "iid":
        ar, corr = (0.0,) * 4, 0.0
    elif panel == "serial":
        ar, corr = SERIAL_AR, SERIAL_CORR
    elif isinstance(panel, dict):
        ar, corr = tuple(panel["ar_coeffs"]), float(panel.get("within_pair_corr", 0.0))
    else:
        raise InvalidInputError(f"unknown panel {panel!r}")
    try:
        configs = tuple(SlopeConfig(*map(float, c)) for c in raw["configs"])
        kwargs = dict(T=int(raw["T"]), configs=configs, ar_coeffs=ar, within_pair_corr=corr)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed experiment config: {exc}") from exc
    for key in ("kernel", "level", "replications", "seed", "workers", "block_size"):
        if key in raw:
            kwargs[key] = raw[key]
    if "bandwidths" in raw:
        kwargs["bandwidths"] = tuple(raw["bandwidths"])
    grid = raw.get("theta2_grid")
    return kind, ExperimentSpec(**kwargs), grid


def write_rows_csv(rows: Sequence[RejectionRow], path: Union[str, Path]) -> Path:
    """Long-format CSV, one line per (configuration, bandwidth, statistic)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dicts = [r.as_dict() for r in rows]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(dicts[0]) if dicts else [])
        writer.writeheader()
        writer.writerows(dicts)
    return path


def spec_audit(spec: ExperimentSpec) -> dict:
    d = _spec_fields(spec)
    d["configs"] = [asdict(c) for c in spec.configs]
    d["bandwidths"] = [bandwidth_name(b) for b in spec.bandwidths]
    d["kernel"] = spec.kernel.value
    d["cv_sim"] = asdict(spec.cv_sim)
    return d
