"""Trending pair systems, OLS trend fits and the IV trend-ratio estimator.

Every series is indexed by t = 1, ..., T. Calendar labels are carried only as
presentation metadata by the I/O layer.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "TrendSeries",
    "TrendPair",
    "PairSystem",
    "TrendFit",
    "RatioFit",
    "trend_sum_squares",
    "centered_time",
    "detrend",
    "ols_trend",
    "iv_system",
]

MIN_LENGTH = 4
# relative threshold on |sum (t - tbar)(y2 - y2bar)| below which a pair is degenerate
DEGENERACY_RTOL = 1e-12


def _frozen(a: np.ndarray, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TrendSeries:
    """A single series observed at t = 1, ..., T."""

    values: np.ndarray
    label: str = ""

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise InvalidInputError(f"series {self.label!r} must be one-dimensional")
        if values.shape[0] < MIN_LENGTH:
            raise InvalidInputError(
                f"series {self.label!r} has length {values.shape[0]}, need at least {MIN_LENGTH}"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidInputError(f"series {self.label!r} contains non-finite values")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def T(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class TrendPair:
    """Numerator and denominator series whose trend-slope ratio is of interest."""

    numerator: TrendSeries
    denominator: TrendSeries

    def __post_init__(self) -> None:
        if self.numerator.T != self.denominator.T:
            raise InvalidInputError(
                f"pair series lengths differ: {self.numerator.T} != {self.denominator.T}"
            )

    @classmethod
    def from_arrays(cls, y1, y2, label: str = "") -> "TrendPair":
        return cls(TrendSeries(y1, f"{label}:num"), TrendSeries(y2, f"{label}:den"))

    @property
    def T(self) -> int:
        return self.numerator.T

    @property
    def label(self) -> str:
        return f"{self.numerator.label}/{self.denominator.label}"


@dataclass(frozen=True)
class PairSystem:
    """An ordered collection of pairs sharing a common time index."""

    pairs: tuple[TrendPair, ...]

    def __post_init__(self) -> None:
        pairs = tuple(self.pairs)
        if not pairs:
            raise InvalidInputError("a pair system needs at least one pair")
        lengths = {p.T for p in pairs}
        if len(lengths) != 1:
            raise InvalidInputError(f"pairs have different lengths: {sorted(lengths)}")
        object.__setattr__(self, "pairs", pairs)

    @classmethod
    def from_arrays(cls, y1: np.ndarray, y2: np.ndarray,
                    labels: Sequence[str] | None = None) -> "PairSystem":
        """Build a system from T x n numerator and denominator matrices."""
        y1 = np.atleast_2d(np.asarray(y1, dtype=float).T).T
        y2 = np.atleast_2d(np.asarray(y2, dtype=float).T).T
        if y1.shape != y2.shape:
            raise InvalidInputError(f"shape mismatch {y1.shape} vs {y2.shape}")
        n = y1.shape[1]
        labels = list(labels) if labels is not None else [f"pair{i + 1}" for i in range(n)]
        return cls(tuple(TrendPair.from_arrays(y1[:, i], y2[:, i], labels[i]) for i in range(n)))

    @property
    def n(self) -> int:
        return len(self.pairs)

    @property
    def T(self) -> int:
        return self.pairs[0].T

    def numerators(self) -> np.ndarray:
        return np.column_stack([p.numerator.values for p in self.pairs])

    def denominators(self) -> np.ndarray:
        return np.column_stack([p.denominator.values for p in self.pairs])


@dataclass(frozen=True)
class TrendFit:
    intercept: float
    slope: float
    residuals: np.ndarray


@dataclass(frozen=True)
class RatioFit:
    """IV ratio estimates for every pair of a system.

    Attributes
    ----------
    theta_hat : ndarray
        Ratio estimates, one per pair. Non-finite where the denominator
        cross-product is exactly zero.
    denom_sums : ndarray
        Diagonal of the denominator matrix, sum (t - tbar)(y2 - y2bar).
    iv_residuals : ndarray
        T x n matrix of IV residuals.
    slopes_num, slopes_den : ndarray
        OLS trend slopes of the numerator and denominator series.
    degenerate : ndarray of bool
        Pairs whose denominator cross-product is numerically zero.
    """

    theta_hat: np.ndarray
    denom_sums: np.ndarray
    iv_residuals: np.ndarray
    slopes_num: np.ndarray
    slopes_den: np.ndarray
    degenerate: np.ndarray
    labels: tuple[str, ...] = field(default=())

    @property
    def n(self) -> int:
        return self.theta_hat.shape[0]

    @property
    def T(self) -> int:
        return self.iv_residuals.shape[0]


def trend_sum_squares(T: int) -> float:
    """Closed form of sum_{t=1}^T (t - tbar)^2."""
    if int(T) != T or T < 2:
        raise InvalidInputError(f"T must be an integer >= 2, got {T}")
    T = int(T)
    return T * (T * T - 1) / 12.0


def centered_time(T: int) -> np.ndarray:
    return np.arange(1, T + 1, dtype=float) - (T + 1) / 2.0


def detrend(y: np.ndarray):
    """OLS of each column of ``y`` on (1, t) along axis 0.

    Works for arrays of shape (T,) or (T, ...). Returns ``(intercept, slope,
    residuals)`` with the trailing shape of ``y``.
    """
    y = np.asarray(y, dtype=float)
    T = y.shape[0]
    tc = centered_time(T).reshape((T,) + (1,) * (y.ndim - 1))
    ybar = y.mean(axis=0)
    slope = np.sum(tc * (y - ybar), axis=0) / trend_sum_squares(T)
    intercept = ybar - slope * (T + 1) / 2.0
    resid = (y - ybar) - slope * tc
    return intercept, slope, resid


def ols_trend(series: TrendSeries) -> TrendFit:
    """Fit ``y_t = mu + beta t + u_t`` by least squares."""
    if not isinstance(series, TrendSeries):
        series = TrendSeries(series)
    intercept, slope, resid = detrend(series.values)
    return TrendFit(float(intercept), float(slope), _frozen(resid))


def iv_system(system: PairSystem) -> RatioFit:
    """IV estimates of the trend ratios using time as the instrument.

    A pair whose denominator cross-product is (numerically) zero is flagged
    rather than rejected; its estimate is whatever the ratio of cross-products
    evaluates to.
    """
    y1 = system.numerators()
    y2 = system.denominators()
    T = system.T
    tc = centered_time(T)[:, None]
    d1 = y1 - y1.mean(axis=0)
    d2 = y2 - y2.mean(axis=0)
    num_sums = np.sum(tc * d1, axis=0)
    denom_sums = np.sum(tc * d2, axis=0)
    stt = trend_sum_squares(T)

    scale = stt * np.std(y2, axis=0)
    degenerate = (denom_sums == 0) | (np.abs(denom_sums) < DEGENERACY_RTOL * scale)
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = num_sums / denom_sums
        resid = d1 - theta * d2

    return RatioFit(
        theta_hat=_frozen(theta),
        denom_sums=_frozen(denom_sums),
        iv_residuals=_frozen(resid),
        slopes_num=_frozen(num_sums / stt),
        slopes_den=_frozen(denom_sums / stt),
        degenerate=_frozen(degenerate, bool),
        labels=tuple(p.label for p in system.pairs),
    )
