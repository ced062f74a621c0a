"""Tests and confidence sets for trend-slope ratios.

``wald_iv`` and ``t_iv`` test linear restrictions R theta = r on the IV
ratio estimates. ``t_prod`` tests equality of two ratios through the product
restriction b2(2) b1(1) - b2(1) b1(2) = 0, which avoids dividing by small
slopes. ``fieller_ci`` inverts the linear-in-slopes test for a single ratio.
All variances are kernel long-run variances with fixed-b critical values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import InvalidInputError, NumericalSingularityError
from .fixedb import CriticalValue, CvCache, CvSource, SimulationConfig, critical_value
from .kernels import (
    BandwidthRule,
    Kernel,
    LrvEstimate,
    lrv,
    parse_bandwidth,
    parse_kernel,
    resolve_bandwidth,
)
from .series import (
    PairSystem,
    RatioFit,
    TrendPair,
    TrendSeries,
    detrend,
    iv_system,
    trend_sum_squares,
)

__all__ = [
    "LinearHypothesis",
    "ConfidenceSet",
    "TestResult",
    "IntervalResult",
    "ProductStat",
    "RatioComparison",
    "CvOptions",
    "wald_iv",
    "t_iv",
    "product_stat",
    "t_prod",
    "fieller_ci",
    "slope_ci",
    "ratio_diff_report",
]

FLAG_DEGENERATE_DENOM = "degenerate-denominator"
FLAG_ZERO_VARIANCE = "zero-variance"
# variance below this multiple of the residual scale counts as exactly zero
ZERO_VAR_RTOL = 1e-20


@dataclass(frozen=True)
class CvOptions:
    """How to obtain critical values that are not covered by the polynomial."""

    sim: SimulationConfig = field(default_factory=SimulationConfig)
    cache: Optional[CvCache] = None


@dataclass(frozen=True)
class LinearHypothesis:
    """H0: R theta = r with R of full row rank q."""

    R: np.ndarray
    r: np.ndarray

    def __post_init__(self) -> None:
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        r = np.atleast_1d(np.asarray(self.r, dtype=float))
        if r.shape != (R.shape[0],):
            raise InvalidInputError(f"r has shape {r.shape}, expected ({R.shape[0]},)")
        if R.shape[0] > R.shape[1]:
            raise InvalidInputError(f"q = {R.shape[0]} restrictions exceed n = {R.shape[1]}")
        sv = np.linalg.svd(R, compute_uv=False)
        if sv.size == 0 or sv[-1] <= 1e-10 * sv[0]:
            raise InvalidInputError("R does not have full row rank")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "r", r)

    @property
    def q(self) -> int:
        return self.R.shape[0]

    @property
    def n(self) -> int:
        return self.R.shape[1]

    @classmethod
    def equal_ratios(cls, n: int = 2, i: int = 0, j: int = 1) -> "LinearHypothesis":
        R = np.zeros((1, n))
        R[0, i], R[0, j] = 1.0, -1.0
        return cls(R, [0.0])

    @classmethod
    def single(cls, value: float) -> "LinearHypothesis":
        """theta = value for a one-pair system."""
        return cls([[1.0]], [value])


@dataclass(frozen=True)
class ConfidenceSet:
    """A confidence set on the real line.

    ``kind`` is one of ``interval`` ([lower, upper], endpoints may be infinite
    for a half-line), ``rays`` ((-inf, lower] union [upper, inf)),
    ``whole-line`` or ``empty``.
    """

    kind: str
    lower: float = math.nan
    upper: float = math.nan

    def __post_init__(self) -> None:
        if self.kind not in ("interval", "rays", "whole-line", "empty"):
            raise InvalidInputError(f"unknown confidence set kind {self.kind!r}")
        object.__setattr__(self, "lower", float(self.lower))
        object.__setattr__(self, "upper", float(self.upper))

    def contains(self, x):
        """Membership test; ``x`` may be a scalar or an array."""
        x = np.asarray(x, dtype=float)
        if self.kind == "whole-line":
            out = np.ones(x.shape, dtype=bool)
        elif self.kind == "empty":
            out = np.zeros(x.shape, dtype=bool)
        elif self.kind == "interval":
            out = (self.lower <= x) & (x <= self.upper)
        else:
            out = (x <= self.lower) | (x >= self.upper)
        return bool(out) if out.ndim == 0 else out

    def scaled(self, c: float) -> "ConfidenceSet":
        if c <= 0:
            raise InvalidInputError("scale must be positive")
        return ConfidenceSet(self.kind, self.lower * c, self.upper * c)

    def as_dict(self) -> dict:
        return {"kind": self.kind, "lower": self.lower, "upper": self.upper}


@dataclass(frozen=True)
class TestResult:
    name: str
    statistic: float
    critical_value: CriticalValue
    reject: bool
    estimate: np.ndarray
    std_error: Optional[float]
    confidence_set: Optional[ConfidenceSet]
    variance: LrvEstimate
    flags: tuple[str, ...] = ()

    __test__ = False  # keep pytest from collecting this class

    def audit(self) -> dict:
        return {
            "test": self.name,
            "statistic": self.statistic,
            "reject": self.reject,
            "estimate": [float(x) for x in np.atleast_1d(self.estimate)],
            "std_error": self.std_error,
            "confidence_set": self.confidence_set.as_dict() if self.confidence_set else None,
            "kernel": self.variance.kernel.value,
            "bandwidth_M": self.variance.bandwidth_M,
            "b": self.variance.b_ratio,
            "critical_value": self.critical_value.as_dict(),
            "flags": list(self.flags),
        }


@dataclass(frozen=True)
class IntervalResult:
    """Point estimate with a fixed-b confidence set (slopes and single ratios)."""

    estimate: float
    confidence_set: ConfidenceSet
    critical_value: CriticalValue
    variance: LrvEstimate
    std_error: Optional[float] = None
    flags: tuple[str, ...] = ()

    def audit(self) -> dict:
        return {
            "estimate": self.estimate,
            "std_error": self.std_error,
            "confidence_set": self.confidence_set.as_dict(),
            "kernel": self.variance.kernel.value,
            "bandwidth_M": self.variance.bandwidth_M,
            "b": self.variance.b_ratio,
            "critical_value": self.critical_value.as_dict(),
            "flags": list(self.flags),
        }


@dataclass(frozen=True)
class ProductStat:
    g_hat: float
    R_beta_hat: np.ndarray
    lambda_g_sq: float
    variance: LrvEstimate
    # mean square of residuals plus fitted trends, the reference for zero variance
    data_scale: float = 0.0


@dataclass(frozen=True)
class RatioComparison:
    """Ratio difference (IV) and product difference for two pairs."""

    iv: TestResult
    prod: TestResult
    g_display_scale: float = 1e4

    @property
    def delta_theta(self) -> float:
        return float(self.iv.estimate[0])

    @property
    def g_hat(self) -> float:
        return float(self.prod.estimate[0])


def _cv(kernel: Kernel, b: float, level: float, q: int, form: str,
        cv_options: Optional[CvOptions]) -> CriticalValue:
    opts = cv_options or CvOptions()
    return critical_value(kernel, b, level, q, form, opts.sim, opts.cache)


def _variance_for(residuals: np.ndarray, kernel: Kernel, bandwidth: BandwidthRule,
                  plugin_input: Optional[np.ndarray] = None) -> LrvEstimate:
    src = residuals if plugin_input is None else plugin_input
    M = resolve_bandwidth(bandwidth, src, kernel)
    return lrv(residuals, kernel, M)


def _trend_energy(slopes, T: int) -> float:
    """Mean square of the fitted trend components; sets the scale of roundoff."""
    return float(np.sum(np.square(slopes)) * trend_sum_squares(T) / T)


def _is_zero_matrix(a: np.ndarray, scale: float) -> bool:
    return bool(np.max(np.abs(a)) <= ZERO_VAR_RTOL * max(scale, 1e-300))


def _zero_variance_stat(numer: float, scale: float) -> float:
    if abs(numer) <= 1e-12 * max(scale, 1.0):
        return 0.0
    return math.copysign(math.inf, numer)


# ---------------------------------------------------------------------------
# IV tests

def _iv_core(fit: RatioFit, hyp: LinearHypothesis, kernel: Kernel, bandwidth: BandwidthRule):
    if hyp.n != fit.n:
        raise InvalidInputError(f"hypothesis has {hyp.n} columns but the fit has {fit.n} pairs")
    flags = []
    touched = np.any(hyp.R != 0, axis=0)
    if np.any(fit.degenerate & touched):
        flags.append(FLAG_DEGENERATE_DENOM)

    theta = fit.theta_hat
    cols = np.arange(fit.n)
    # pairs with an exactly zero denominator cannot enter the variance
    finite = np.all(np.isfinite(fit.iv_residuals), axis=0) & np.isfinite(theta)
    if not np.all(finite[touched]):
        return None, flags
    if not np.all(finite):
        cols = np.flatnonzero(finite)
    R = hyp.R[:, cols]
    resid = fit.iv_residuals[:, cols]
    d2 = fit.denom_sums[cols]

    dinv = 1.0 / d2
    # plug-in on eps/D keeps the bandwidth invariant to rescaling a pair
    var = _variance_for(resid, kernel, bandwidth, resid * dinv)
    stt = trend_sum_squares(fit.T)
    V = stt * var.omega * np.outer(dinv, dinv)
    RVR = R @ V @ R.T
    RVR = 0.5 * (RVR + RVR.T)
    diff = R @ theta[cols] - hyp.r
    signal = _trend_energy(np.concatenate([fit.slopes_num[cols], theta[cols] * fit.slopes_den[cols]]), fit.T)
    return (diff, RVR, var, float(np.mean(resid**2)) + signal), flags


def _nan_result(name, hyp, fit, kernel, level, q, form, flags):
    """Result for a restriction touching a pair with a zero denominator."""
    var = LrvEstimate(np.full((fit.n, fit.n), np.nan), math.nan, math.nan, kernel)
    cv = CriticalValue(math.nan, level, math.nan, kernel, q, CvSource.EXACT, form)
    with np.errstate(invalid="ignore"):
        est = hyp.R @ fit.theta_hat - hyp.r
    return TestResult(name, math.nan, cv, False, est, None, None, var, tuple(flags))


def wald_iv(fit: Union[RatioFit, PairSystem], hyp: LinearHypothesis,
            kernel: Union[str, Kernel] = "daniell", bandwidth="a91", level: float = 0.05,
            cv_options: Optional[CvOptions] = None) -> TestResult:
    """Wald test of R theta = r using the IV estimates and a kernel variance."""
    if isinstance(fit, PairSystem):
        fit = iv_system(fit)
    kernel = parse_kernel(kernel)
    bandwidth = parse_bandwidth(bandwidth)
    core, flags = _iv_core(fit, hyp, kernel, bandwidth)
    if core is None:
        return _nan_result("wald_iv", hyp, fit, kernel, level, hyp.q, "wald", flags)
    diff, RVR, var, resid_scale = core
    cv = _cv(kernel, var.b_ratio, level, hyp.q, "wald", cv_options)

    if _is_zero_matrix(var.omega, resid_scale) or resid_scale == 0.0:
        flags.append(FLAG_ZERO_VARIANCE)
        stat = abs(_zero_variance_stat(float(np.max(np.abs(diff))), float(np.max(np.abs(hyp.r), initial=1.0))))
    else:
        evals, evecs = np.linalg.eigh(RVR)
        if evals[0] <= 1e-12 * max(evals[-1], 0.0) or evals[0] <= 0.0:
            worst = int(np.argmax(np.abs(evecs[:, 0])))
            raise NumericalSingularityError(
                f"R V R' is singular; restriction {worst} (row {hyp.R[worst].tolist()}) "
                f"has no estimated variance"
            )
        stat = float(diff @ np.linalg.solve(RVR, diff))
    return TestResult("wald_iv", stat, cv, bool(stat > cv.value), diff, None, None, var, tuple(flags))


def t_iv(fit: Union[RatioFit, PairSystem], hyp: LinearHypothesis,
         kernel: Union[str, Kernel] = "daniell", bandwidth="a91", level: float = 0.05,
         cv_options: Optional[CvOptions] = None) -> TestResult:
    """Two-sided t test of a single restriction; also returns R theta_hat +/- cv se."""
    if isinstance(fit, PairSystem):
        fit = iv_system(fit)
    if hyp.q != 1:
        raise InvalidInputError(f"t_iv needs a single restriction, got q = {hyp.q}")
    kernel = parse_kernel(kernel)
    bandwidth = parse_bandwidth(bandwidth)
    core, flags = _iv_core(fit, hyp, kernel, bandwidth)
    if core is None:
        return _nan_result("t_iv", hyp, fit, kernel, level, 1, "t", flags)
    diff, RVR, var, resid_scale = core
    cv = _cv(kernel, var.b_ratio, level, 1, "t", cv_options)
    point = float(diff[0] + hyp.r[0])
    v = float(RVR[0, 0])

    if _is_zero_matrix(var.omega, resid_scale) or resid_scale == 0.0 or v <= 0.0:
        if v < 0.0:
            raise NumericalSingularityError(f"negative variance {v} for restriction {hyp.R[0].tolist()}")
        flags.append(FLAG_ZERO_VARIANCE)
        stat = _zero_variance_stat(float(diff[0]), max(abs(point), 1.0))
        se = 0.0
    else:
        se = math.sqrt(v)
        stat = float(diff[0]) / se
    ci = ConfidenceSet("interval", point - cv.value * se, point + cv.value * se)
    return TestResult("t_iv", stat, cv, bool(abs(stat) > cv.value), np.array([point]), se, ci, var,
                      tuple(flags))


# ---------------------------------------------------------------------------
# product approach

def _pair_slopes(pair: TrendPair):
    y = np.column_stack([pair.numerator.values, pair.denominator.values])
    _, slopes, resid = detrend(y)
    return slopes, resid


def product_stat(pair1: TrendPair, pair2: TrendPair, kernel: Union[str, Kernel] = "daniell",
                 bandwidth="a91") -> ProductStat:
    """g_hat, R_beta_hat and lambda_g^2 for two pairs.

    With the plug-in rule the bandwidth is chosen from U_t R_beta_hat', the
    series whose long-run variance is lambda_g^2. Residual columns are ordered [u1(1), u1(2), u2(1), u2(2)] to match
    R_beta_hat = [b2(2), -b2(1), -b1(2), b1(1)].
    """
    if pair1.T != pair2.T:
        raise InvalidInputError(f"pairs have different lengths {pair1.T} and {pair2.T}")
    kernel = parse_kernel(kernel)
    (b11, b21), u1 = _pair_slopes(pair1)
    (b12, b22), u2 = _pair_slopes(pair2)
    U = np.column_stack([u1[:, 0], u2[:, 0], u1[:, 1], u2[:, 1]])
    R_beta = np.array([b22, -b21, -b12, b11])
    # lambda_g^2 is the long-run variance of the scalar series U_t R_beta', so
    # the plug-in bandwidth is fitted to that series
    M = resolve_bandwidth(parse_bandwidth(bandwidth), U @ R_beta, kernel)
    var = lrv(U, kernel, M)
    g = b22 * b11 - b21 * b12
    lam = float(R_beta @ var.omega @ R_beta)
    return ProductStat(float(g), R_beta, lam, var, float(np.mean(U**2)) + _trend_energy(R_beta, pair1.T))


def t_prod(pair1: TrendPair, pair2: TrendPair, kernel: Union[str, Kernel] = "daniell",
           bandwidth="a91", level: float = 0.05,
           cv_options: Optional[CvOptions] = None) -> TestResult:
    """t test of equal ratios via g = b2(2) b1(1) - b2(1) b1(2) = 0; CI is for g."""
    kernel = parse_kernel(kernel)
    ps = product_stat(pair1, pair2, kernel, bandwidth)
    cv = _cv(kernel, ps.variance.b_ratio, level, 1, "t", cv_options)
    stt = trend_sum_squares(pair1.T)
    flags = []
    scale = float(np.sum(ps.R_beta_hat**2) * ps.data_scale)
    if ps.lambda_g_sq < 0.0 and abs(ps.lambda_g_sq) > 1e-12 * max(scale, 1e-300):
        raise NumericalSingularityError(f"negative product variance {ps.lambda_g_sq}")
    if ps.lambda_g_sq <= ZERO_VAR_RTOL * max(scale, 1e-300) or ps.lambda_g_sq <= 0.0:
        flags.append(FLAG_ZERO_VARIANCE)
        g_scale = float(np.max(np.abs(ps.R_beta_hat)) ** 2) if np.any(ps.R_beta_hat) else 1.0
        stat = _zero_variance_stat(ps.g_hat, g_scale)
        se = 0.0
    else:
        se = math.sqrt(ps.lambda_g_sq / stt)
        stat = ps.g_hat / se
    ci = ConfidenceSet("interval", ps.g_hat - cv.value * se, ps.g_hat + cv.value * se)
    return TestResult("t_prod", stat, cv, bool(abs(stat) > cv.value), np.array([ps.g_hat]), se, ci,
                      ps.variance, tuple(flags))


# ---------------------------------------------------------------------------
# confidence sets

def solve_fieller(b1: float, b2: float, omega: np.ndarray, cv: float, stt: float) -> ConfidenceSet:
    """{theta0 : (b1 - theta0 b2)^2 <= cv^2 v(theta0) / stt} in closed form.

    v(theta0) = [1, -theta0] omega [1, -theta0]'.
    """
    c = cv * cv / stt
    A = b2 * b2 - c * omega[1, 1]
    B = b1 * b2 - c * omega[0, 1]
    C = b1 * b1 - c * omega[0, 0]
    disc = B * B - A * C
    if A > 0.0:
        if disc < 0.0:
            return ConfidenceSet("empty")
        root = math.sqrt(disc)
        return ConfidenceSet("interval", (B - root) / A, (B + root) / A)
    if A < 0.0:
        if disc <= 0.0:
            return ConfidenceSet("whole-line")
        root = math.sqrt(disc)
        lo, hi = sorted(((B + root) / A, (B - root) / A))
        return ConfidenceSet("rays", lo, hi)
    # A == 0: -2 B theta0 + C <= 0
    if B > 0.0:
        return ConfidenceSet("interval", C / (2 * B), math.inf)
    if B < 0.0:
        return ConfidenceSet("interval", -math.inf, C / (2 * B))
    return ConfidenceSet("whole-line") if C <= 0.0 else ConfidenceSet("empty")


def fieller_ci(pair: TrendPair, level: float = 0.05, kernel: Union[str, Kernel] = "daniell",
               bandwidth="a91", cv_options: Optional[CvOptions] = None) -> IntervalResult:
    """Fieller confidence set for the trend ratio of one pair.

    The 2 x 2 long-run variance of the OLS trend residuals is computed once;
    it does not depend on the hypothesised ratio.
    """
    if pair.T < 8:
        raise InvalidInputError(f"Fieller interval needs T >= 8, got {pair.T}")
    kernel = parse_kernel(kernel)
    (b1, b2), u = _pair_slopes(pair)
    var = _variance_for(u, kernel, parse_bandwidth(bandwidth))
    cv = _cv(kernel, var.b_ratio, level, 1, "t", cv_options)
    stt = trend_sum_squares(pair.T)
    cs = solve_fieller(float(b1), float(b2), var.omega, cv.value, stt)
    flags = []
    if _is_zero_matrix(var.omega, float(np.mean(u**2)) + _trend_energy([b1, b2], pair.T)) or not np.any(u):
        flags.append(FLAG_ZERO_VARIANCE)
        # roundoff can make the quadratic empty; the set is the point estimate
        if b2 != 0.0:
            cs = ConfidenceSet("interval", b1 / b2, b1 / b2)
    with np.errstate(divide="ignore", invalid="ignore"):
        est = float(np.float64(b1) / np.float64(b2))
    return IntervalResult(est, cs, cv, var, None, tuple(flags))


def slope_ci(series: TrendSeries, level: float = 0.05, kernel: Union[str, Kernel] = "daniell",
             bandwidth="a91", per_decade_scale: float = 1.0,
             cv_options: Optional[CvOptions] = None) -> IntervalResult:
    """beta_hat +/- cv sqrt(omega / stt), multiplied by ``per_decade_scale`` for display."""
    if not isinstance(series, TrendSeries):
        series = TrendSeries(series)
    kernel = parse_kernel(kernel)
    _, beta, u = detrend(series.values)
    var = _variance_for(u, kernel, parse_bandwidth(bandwidth))
    cv = _cv(kernel, var.b_ratio, level, 1, "t", cv_options)
    stt = trend_sum_squares(series.T)
    omega = float(var.omega[0, 0])
    flags = []
    if omega <= ZERO_VAR_RTOL * max(float(np.mean(series.values**2)), 1e-300):
        flags.append(FLAG_ZERO_VARIANCE)
        omega = 0.0
    se = math.sqrt(omega / stt)
    s = per_decade_scale
    beta = float(beta)
    cs = ConfidenceSet("interval", (beta - cv.value * se) * s, (beta + cv.value * se) * s)
    return IntervalResult(beta * s, cs, cv, var, se * s, tuple(flags))


def ratio_diff_report(pair1: TrendPair, pair2: TrendPair, level: float = 0.05,
                      kernel: Union[str, Kernel] = "daniell", bandwidth="a91",
                      cv_options: Optional[CvOptions] = None) -> RatioComparison:
    """Equal-ratio comparison of two pairs by t_iv (R = [1, -1]) and t_prod."""
    system = PairSystem((pair1, pair2))
    fit = iv_system(system)
    iv = t_iv(fit, LinearHypothesis.equal_ratios(2), kernel, bandwidth, level, cv_options)
    prod = t_prod(pair1, pair2, kernel, bandwidth, level, cv_options)
    return RatioComparison(iv, prod)
