"""Kernels, kernel long-run variance (HAC) estimation and bandwidth rules."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np
from scipy.special import roots_legendre

from .errors import InvalidInputError

__all__ = [
    "Kernel",
    "FixedbClass",
    "FixedFraction",
    "AndrewsAR1",
    "BandwidthRule",
    "LrvEstimate",
    "parse_kernel",
    "parse_bandwidth",
    "kernel_weight",
    "kernel_deriv",
    "kernel_second_deriv",
    "kernel_constants",
    "andrews_constant",
    "autocovariance",
    "lrv",
    "lrv_batch",
    "andrews_bandwidth",
    "resolve_bandwidth",
]


class FixedbClass(enum.Enum):
    TYPE1 = "Type1"
    TYPE2 = "Type2"
    BARTLETT = "BartlettClass"


class Kernel(enum.Enum):
    BARTLETT = "bartlett"
    PARZEN = "parzen"
    QS = "qs"
    DANIELL = "daniell"

    @property
    def fixedb_class(self) -> FixedbClass:
        if self is Kernel.BARTLETT:
            return FixedbClass.BARTLETT
        if self is Kernel.PARZEN:
            return FixedbClass.TYPE2
        return FixedbClass.TYPE1

    @property
    def char_exponent(self) -> int:
        """Characteristic exponent q used by the plug-in bandwidth."""
        return 1 if self is Kernel.BARTLETT else 2


_KERNEL_ALIASES = {
    "bartlett": Kernel.BARTLETT,
    "parzen": Kernel.PARZEN,
    "qs": Kernel.QS,
    "quadratic-spectral": Kernel.QS,
    "quadraticspectral": Kernel.QS,
    "daniell": Kernel.DANIELL,
}


def parse_kernel(kernel: Union[str, Kernel]) -> Kernel:
    if isinstance(kernel, Kernel):
        return kernel
    try:
        return _KERNEL_ALIASES[str(kernel).lower()]
    except KeyError:
        raise InvalidInputError(f"unknown kernel {kernel!r}") from None


@dataclass(frozen=True)
class FixedFraction:
    """Bandwidth M = b T for a fixed fraction b in (0, 1]."""

    b: float

    def __post_init__(self) -> None:
        if not (0.0 < self.b <= 1.0):
            raise InvalidInputError(f"bandwidth fraction must lie in (0, 1], got {self.b}")

    def __str__(self) -> str:
        return f"{self.b:g}"


@dataclass(frozen=True)
class AndrewsAR1:
    """AR(1) plug-in data-dependent bandwidth."""

    def __str__(self) -> str:
        return "a91"


BandwidthRule = Union[FixedFraction, AndrewsAR1]


def parse_bandwidth(rule: Union[str, float, FixedFraction, AndrewsAR1]) -> BandwidthRule:
    if isinstance(rule, (FixedFraction, AndrewsAR1)):
        return rule
    if isinstance(rule, str) and rule.strip().lower() in ("a91", "andrews", "ar1"):
        return AndrewsAR1()
    try:
        return FixedFraction(float(rule))
    except (TypeError, ValueError):
        raise InvalidInputError(f"bandwidth must be 'a91' or a fraction in (0, 1], got {rule!r}") from None


@dataclass(frozen=True)
class LrvEstimate:
    omega: np.ndarray
    bandwidth_M: float
    b_ratio: float
    kernel: Kernel


# ---------------------------------------------------------------------------
# kernel functions

# Taylor coefficients of sin(a)/a and 3(sin a - a cos a)/a^3 in powers of a^2,
# used near the origin where the closed forms cancel badly.
_N_SERIES = 12
_SINC_COEF = np.array([(-1) ** n / math.factorial(2 * n + 1) for n in range(_N_SERIES)])
_QS_COEF = np.array([3 * (-1) ** n * (2 * n + 2) / math.factorial(2 * n + 3)
                     for n in range(_N_SERIES)])
_SERIES_CUTOFF = 0.5
_QS_SCALE = 6.0 * np.pi / 5.0


def _even_series(coef: np.ndarray, a: np.ndarray, order: int) -> np.ndarray:
    """Evaluate the ``order``-th derivative of sum_n coef[n] a^(2n)."""
    out = np.zeros_like(a)
    for n in range(len(coef)):
        p = 2 * n
        if p < order:
            continue
        fac = 1.0
        for k in range(order):
            fac *= p - k
        out += coef[n] * fac * a ** (p - order)
    return out


def _sinc_derivs(a: np.ndarray, order: int) -> np.ndarray:
    small = np.abs(a) < _SERIES_CUTOFF
    out = np.empty_like(a)
    out[small] = _even_series(_SINC_COEF, a[small], order)
    b = a[~small]
    s, c = np.sin(b), np.cos(b)
    if order == 0:
        out[~small] = s / b
    elif order == 1:
        out[~small] = (b * c - s) / b**2
    else:
        out[~small] = (-(b**2) * s - 2 * b * c + 2 * s) / b**3
    return out


def _qs_derivs(a: np.ndarray, order: int) -> np.ndarray:
    small = np.abs(a) < _SERIES_CUTOFF
    out = np.empty_like(a)
    out[small] = _even_series(_QS_COEF, a[small], order)
    b = a[~small]
    s, c = np.sin(b), np.cos(b)
    if order == 0:
        out[~small] = 3 * (s - b * c) / b**3
    elif order == 1:
        out[~small] = 3 * (b**2 * s + 3 * b * c - 3 * s) / b**4
    else:
        out[~small] = 3 * (b**2 * (b * c - 5 * s) - 12 * b * c + 12 * s) / b**5
    return out


def _parzen_derivs(x: np.ndarray, order: int) -> np.ndarray:
    inner = x <= 0.5
    outer = (x > 0.5) & (x < 1.0)
    out = np.zeros_like(x)
    xi, xo = x[inner], x[outer]
    if order == 0:
        out[inner] = 1 - 6 * xi**2 + 6 * xi**3
        out[outer] = 2 * (1 - xo) ** 3
    elif order == 1:
        out[inner] = -12 * xi + 18 * xi**2
        out[outer] = -6 * (1 - xo) ** 2
    else:
        out[inner] = -12 + 36 * xi
        out[outer] = 12 * (1 - xo)
    return out


def _derivs(kernel: Kernel, x, order: int):
    kernel = parse_kernel(kernel)
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    sign = np.sign(x) if order % 2 else 1.0
    ax = np.abs(x)
    if kernel is Kernel.BARTLETT:
        if order == 0:
            out = np.maximum(0.0, 1.0 - ax)
        elif order == 1:
            out = np.where(ax < 1.0, -1.0, 0.0)
        else:
            out = np.zeros_like(ax)
    elif kernel is Kernel.PARZEN:
        out = _parzen_derivs(ax, order)
    elif kernel is Kernel.DANIELL:
        out = np.pi**order * _sinc_derivs(np.pi * ax, order)
    else:
        out = _QS_SCALE**order * _qs_derivs(_QS_SCALE * ax, order)
    out = out * sign
    return float(out[0]) if scalar else out


def kernel_weight(kernel: Union[str, Kernel], x):
    """k(x). Even in x, equal to one at the origin."""
    return _derivs(kernel, x, 0)


def kernel_deriv(kernel: Union[str, Kernel], x):
    """k'(x); for Bartlett and Parzen this is the derivative from the left at |x| = 1."""
    return _derivs(kernel, x, 1)


def kernel_second_deriv(kernel: Union[str, Kernel], x):
    """Closed-form k''(x) (zero outside the support for truncated kernels)."""
    return _derivs(kernel, x, 2)


@lru_cache(maxsize=None)
def kernel_constants(kernel: Kernel) -> tuple[int, float, float]:
    """Return ``(q, k_q, int k^2)`` for the plug-in bandwidth.

    ``k_q = lim_{x->0} (1 - k(x)) / |x|^q`` comes from the analytic derivatives
    at the origin; ``int k(x)^2 dx`` over the real line is integrated numerically
    with Gauss-Legendre on unit panels plus an asymptotic tail.
    """
    kernel = parse_kernel(kernel)
    q = kernel.char_exponent
    if q == 1:
        k_q = -kernel_deriv(kernel, 1e-12)
    else:
        k_q = -0.5 * kernel_second_deriv(kernel, 0.0)

    nodes, weights = roots_legendre(64)
    # half-unit panels so the Parzen knot at 0.5 falls on a panel edge
    panels = 2 if kernel in (Kernel.BARTLETT, Kernel.PARZEN) else 8000
    left = 0.5 * np.arange(panels)[:, None]
    x = left + 0.25 * (nodes + 1.0)
    total = 0.25 * float(np.sum(weights * kernel_weight(kernel, x.ravel()).reshape(x.shape) ** 2))
    if kernel is Kernel.DANIELL:
        # sin^2(pi x)/(pi x)^2 averages 1/(2 pi^2 x^2) beyond the last panel
        total += 1.0 / (2 * np.pi**2 * 0.5 * panels)
    return q, float(k_q), float(2.0 * total)


def andrews_constant(kernel: Union[str, Kernel]) -> float:
    """c_k = (q k_q^2 / int k^2)^(1/(2q+1))."""
    q, k_q, int_k2 = kernel_constants(parse_kernel(kernel))
    return (q * k_q**2 / int_k2) ** (1.0 / (2 * q + 1))


# ---------------------------------------------------------------------------
# long-run variance

def _as_matrix(residuals) -> np.ndarray:
    e = np.asarray(residuals, dtype=float)
    if e.ndim == 1:
        e = e[:, None]
    if e.ndim != 2:
        raise InvalidInputError("residuals must be a vector or a T x m matrix")
    if not np.all(np.isfinite(e)):
        raise InvalidInputError("residuals contain non-finite values")
    return e


def autocovariance(residuals, j: int) -> np.ndarray:
    """Gamma_j = T^-1 sum_{t=j+1}^T e_t e_{t-j}'."""
    e = _as_matrix(residuals)
    T = e.shape[0]
    if int(j) != j or not (0 <= j <= T - 1):
        raise InvalidInputError(f"lag {j} outside [0, {T - 1}]")
    j = int(j)
    return e[j:].T @ e[: T - j] / T


def lrv(residuals, kernel: Union[str, Kernel], M: float) -> LrvEstimate:
    """Kernel estimator Gamma_0 + sum_j k(j/M)(Gamma_j + Gamma_j')."""
    kernel = parse_kernel(kernel)
    e = _as_matrix(residuals)
    if not (M > 0 and np.isfinite(M)):
        raise InvalidInputError(f"bandwidth must be positive, got {M}")
    T = e.shape[0]
    omega = e.T @ e / T
    lags = np.arange(1, T)
    weights = kernel_weight(kernel, lags / M)
    for j, w in zip(lags, weights):
        if w == 0.0:
            continue
        g = e[j:].T @ e[: T - j] / T
        omega += w * (g + g.T)
    omega = 0.5 * (omega + omega.T)
    return LrvEstimate(omega, float(M), float(M) / T, kernel)


def lrv_batch(residuals: np.ndarray, kernel: Union[str, Kernel], M) -> np.ndarray:
    """LRV matrices for a stack of residual matrices of shape (R, T, m).

    ``M`` is a scalar or one bandwidth per replication. Uses the equivalent
    quadratic form T^-1 E' K E with K_st = k(|s - t| / M).
    """
    kernel = parse_kernel(kernel)
    e = np.asarray(residuals, dtype=float)
    R, T, _ = e.shape
    lag = np.abs(np.subtract.outer(np.arange(T), np.arange(T))).astype(float)
    M = np.asarray(M, dtype=float)
    if M.ndim == 0:
        K = kernel_weight(kernel, lag / M)
        ke = np.einsum("st,rtm->rsm", K, e)
    else:
        K = kernel_weight(kernel, lag[None, :, :] / M[:, None, None])
        ke = np.einsum("rst,rtm->rsm", K, e)
    omega = np.einsum("rsm,rsn->rmn", e, ke) / T
    return 0.5 * (omega + np.swapaxes(omega, 1, 2))


# ---------------------------------------------------------------------------
# bandwidth selection

RHO_CLAMP = 0.97


def _ar1_fits(e: np.ndarray):
    """Least-squares AR(1) coefficient and innovation variance per column.

    ``e`` has time on the second-to-last axis.
    """
    lagged = e[..., :-1, :]
    current = e[..., 1:, :]
    ss = np.sum(lagged**2, axis=-2)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(ss > 0, np.sum(current * lagged, axis=-2) / ss, 0.0)
    sigma2 = np.mean((current - rho[..., None, :] * lagged) ** 2, axis=-2)
    return np.clip(rho, -RHO_CLAMP, RHO_CLAMP), sigma2


def _plugin_M(rho, sigma2, T: int, kernel: Kernel):
    s4 = sigma2**2
    denom = np.sum(s4 / (1 - rho) ** 4, axis=-1)
    if kernel.char_exponent == 1:
        num = np.sum(4 * rho**2 * s4 / ((1 - rho) ** 6 * (1 + rho) ** 2), axis=-1)
        power = 1.0 / 3.0
    else:
        num = np.sum(4 * rho**2 * s4 / (1 - rho) ** 8, axis=-1)
        power = 1.0 / 5.0
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.where(denom > 0, num / denom, 0.0)
    M = andrews_constant(kernel) * (alpha * T) ** power
    return np.clip(M, 1.0, float(T))


def andrews_bandwidth(residuals, kernel: Union[str, Kernel]) -> float:
    """AR(1) plug-in bandwidth M, floored at 1 and capped at T."""
    kernel = parse_kernel(kernel)
    e = _as_matrix(residuals)
    T = e.shape[0]
    if T < 8:
        raise InvalidInputError(f"plug-in bandwidth needs T >= 8, got {T}")
    rho, sigma2 = _ar1_fits(e)
    return float(_plugin_M(rho, sigma2, T, kernel))


def andrews_bandwidth_batch(residuals: np.ndarray, kernel: Union[str, Kernel]) -> np.ndarray:
    """Plug-in bandwidths for a stack of residual matrices of shape (R, T, m)."""
    kernel = parse_kernel(kernel)
    e = np.asarray(residuals, dtype=float)
    rho, sigma2 = _ar1_fits(e)
    return _plugin_M(rho, sigma2, e.shape[1], kernel)


def resolve_bandwidth(rule: BandwidthRule, residuals, kernel: Union[str, Kernel]) -> float:
    """Bandwidth M implied by ``rule`` for the given residual matrix."""
    rule = parse_bandwidth(rule)
    e = _as_matrix(residuals)
    if isinstance(rule, FixedFraction):
        return rule.b * e.shape[0]
    return andrews_bandwidth(e, kernel)


def lrv_with_rule(residuals, kernel: Union[str, Kernel], rule: BandwidthRule) -> LrvEstimate:
    return lrv(residuals, kernel, resolve_bandwidth(rule, residuals, kernel))
