"""Fixed-b critical values for kernel-variance t and Wald statistics.

Two sources are available: the published quintic for the Daniell kernel at
the two-sided 5% level, and a simulator of the null limit

    t  = Z / sqrt(P_b(W~)),    Wald = Z' P_b(W~)^{-1} Z,

where Z = sqrt(12) int (s - 1/2) dW(s) and W~ is the detrended Wiener path
W(r) - r W(1) - 12 L(r) int (s - 1/2) dW(s), L(r) = (r^2 - r) / 2.
"""
from __future__ import annotations

import csv
import enum
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import InvalidInputError
from .kernels import FixedbClass, Kernel, kernel_deriv, kernel_second_deriv, parse_kernel

logger = logging.getLogger(__name__)

__all__ = [
    "CvSource",
    "CriticalValue",
    "PathGrid",
    "SimulationConfig",
    "CvCache",
    "cv_daniell_0025",
    "pb_functional",
    "pb_functional_batch",
    "simulate_limit_draws",
    "simulate_null_cv",
    "critical_value",
]

DANIELL_0025_COEFS = (1.9659, 4.0603, 11.6626, 34.8269, -13.9506, 3.2669)
CACHE_VERSION = 1
CACHE_COLUMNS = ("kernel", "b", "level", "q", "step_count", "reps", "seed", "cv")


class CvSource(enum.Enum):
    POLYNOMIAL = "Polynomial"
    SIMULATED = "Simulated"
    EXACT = "Exact"


@dataclass(frozen=True)
class CriticalValue:
    """A fixed-b critical value and where it came from.

    ``value`` is the upper quantile of |t| when ``form == "t"`` and of the
    Wald statistic when ``form == "wald"``; ``level`` is the two-sided size.
    """

    value: float
    level: float
    b: float
    kernel: Kernel
    q: int
    source: CvSource
    form: str = "t"
    replications: Optional[int] = None
    step_count: Optional[int] = None
    seed: Optional[int] = None

    def as_dict(self) -> dict:
        return {
            "value": self.value,
            "level": self.level,
            "b": self.b,
            "kernel": self.kernel.value,
            "q": self.q,
            "source": self.source.value,
            "form": self.form,
            "replications": self.replications,
            "step_count": self.step_count,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class PathGrid:
    """A vector process sampled at r = i / step_count, i = 1..step_count."""

    paths: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.paths, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        if p.shape[0] < 100:
            raise InvalidInputError(f"path grid needs at least 100 points, got {p.shape[0]}")
        object.__setattr__(self, "paths", p)

    @property
    def step_count(self) -> int:
        return self.paths.shape[0]

    @classmethod
    def from_function(cls, func, step_count: int = 1000) -> "PathGrid":
        r = np.arange(1, step_count + 1) / step_count
        return cls(np.asarray(func(r), dtype=float))


@dataclass(frozen=True)
class SimulationConfig:
    replications: int = 50_000
    step_count: int = 1_000
    seed: int = 20_240_101
    block_size: int = 1_000
    workers: int = 1


def cv_daniell_0025(b: float) -> float:
    """Two-sided 5% fixed-b critical value for the Daniell kernel."""
    if not (0.0 < b <= 1.0):
        raise InvalidInputError(f"b must lie in (0, 1], got {b}")
    return float(sum(c * b**p for p, c in enumerate(DANIELL_0025_COEFS)))


# ---------------------------------------------------------------------------
# P_b functional

@lru_cache(maxsize=16)
def _type1_weights(kernel: Kernel, b: float, step_count: int, restrict: bool) -> np.ndarray:
    """-k*''(r_i - r_j) on the grid, k*(x) = k(x / b)."""
    idx = np.arange(step_count)
    diff = np.abs(np.subtract.outer(idx, idx)) / step_count
    w = -kernel_second_deriv(kernel, diff / b) / b**2
    if restrict:
        w = np.where(diff < b, w, 0.0)
    w.setflags(write=False)
    return w


def _shift(b: float, step_count: int) -> int:
    return int(round(b * step_count))


def _lag_cross(Q: np.ndarray, nb: int) -> np.ndarray:
    """Riemann sum of Q(r+b)Q(r)' + Q(r)Q(r+b)' over [0, 1-b]; Q is (..., N, m)."""
    N = Q.shape[-2]
    if nb >= N:
        return np.zeros(Q.shape[:-2] + (Q.shape[-1], Q.shape[-1]))
    a = np.swapaxes(Q[..., nb:, :], -1, -2) @ Q[..., : N - nb, :]
    return (a + np.swapaxes(a, -1, -2)) / N


def pb_functional_batch(Q: np.ndarray, kernel: Union[str, Kernel], b: float) -> np.ndarray:
    """P_b for a stack of sampled paths of shape (R, N, m); returns (R, m, m)."""
    kernel = parse_kernel(kernel)
    if not (0.0 < b <= 1.0):
        raise InvalidInputError(f"b must lie in (0, 1], got {b}")
    Q = np.asarray(Q, dtype=float)
    N = Q.shape[-2]
    cls = kernel.fixedb_class
    if cls is FixedbClass.BARTLETT:
        own = np.swapaxes(Q, -1, -2) @ Q / N
        out = (2.0 / b) * own - (1.0 / b) * _lag_cross(Q, _shift(b, N))
    else:
        W = _type1_weights(kernel, float(b), N, cls is FixedbClass.TYPE2)
        out = np.swapaxes(Q, -1, -2) @ (W @ Q) / N**2
        if cls is FixedbClass.TYPE2:
            # left derivative of k*(x) = k(x/b) at x = b
            slope = kernel_deriv(kernel, 1.0 - 1e-12) / b
            if slope != 0.0:
                out = out + slope * _lag_cross(Q, _shift(b, N))
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def pb_functional(path: PathGrid, kernel: Union[str, Kernel], b: float) -> np.ndarray:
    """Riemann approximation of P_b(Q) on the path grid, for the kernel's fixed-b class."""
    if not isinstance(path, PathGrid):
        path = PathGrid(path)
    return pb_functional_batch(path.paths[None], kernel, b)[0]


# ---------------------------------------------------------------------------
# limit simulation

def _block_draws(kernel: Kernel, b: float, q: int, cfg: SimulationConfig, reps: range):
    N = cfg.step_count
    dW = np.stack([np.random.default_rng([cfg.seed, rep]).standard_normal((N, q)) for rep in reps])
    dW /= np.sqrt(N)
    W = np.cumsum(dW, axis=1)
    r = (np.arange(1, N + 1) / N)[None, :, None]
    mid = (np.arange(1, N + 1) - 0.5) / N
    ito = np.einsum("n,rnq->rq", mid - 0.5, dW)
    L = 0.5 * (r**2 - r)
    W_tilde = W - r * W[:, -1:, :] - 12.0 * L * ito[:, None, :]
    Z = np.sqrt(12.0) * ito
    P = pb_functional_batch(W_tilde, kernel, b)
    return Z, P


def simulate_limit_draws(kernel: Union[str, Kernel], b: float, q: int = 1,
                         cfg: SimulationConfig = SimulationConfig()):
    """Draws of (Z*, P_b(W~*)) under the null; shapes (reps, q) and (reps, q, q).

    Replication ``i`` draws from ``default_rng([seed, i])``, so the draws do
    not depend on ``cfg.block_size`` or ``cfg.workers``.
    """
    kernel = parse_kernel(kernel)
    if q < 1:
        raise InvalidInputError(f"q must be >= 1, got {q}")
    blocks = [range(s, min(s + cfg.block_size, cfg.replications))
              for s in range(0, cfg.replications, cfg.block_size)]

    def run(k):
        return _block_draws(kernel, b, q, cfg, blocks[k])

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            parts = list(pool.map(run, range(len(blocks))))
    else:
        parts = [run(k) for k in range(len(blocks))]
    Z = np.concatenate([p[0] for p in parts])
    P = np.concatenate([p[1] for p in parts])
    return Z, P


def simulate_null_cv(kernel: Union[str, Kernel], b: float, level: float = 0.05, q: int = 1,
                     cfg: SimulationConfig = SimulationConfig()) -> CriticalValue:
    """Simulated fixed-b critical value.

    For q = 1 the stored value is the (1 - level) quantile of |t|, so ``level``
    is the two-sided size; for q > 1 it is the (1 - level) quantile of Wald.
    """
    kernel = parse_kernel(kernel)
    if not (0.0 < level <= 0.5):
        raise InvalidInputError(f"level must lie in (0, 0.5], got {level}")
    Z, P = simulate_limit_draws(kernel, b, q, cfg)
    if q == 1:
        stat = np.abs(Z[:, 0]) / np.sqrt(P[:, 0, 0])
        form = "t"
    else:
        stat = np.einsum("ri,ri->r", Z, np.linalg.solve(P, Z[:, :, None])[:, :, 0])
        form = "wald"
    value = float(np.quantile(stat, 1.0 - level))
    return CriticalValue(value, level, b, kernel, q, CvSource.SIMULATED, form,
                         cfg.replications, cfg.step_count, cfg.seed)


# ---------------------------------------------------------------------------
# cache and dispatch

def default_cache_path() -> Path:
    env = os.environ.get("TRENDRATIO_CV_CACHE")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "trendratio" / "cv_cache.csv"


@dataclass
class CvCache:
    """CSV table of simulated critical values keyed by the simulation inputs."""

    path: Path = field(default_factory=default_cache_path)

    def __post_init__(self) -> None:
        self.path = Path(self.path)
        self._rows: dict[tuple, float] = {}
        if self.path.exists():
            self._load()

    @staticmethod
    def key(kernel: Kernel, b: float, level: float, q: int, cfg: SimulationConfig) -> tuple:
        return (kernel.value, round(b, 4), round(level, 6), q, cfg.step_count,
                cfg.replications, cfg.seed)

    def _load(self) -> None:
        with open(self.path, newline="") as fh:
            first = fh.readline().strip()
            if first != f"# cv-cache-version: {CACHE_VERSION}":
                logger.warning("ignoring cv cache %s with unknown version line %r", self.path, first)
                return
            for row in csv.DictReader(fh):
                k = (row["kernel"], round(float(row["b"]), 4), round(float(row["level"]), 6),
                     int(row["q"]), int(row["step_count"]), int(row["reps"]), int(row["seed"]))
                self._rows[k] = float(row["cv"])

    def get(self, key: tuple) -> Optional[float]:
        return self._rows.get(key)

    def put(self, key: tuple, value: float) -> None:
        self._rows[key] = value
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".tmp")
        with open(tmp, "w", newline="") as fh:
            fh.write(f"# cv-cache-version: {CACHE_VERSION}\n")
            writer = csv.writer(fh)
            writer.writerow(CACHE_COLUMNS)
            for k, v in sorted(self._rows.items()):
                writer.writerow([*k, repr(v)])
        os.replace(tmp, self.path)

    def __len__(self) -> int:
        return len(self._rows)


# simulated values for this process, used when no cache file is given
_SIMULATED: dict[tuple, float] = {}


def critical_value(kernel: Union[str, Kernel], b: float, level: float = 0.05, q: int = 1,
                   form: str = "t", cfg: SimulationConfig = SimulationConfig(),
                   cache: Optional[CvCache] = None) -> CriticalValue:
    """Critical value for a two-sided t test (``form="t"``) or a Wald test.

    The Daniell two-sided 5% case with q = 1 uses the published polynomial;
    everything else is simulated, going through ``cache`` when given.
    """
    kernel = parse_kernel(kernel)
    if form not in ("t", "wald"):
        raise InvalidInputError(f"form must be 't' or 'wald', got {form!r}")
    if form == "t" and q != 1:
        raise InvalidInputError("t critical values need q = 1")
    if not (0.0 < b <= 1.0):
        raise InvalidInputError(f"b must lie in (0, 1], got {b}")
    if not (0.0 < level <= 1.0):
        raise InvalidInputError(f"level must lie in (0, 1], got {level}")
    if level >= 1.0:
        return CriticalValue(0.0, level, b, kernel, q, CvSource.EXACT, form)

    if kernel is Kernel.DANIELL and q == 1 and abs(level - 0.05) < 1e-12:
        v = cv_daniell_0025(b)
        return CriticalValue(v * v if form == "wald" else v, level, b, kernel, q,
                             CvSource.POLYNOMIAL, form)

    b_key = round(b, 4) if round(b, 4) > 0 else b
    key = CvCache.key(kernel, b_key, level, q, cfg)
    value = cache.get(key) if cache is not None else _SIMULATED.get(key)
    if value is None:
        logger.info("simulating fixed-b cv: kernel=%s b=%.4f level=%g q=%d", kernel.value, b_key, level, q)
        value = simulate_null_cv(kernel, b_key, level, q, cfg).value
        if cache is not None:
            cache.put(key, value)
    _SIMULATED[key] = value
    # cached value is |t| quantile for q = 1, Wald quantile otherwise
    if q == 1 and form == "wald":
        value = value * value
    return CriticalValue(value, level, b, kernel, q, CvSource.SIMULATED, form,
                         cfg.replications, cfg.step_count, cfg.seed)
