"""Trend-slope ratios for systems of trending pairs with fixed-b inference."""
from .errors import InvalidInputError, NumericalSingularityError
from .fixedb import (
    CriticalValue,
    CvCache,
    CvSource,
    SimulationConfig,
    critical_value,
    cv_daniell_0025,
    pb_functional,
    simulate_null_cv,
)
from .inference import (
    ConfidenceSet,
    CvOptions,
    LinearHypothesis,
    fieller_ci,
    ratio_diff_report,
    slope_ci,
    t_iv,
    t_prod,
    wald_iv,
)
from .kernels import AndrewsAR1, FixedFraction, Kernel, andrews_bandwidth, lrv
from .montecarlo import DgpSpec, ExperimentSpec, SlopeConfig, power_curve, rejection_table, simulate_system
from .pipeline import Dataset, ReportSpec, ingest_csv, run_report
from .series import PairSystem, TrendPair, TrendSeries, iv_system, ols_trend

__version__ = "0.1.0"
