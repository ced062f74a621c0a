import os

import numpy as np
import pytest


def pytest_addoption(parser):
    parser.addoption("--with-empirical-data", action="store", default=None,
                     help="CSV with the observational temperature series for the table golden tests")
    parser.addoption("--full-grid", action="store_true", default=False,
                     help="run the full Table 1/2 grids (slow)")


@pytest.fixture(autouse=True)
def _isolated_cv_cache(tmp_path, monkeypatch):
    # never touch the user's cv cache from tests
    monkeypatch.setenv("TRENDRATIO_CV_CACHE", str(tmp_path / "cv_cache.csv"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def empirical_data(request):
    path = request.config.getoption("--with-empirical-data") or os.environ.get("TRENDRATIO_EMPIRICAL_DATA")
    if not path:
        pytest.skip("empirical dataset not supplied (--with-empirical-data)")
    return path


def trend_pair_arrays(rng, T, slopes=(3.0, 1.0), noise=1.0, ar=0.0):
    t = np.arange(1, T + 1, dtype=float)
    e = rng.standard_normal((T, 2)) * noise
    if ar:
        for i in range(1, T):
            e[i] += ar * e[i - 1]
    return slopes[0] * t + e[:, 0], slopes[1] * t + e[:, 1]


SYNTH_SLOPES = {
    "RICH:SFC": 0.0142, "RICH:850": 0.0117, "RICH:700": 0.0195,
    "RAOB:SFC": 0.0150, "RAOB:850": 0.0085, "RAOB:700": 0.0160,
}


def synthetic_temperatures(T=67, seed=1958, noise=0.12, ar=0.5, slopes=None):
    """Annual series from 1958 with AR(1) noise, keyed SOURCE:LEVEL."""
    slopes = SYNTH_SLOPES if slopes is None else slopes
    g = np.random.default_rng(seed)
    t = np.arange(1, T + 1, dtype=float)
    out = {}
    for label, b in slopes.items():
        e = g.standard_normal(T) * noise
        for i in range(1, T):
            e[i] += ar * e[i - 1]
        out[label] = b * t + e
    return out


def write_series_csv(path, series, start=1958, blank=None):
    labels = list(series)
    T = len(next(iter(series.values())))
    rows = ["year," + ",".join(labels)]
    for i in range(T):
        cells = []
        for k in labels:
            cells.append("" if blank == (i, k) else repr(float(series[k][i])))
        rows.append(f"{start + i}," + ",".join(cells))
    path.write_text("\n".join(rows) + "\n")
    return path


@pytest.fixture
def synthetic_csv(tmp_path):
    return write_series_csv(tmp_path / "synthetic.csv", synthetic_temperatures())


# one PASS/FAIL line per acceptance criterion, shown in the terminal summary
ACCEPTANCE_LINES = []


class _Criterion:
    def __init__(self, tag):
        self.tag = tag
        self.details = []

    def note(self, text):
        self.details.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = "; ".join(self.details)
        if exc_type is not None and exc_type is not AssertionError:
            detail = f"{detail}; error {exc_type.__name__}: {exc}".lstrip("; ")
        line = f"{self.tag}: {status}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
