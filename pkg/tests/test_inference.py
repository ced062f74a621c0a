import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from trendratio.errors import InvalidInputError, NumericalSingularityError
from trendratio.fixedb import SimulationConfig, cv_daniell_0025
from trendratio.inference import (
    FLAG_DEGENERATE_DENOM,
    FLAG_ZERO_VARIANCE,
    ConfidenceSet,
    CvOptions,
    LinearHypothesis,
    fieller_ci,
    product_stat,
    ratio_diff_report,
    slope_ci,
    solve_fieller,
    t_iv,
    t_prod,
    wald_iv,
)
from trendratio.kernels import andrews_bandwidth, lrv
from trendratio.series import PairSystem, TrendPair, TrendSeries, detrend, iv_system, trend_sum_squares

EQUAL = LinearHypothesis.equal_ratios()
# Wald with q = 2 needs a simulated cv; these tests check the statistic, not cv precision
QUICK_CV = CvOptions(SimulationConfig(replications=2000, step_count=200))


def make_pair(rng, T, b1, b2, noise=1.0, label="p"):
    t = np.arange(1, T + 1, dtype=float)
    e = rng.standard_normal((T, 2)) * noise
    return TrendPair.from_arrays(b1 * t + e[:, 0], b2 * t + e[:, 1], label)


def two_pairs(rng, T=60, theta=(2.0, 2.0), b2=(1.0, 1.0), noise=1.0):
    return (make_pair(rng, T, theta[0] * b2[0], b2[0], noise, "a"),
            make_pair(rng, T, theta[1] * b2[1], b2[1], noise, "b"))


def test_hypothesis_validation():
    with pytest.raises(InvalidInputError):
        LinearHypothesis([[1.0, -1.0], [2.0, -2.0]], [0.0, 0.0])
    with pytest.raises(InvalidInputError):
        LinearHypothesis([[1.0], [1.0]], [0.0, 0.0])
    with pytest.raises(InvalidInputError):
        LinearHypothesis([[1.0, -1.0]], [0.0, 1.0])
    h = LinearHypothesis.equal_ratios(3, 0, 2)
    assert_allclose(h.R, [[1, 0, -1]])
    assert (h.q, h.n) == (1, 3)


def test_wald_at_point_estimate_is_zero(rng):
    fit = iv_system(PairSystem(two_pairs(rng)))
    res = wald_iv(fit, LinearHypothesis(np.eye(2), fit.theta_hat), cv_options=QUICK_CV)
    assert res.statistic == pytest.approx(0.0, abs=1e-20)
    assert not res.reject
    assert res.critical_value.form == "wald" and res.critical_value.q == 2


def test_noiseless_equal_ratios_flag_zero_variance():
    t = np.arange(1, 41, dtype=float)
    pairs = (TrendPair.from_arrays(3 * t, t), TrendPair.from_arrays(6 * t, 2 * t))
    fit = iv_system(PairSystem(pairs))
    for res in (wald_iv(fit, EQUAL), t_iv(fit, EQUAL)):
        assert res.statistic == 0.0
        assert FLAG_ZERO_VARIANCE in res.flags
        assert not res.reject


def test_noiseless_unequal_ratios_give_infinite_statistic():
    t = np.arange(1, 41, dtype=float)
    fit = iv_system(PairSystem((TrendPair.from_arrays(3 * t, t), TrendPair.from_arrays(2 * t, t))))
    res = t_iv(fit, EQUAL)
    assert res.statistic == math.inf and res.reject


def test_wald_equals_t_squared(rng):
    for _ in range(100):
        T = int(rng.integers(20, 120))
        pairs = two_pairs(rng, T, rng.uniform(0.5, 3, 2), rng.uniform(0.2, 2, 2), rng.uniform(0.1, 3))
        fit = iv_system(PairSystem(pairs))
        h = LinearHypothesis([rng.normal(size=2)], [rng.normal()])
        bw = rng.choice(["a91", 0.1, 0.5])
        w, t = wald_iv(fit, h, "daniell", bw), t_iv(fit, h, "daniell", bw)
        assert_allclose(w.statistic, t.statistic**2, rtol=1e-10)
        assert w.reject == t.reject


def test_t_iv_matches_formula(rng):
    pairs = two_pairs(rng, 80, (1.5, 1.2))
    fit = iv_system(PairSystem(pairs))
    res = t_iv(fit, EQUAL, "daniell", 0.25)
    omega = lrv(fit.iv_residuals, "daniell", 20.0).omega
    D = np.diag(1 / fit.denom_sums)
    V = trend_sum_squares(80) * D @ omega @ D
    R = np.array([1.0, -1.0])
    expected = (fit.theta_hat[0] - fit.theta_hat[1]) / math.sqrt(R @ V @ R)
    assert_allclose(res.statistic, expected, rtol=1e-12)
    assert_allclose(res.critical_value.value, cv_daniell_0025(0.25))
    cs = res.confidence_set
    assert_allclose([cs.lower, cs.upper], res.estimate[0] + np.array([-1, 1]) * res.critical_value.value * res.std_error)


def test_t_iv_increases_with_first_ratio():
    rng = np.random.default_rng(4)
    T = 50
    t = np.arange(1, T + 1, dtype=float)
    u = rng.standard_normal((T, 4)) * 0.05
    stats = []
    for th in (1.0, 1.001, 1.002, 1.004):
        pairs = (TrendPair.from_arrays(th * t + u[:, 0], t + u[:, 1]),
                 TrendPair.from_arrays(t + u[:, 2], t + u[:, 3]))
        stats.append(t_iv(iv_system(PairSystem(pairs)), EQUAL, "daniell", 0.25).statistic)
    assert np.all(np.diff(stats) > 0)


def test_t_iv_requires_single_restriction(rng):
    fit = iv_system(PairSystem(two_pairs(rng)))
    with pytest.raises(InvalidInputError):
        t_iv(fit, LinearHypothesis(np.eye(2), [0.0, 0.0]))
    with pytest.raises(InvalidInputError):
        wald_iv(fit, LinearHypothesis.equal_ratios(3))


def test_singular_restriction_is_named(rng):
    t = np.arange(1, 31, dtype=float)
    noisy = make_pair(rng, 30, 2.0, 1.0)
    exact = TrendPair.from_arrays(3 * t, t)
    fit = iv_system(PairSystem((noisy, exact)))
    with pytest.raises(NumericalSingularityError, match="restriction 1"):
        wald_iv(fit, LinearHypothesis(np.eye(2), [2.0, 3.0]), cv_options=QUICK_CV)


def test_zero_denominator_gives_flagged_nan(rng):
    t = np.arange(1, 11, dtype=float)
    flat = TrendPair.from_arrays(t, [1.0, 2, 1, 2, 1, 1, 2, 1, 2, 1])
    fit = iv_system(PairSystem((make_pair(rng, 10, 2, 1), flat)))
    res = t_iv(fit, EQUAL)
    assert math.isnan(res.statistic) and not res.reject
    assert FLAG_DEGENERATE_DENOM in res.flags
    # restrictions that avoid the degenerate pair still run
    ok = t_iv(fit, LinearHypothesis([[1.0, 0.0]], [2.0]))
    assert math.isfinite(ok.statistic)


def test_product_identities(rng):
    p1, p2 = two_pairs(rng)
    same = t_prod(p1, p1)
    assert same.estimate[0] == 0.0 and same.statistic == 0.0 and not same.reject
    t = np.arange(1, 21, dtype=float)
    ones = TrendPair.from_arrays(t + np.sin(t), t + np.cos(t))
    ones2 = TrendPair.from_arrays(t - np.sin(t), t - np.cos(t))
    ps = product_stat(ones, ones2)
    b = [detrend(s.values)[1] for s in (ones.numerator, ones.denominator, ones2.numerator, ones2.denominator)]
    assert_allclose(ps.g_hat, b[3] * b[0] - b[1] * b[2], rtol=1e-12)
    assert_allclose(ps.R_beta_hat, [b[3], -b[1], -b[2], b[0]])
    fit = iv_system(PairSystem((p1, p2)))
    ps = product_stat(p1, p2)
    assert_allclose(ps.g_hat, fit.slopes_den[0] * fit.slopes_den[1] * (fit.theta_hat[0] - fit.theta_hat[1]),
                    rtol=1e-10)
    assert ps.lambda_g_sq >= 0


def test_all_unit_slopes_give_zero_g():
    t = np.arange(1, 21, dtype=float)
    p = TrendPair.from_arrays(t, t)
    assert product_stat(p, TrendPair.from_arrays(t + 1, t - 2)).g_hat == pytest.approx(0.0, abs=1e-14)


def test_t_prod_matches_formula(rng):
    p1, p2 = two_pairs(rng, 70, (1.0, 1.3))
    res = t_prod(p1, p2, "daniell", 0.5)
    ps = product_stat(p1, p2, "daniell", 0.5)
    lam = ps.R_beta_hat @ lrv(ps_u(p1, p2), "daniell", 35.0).omega @ ps.R_beta_hat
    assert_allclose(ps.lambda_g_sq, lam, rtol=1e-12)
    assert_allclose(res.statistic, ps.g_hat / math.sqrt(lam / trend_sum_squares(70)), rtol=1e-12)


def ps_u(p1, p2):
    u = [detrend(s.values)[2] for s in (p1.numerator, p2.numerator, p1.denominator, p2.denominator)]
    return np.column_stack(u)


def test_t_prod_plugin_bandwidth_uses_combined_series(rng):
    p1, p2 = two_pairs(rng, 90, (1.0, 1.1))
    ps = product_stat(p1, p2, "daniell", "a91")
    assert_allclose(ps.variance.bandwidth_M, andrews_bandwidth(ps_u(p1, p2) @ ps.R_beta_hat, "daniell"))


def perturb(pairs, rng, which):
    out = []
    for i, p in enumerate(pairs):
        y1, y2 = p.numerator.values, p.denominator.values
        if which == "shift":
            c = rng.normal(scale=100, size=2)
            y1, y2 = y1 + c[0], y2 + c[1]
        elif which == "scale" and i == 0:
            c = math.exp(rng.uniform(-5, 5))
            y1, y2 = c * y1, c * y2
        out.append(TrendPair.from_arrays(y1, y2))
    return out


@pytest.mark.parametrize("which", ["shift", "scale"])
def test_statistic_invariances(which):
    rng = np.random.default_rng(99)
    for _ in range(40):
        pairs = two_pairs(rng, int(rng.integers(20, 100)), rng.uniform(0.5, 2, 2), rng.uniform(0.05, 2, 2))
        moved = perturb(pairs, rng, which)
        for bw in ("a91", 0.3):
            a = t_iv(iv_system(PairSystem(pairs)), EQUAL, "daniell", bw).statistic
            b = t_iv(iv_system(PairSystem(moved)), EQUAL, "daniell", bw).statistic
            assert_allclose(b, a, rtol=1e-8)
            a = t_prod(*pairs, "daniell", bw).statistic
            b = t_prod(*moved, "daniell", bw).statistic
            assert_allclose(b, a, rtol=1e-8)


def grid_inversion(pair, res, grid):
    _, slopes, u = detrend(np.column_stack([pair.numerator.values, pair.denominator.values]))
    omega = res.variance.omega
    v = omega[0, 0] - 2 * grid * omega[0, 1] + grid**2 * omega[1, 1]
    stt = trend_sum_squares(pair.T)
    lhs = (slopes[0] - grid * slopes[1]) ** 2
    rhs = res.critical_value.value**2 * v / stt
    return lhs <= rhs, np.abs(lhs - rhs) <= 1e-9 * np.maximum(lhs, rhs)


def test_fieller_matches_grid_inversion():
    rng = np.random.default_rng(2024)
    kinds = set()
    for i in range(100):
        T = int(rng.integers(10, 80))
        b2 = 10 ** rng.uniform(-3.5, 0)
        pair = make_pair(rng, T, rng.uniform(-2, 2) * b2 * rng.choice([1, 30]), b2 * rng.choice([-1, 1]))
        res = fieller_ci(pair, 0.05, "daniell", rng.choice(["a91", 0.25, 0.6]))
        kinds.add(res.confidence_set.kind)
        centre = res.estimate if math.isfinite(res.estimate) and abs(res.estimate) < 1e4 else 0.0
        grid = centre + np.arange(-50.0, 50.0, 1e-3)
        inside, boundary = grid_inversion(pair, res, grid)
        member = res.confidence_set.contains(grid)
        assert np.all((member == inside) | boundary), i
    assert {"interval", "rays", "whole-line"} <= kinds


def test_fieller_shapes_from_closed_form():
    omega = np.array([[1.0, 0.2], [0.2, 1.0]])
    assert solve_fieller(3.0, 1.0, omega * 1e-6, 2.0, 100.0).kind == "interval"
    weak = solve_fieller(0.5, 0.05, omega, 2.0, 100.0)
    assert weak.kind in ("rays", "whole-line")
    assert solve_fieller(0.0, 0.0, omega, 2.0, 100.0).kind == "whole-line"
    # zero leading coefficient gives a half-line
    half = solve_fieller(1.0, 0.5, np.array([[0.0, 0.0], [0.0, 1.0]]), 1.0, 4.0)
    assert half.kind == "interval" and math.isinf(half.upper)
    assert ConfidenceSet("rays", -1.0, 2.0).contains(-5) and not ConfidenceSet("rays", -1.0, 2.0).contains(0)


def test_fieller_tiny_noise_is_tight(rng):
    T = 50
    t = np.arange(1, T + 1, dtype=float)
    pair = TrendPair.from_arrays(3 * t + 1e-6 * rng.standard_normal(T), t + 1e-6 * rng.standard_normal(T))
    cs = fieller_ci(pair).confidence_set
    assert cs.kind == "interval" and cs.upper - cs.lower < 1e-6
    assert abs(0.5 * (cs.lower + cs.upper) - 3.0) < 1e-6


def test_fieller_noiseless_pair(rng):
    t = np.arange(1, 21, dtype=float)
    res = fieller_ci(TrendPair.from_arrays(3 * t, t))
    assert_allclose([res.confidence_set.lower, res.confidence_set.upper], 3.0)
    assert FLAG_ZERO_VARIANCE in res.flags
    with pytest.raises(InvalidInputError):
        fieller_ci(TrendPair.from_arrays(t[:7], t[:7]))


def _fieller_delta_gaps(seed, n):
    """Endpoint gap over delta-method width, with a = cv / t of the denominator slope."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        b2 = rng.uniform(0.02, 0.5)
        theta = rng.choice([0.1, 1.0, 5.0, 20.0]) * rng.uniform(0.5, 2)
        pair = make_pair(rng, 100, theta * b2, b2)
        pair = TrendPair.from_arrays(pair.numerator.values * rng.uniform(0.1, 3), pair.denominator.values)
        den = slope_ci(pair.denominator, 0.05, "daniell", 0.25)
        f = fieller_ci(pair, 0.05, "daniell", 0.25).confidence_set
        if f.kind != "interval":
            continue
        d = t_iv(iv_system(PairSystem((pair,))), LinearHypothesis.single(0.0), "daniell", 0.25).confidence_set
        width = d.upper - d.lower
        gap = max(abs(f.lower - d.lower), abs(f.upper - d.upper)) / width
        out.append((den.critical_value.value * den.std_error / abs(den.estimate), gap))
    return np.array(out)


def test_fieller_delta_gap_sharp_bound():
    # with a = cv / t_den the endpoint gap is at most a / (2 (1 - a)) of the width
    a, gap = _fieller_delta_gaps(8, 300).T
    assert np.all(gap <= a / (2 * (1 - a)) * (1 + 1e-9))
    assert np.max(gap / (a / (2 * (1 - a)))) > 0.9


def test_fieller_agrees_with_delta_method_for_strong_denominator():
    a, gap = _fieller_delta_gaps(9, 300).T
    strong = a <= 1 / 11
    assert strong.sum() > 50
    assert np.all(gap[strong] < 0.05)


def test_slope_ci_noiseless_and_scaling(rng):
    res = slope_ci(TrendSeries(2.0 * np.arange(1, 31)))
    assert_allclose([res.confidence_set.lower, res.confidence_set.upper], 2.0)
    assert FLAG_ZERO_VARIANCE in res.flags
    y = TrendSeries(0.01 * np.arange(1, 68) + rng.standard_normal(67) * 0.1)
    a, b = slope_ci(y), slope_ci(y, per_decade_scale=10.0)
    assert_allclose(b.estimate, 10 * a.estimate)
    assert_allclose([b.confidence_set.lower, b.confidence_set.upper],
                    [10 * a.confidence_set.lower, 10 * a.confidence_set.upper])


def test_slope_ci_coverage_white_noise():
    rng = np.random.default_rng(31)
    reps = 2000
    hits = sum(slope_ci(TrendSeries(rng.standard_normal(200))).confidence_set.contains(0.0) for _ in range(reps))
    assert abs(hits / reps - 0.95) <= 0.02


def test_ratio_diff_report_identical_pairs(rng):
    p = make_pair(rng, 40, 2.0, 1.0)
    cmp = ratio_diff_report(p, p)
    assert cmp.delta_theta == 0.0 and cmp.g_hat == 0.0
    assert not cmp.iv.reject and not cmp.prod.reject
    assert cmp.g_display_scale == 1e4


def test_sign_consistency_between_differences():
    rng = np.random.default_rng(12)
    for _ in range(100):
        pairs = two_pairs(rng, 40, rng.uniform(-2, 2, 2), rng.uniform(-1, 1, 2))
        cmp = ratio_diff_report(*pairs, bandwidth=0.3)
        fit = iv_system(PairSystem(pairs))
        sign = np.sign(cmp.delta_theta) * np.sign(fit.slopes_den[0] * fit.slopes_den[1])
        assert np.sign(cmp.g_hat) == sign


def test_level_one_never_rejects_a_zero_statistic(rng):
    p = make_pair(rng, 30, 1.0, 1.0)
    res = t_prod(p, p, level=1.0)
    assert res.critical_value.value == 0.0 and res.statistic == 0.0 and not res.reject


def test_audit_records_tuning(rng):
    res = t_prod(*two_pairs(rng), "daniell", "a91")
    audit = res.audit()
    assert audit["kernel"] == "daniell" and audit["b"] == res.variance.b_ratio
    assert audit["critical_value"]["source"] == "Polynomial"


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_g_antisymmetry_property(seed):
    rng = np.random.default_rng(seed)
    p1, p2 = two_pairs(rng, 30, rng.uniform(-3, 3, 2), rng.uniform(-2, 2, 2))
    assert product_stat(p1, p1).g_hat == 0.0
    assert_allclose(product_stat(p1, p2).g_hat, -product_stat(p2, p1).g_hat, rtol=1e-12, atol=1e-15)
