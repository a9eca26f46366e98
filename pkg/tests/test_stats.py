import math

import numpy as np
import pytest
from scipy import stats as sps

from agestruct.stats import (fit_loglog_slope, jarque_bera, sample_summary,
                             se_of_covariance, se_of_variance)


def test_jb_matches_scipy_statistic():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(5000)
    stat, p = jarque_bera(x)
    ref = sps.jarque_bera(x)
    assert stat == pytest.approx(ref.statistic, rel=1e-10)
    assert p == pytest.approx(ref.pvalue, rel=1e-8)


def test_jb_rejection_rate_under_null():
    rng = np.random.default_rng(314)
    rejections = 0
    n_batches = 200
    for _ in range(n_batches):
        _, p = jarque_bera(rng.standard_normal(10 ** 4))
        rejections += p < 0.01
    assert rejections / n_batches <= 0.02


def test_jb_detects_non_normality():
    rng = np.random.default_rng(9)
    _, p = jarque_bera(rng.exponential(size=10 ** 4))
    assert p < 0.01


def test_sample_summary_fields():
    rng = np.random.default_rng(11)
    x = 2.0 + 0.5 * rng.standard_normal(4000)
    s = sample_summary(x)
    assert s.n == 4000
    assert s.mean == pytest.approx(2.0, abs=4 * 0.5 / math.sqrt(4000))
    assert s.se_mean == pytest.approx(math.sqrt(s.var / s.n))
    # for normal data the variance SE is close to s^2 sqrt(2/n)
    assert s.se_var == pytest.approx(s.var * math.sqrt(2.0 / s.n), rel=0.2)
    assert s.jb_pvalue > 0.01


def test_se_of_covariance_scale():
    rng = np.random.default_rng(13)
    x = rng.standard_normal(20000)
    y = 0.6 * x + 0.8 * rng.standard_normal(20000)
    se = se_of_covariance(x, y)
    # Var(cov-hat) ~ (1 + rho^2) var_x var_y / n for Gaussian pairs
    rho = 0.6 / math.sqrt(0.6 ** 2 + 0.8 ** 2)
    expect = math.sqrt((1 + rho ** 2) * 1.0 * 1.0 / 20000)
    assert se == pytest.approx(expect, rel=0.2)


def test_loglog_slope_on_power_law():
    ks = np.array([100.0, 1000.0, 10000.0])
    errs = 3.7 * ks ** -0.5
    assert fit_loglog_slope(ks, errs) == pytest.approx(-0.5, abs=1e-12)
