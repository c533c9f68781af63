"""Log-linear scaling fits checked against an independent OLS implementation."""

import numpy as np
import pytest
import statsmodels.api as sm

from stmae.errors import ConfigError, NumericError
from stmae.scaling import ScalingFit, fit_scaling, write_curve_csv


def _oracle(points):
    hours = np.array([h for h, _ in points], dtype=np.float64)
    acc = np.array([a for _, a in points], dtype=np.float64)
    x = sm.add_constant(np.log10(hours))
    res = sm.OLS(acc, x).fit()
    return res


def test_matches_ols_oracle_on_random_sets():
    rng = np.random.default_rng(42)
    for _ in range(100):
        n = int(rng.integers(3, 12))
        hours = 10.0 ** rng.uniform(-3, 2, size=n)
        # keep at least two distinct hour values so the fit is full rank
        if np.unique(np.round(np.log10(hours), 12)).size < 2:
            continue
        acc = rng.uniform(0, 1, size=n)
        points = list(zip(hours, acc))
        fit = fit_scaling(points)
        res = _oracle(points)
        assert abs(fit.slope - res.params[1]) < 1e-12
        assert abs(fit.intercept - res.params[0]) < 1e-12
        lo, hi = res.conf_int(alpha=0.05)[1]
        assert abs((fit.slope - fit.ci_slope) - lo) < 1e-10
        assert abs((fit.slope + fit.ci_slope) - hi) < 1e-10


def test_exact_line_recovered_with_zero_residual():
    hours = np.array([0.01, 0.1, 1.0, 10.0])
    acc = 0.3 + 0.12 * np.log10(hours)
    fit = fit_scaling(list(zip(hours, acc)))
    assert fit.slope == pytest.approx(0.12, abs=1e-14)
    assert fit.intercept == pytest.approx(0.3, abs=1e-14)
    assert fit.residual_variance == pytest.approx(0.0, abs=1e-24)
    # a zero-residual line has a zero-width slope interval
    assert fit.ci_slope == pytest.approx(0.0, abs=1e-12)


def test_predict_and_ci():
    points = [(0.1, 0.2), (1.0, 0.45), (10.0, 0.62), (100.0, 0.9)]
    fit = fit_scaling(points)
    mid = fit.predict(1.0)
    assert isinstance(mid, float)
    assert mid == pytest.approx(fit.intercept, abs=1e-12)
    half = fit.ci_mean_at(1.0)
    assert isinstance(half, float) and half > 0
    # the interval is narrowest at the x-mean of the design points
    assert fit.ci_mean_at(10.0 ** fit.x_mean) <= half + 1e-15


def test_too_few_points_rejected():
    with pytest.raises(ConfigError):
        fit_scaling([(1.0, 0.5), (2.0, 0.6)])


def test_nonpositive_hours_rejected():
    with pytest.raises(ConfigError):
        fit_scaling([(1.0, 0.5), (0.0, 0.6), (2.0, 0.7)])
    with pytest.raises(ConfigError):
        fit_scaling([(1.0, 0.5), (-3.0, 0.6), (2.0, 0.7)])


def test_identical_hours_rejected():
    with pytest.raises(NumericError, match="rank"):
        fit_scaling([(1.0, 0.5), (1.0, 0.6), (1.0, 0.7)])


def test_curve_csv_layout(tmp_path):
    points = [(0.1, 0.2), (1.0, 0.5), (10.0, 0.7)]
    fit = fit_scaling(points)
    path = tmp_path / "curve.csv"
    write_curve_csv(fit, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "hours,accuracy,ci_lo,ci_hi"
    assert len(lines) == 1 + len(points)
    for line, (h0, a0) in zip(lines[1:], points):
        h, a, lo, hi = map(float, line.split(","))
        assert (h, a) == (h0, a0)
        # the CI brackets the fitted line, not the observed point
        assert lo <= fit.predict(h) <= hi
        assert hi - lo == pytest.approx(2 * fit.ci_mean_at(h), abs=1e-12)


def test_fit_serializes(tmp_path):
    import json

    fit = fit_scaling([(0.1, 0.2), (1.0, 0.5), (10.0, 0.7)])
    doc = json.loads(fit.to_json())
    assert doc["slope"] == fit.slope
    assert doc["n"] == 3
    assert doc["points"][0] == {"hours": 0.1, "accuracy": 0.2}
    path = tmp_path / "fit.json"
    fit.save(path)
    assert json.loads(path.read_text()) == doc
