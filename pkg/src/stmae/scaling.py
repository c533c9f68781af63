"""Log-linear data-scaling fit: accuracy regressed on log10(hours).

Ordinary least squares with 95% confidence intervals from the Student-t
distribution on n-2 degrees of freedom. The mean-prediction interval at
x0 has half-width t * s * sqrt(1/n + (x0 - xbar)^2 / Sxx).
"""

import json
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ConfigError, NumericError


@dataclass
class ScalingFit:
    """OLS fit of accuracy = intercept + slope * log10(hours)."""

    slope: float
    intercept: float
    residual_variance: float
    ci_slope: float      # 95% half-width
    ci_intercept: float  # 95% half-width
    points: list         # [(hours, accuracy), ...]
    n: int
    x_mean: float
    sxx: float
    t_crit: float

    def predict(self, hours):
        return float(self.intercept + self.slope * np.log10(hours))

    def ci_mean_at(self, hours):
        """95% half-width of the mean-prediction interval at `hours`."""
        x0 = np.log10(hours)
        s = np.sqrt(self.residual_variance)
        return float(self.t_crit * s * np.sqrt(
            1.0 / self.n + (x0 - self.x_mean) ** 2 / self.sxx))

    def to_json(self):
        return json.dumps(
            {"slope": self.slope, "intercept": self.intercept,
             "residual_variance": self.residual_variance,
             "ci_slope": self.ci_slope, "ci_intercept": self.ci_intercept,
             "n": self.n,
             "points": [{"hours": h, "accuracy": a} for h, a in self.points]},
            sort_keys=True)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")


def fit_scaling(points):
    """Fit the log-linear model to (hours, accuracy) pairs."""
    points = [(float(h), float(a)) for h, a in points]
    if len(points) < 3:
        raise ConfigError(f"scaling fit needs >= 3 points, got {len(points)}")
    if any(h <= 0 for h, _ in points):
        raise ConfigError("scaling fit needs positive hours")
    x = np.log10([h for h, _ in points])
    y = np.array([a for _, a in points])
    n = len(points)
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx <= 0 or np.ptp(x) == 0:
        raise NumericError("scaling fit is rank-deficient: all hours equal")
    sxy = float(np.sum((x - xm) * (y - ym)))
    slope = sxy / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    ssr = float(np.sum(resid ** 2))
    s2 = ssr / (n - 2)
    t_crit = float(stats.t.ppf(0.975, n - 2))
    se_slope = np.sqrt(s2 / sxx)
    se_intercept = np.sqrt(s2 * (1.0 / n + xm ** 2 / sxx))
    return ScalingFit(slope=float(slope), intercept=float(intercept),
                      residual_variance=float(s2),
                      ci_slope=float(t_crit * se_slope),
                      ci_intercept=float(t_crit * se_intercept),
                      points=points, n=n, x_mean=float(xm), sxx=sxx,
                      t_crit=t_crit)


def write_curve_csv(fit, path):
    """CSV of the fitted points with mean-prediction CI: hours,accuracy,ci_lo,ci_hi."""
    lines = ["hours,accuracy,ci_lo,ci_hi"]
    for h, a in fit.points:
        mid = fit.predict(h)
        half = fit.ci_mean_at(h)
        lines.append(f"{h!r},{a!r},{mid - half!r},{mid + half!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
