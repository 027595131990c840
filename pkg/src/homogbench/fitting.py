"""Least-squares rate fits on log-log data."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import TooFewPoints


@dataclass(frozen=True)
class RateReport:
    params: tuple
    values: tuple
    slope: float
    intercept: float
    r2: float
    zero: bool = False
    descriptor: dict = field(default_factory=dict, compare=False)

    def to_json(self) -> dict:
        return {
            "params": list(self.params),
            "values": list(self.values),
            "slope": None if self.zero else self.slope,
            "intercept": None if self.zero else self.intercept,
            "r2": None if self.zero else self.r2,
            "zero": self.zero,
            "descriptor": self.descriptor,
        }


def fit_rate(params, values, descriptor=None, min_points: int = 4,
             zero_floor: float = 0.0) -> RateReport:
    """Fit ``log y = slope * log x + intercept``.

    If every value is at or below ``zero_floor`` the data are reported as an
    identically-zero case with NaN fit statistics.
    """
    x = np.asarray(params, dtype=float)
    y = np.asarray(values, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("params and values must be 1-D sequences of equal length")
    if x.size < min_points:
        raise TooFewPoints(f"need at least {min_points} points, got {x.size}")
    steps = np.diff(x)
    if not (np.all(steps > 0) or np.all(steps < 0)):
        raise ValueError("parameters must be strictly monotone")
    if np.any(x <= 0):
        raise ValueError("parameters must be positive")
    desc = dict(descriptor or {})
    if np.all(np.abs(y) <= zero_floor):
        nan = float("nan")
        return RateReport(tuple(x.tolist()), tuple(y.tolist()), nan, nan, nan, True, desc)
    if np.any(y <= 0):
        raise ValueError("values must be positive unless identically zero")
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return RateReport(tuple(x.tolist()), tuple(y.tolist()), float(slope), float(intercept),
                      float(r2), False, desc)


def local_slopes(report: RateReport) -> list[float]:
    """Slopes between consecutive points, useful for spotting pre-asymptotic ranges."""
    x, y = report.params, report.values
    return [math.log(y[i + 1] / y[i]) / math.log(x[i + 1] / x[i]) for i in range(len(x) - 1)]
