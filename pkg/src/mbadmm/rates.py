"""Least-squares slope of ``log err`` against ``log t``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RateWindowError

MIN_POINTS = 10


@dataclass(frozen=True)
class RateReport:
    window: tuple
    slope: float
    intercept: float
    r_squared: float
    points: int


def fit_loglog(x, y):
    """Slope, intercept and R^2 of the line through ``(log x, log y)``."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    slope, intercept = np.polyfit(lx, ly, 1)
    ss_res = float(np.sum((ly - (slope * lx + intercept)) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    return float(slope), float(intercept), r2


def fit_rate(series, window=None, ts=None) -> RateReport:
    """Fit ``series[t]`` over ``t in [t_lo, t_hi)``.

    ``series`` is indexed by ``t`` (or paired with ``ts``). The default window
    is the last half of the series. Nonpositive values are dropped because
    their logarithm is undefined; at least ten positive points must remain.
    """
    y = np.asarray(series, dtype=float)
    t = np.arange(y.size, dtype=float) if ts is None else np.asarray(ts, dtype=float)
    n = y.size
    if window is None:
        window = (n // 2, n)
    lo, hi = int(window[0]), int(window[1])
    if not (0 <= lo < hi <= n):
        raise RateWindowError(f"window ({lo}, {hi}) is not inside a series of length {n}")
    tw, yw = t[lo:hi], y[lo:hi]
    keep = (yw > 0) & (tw > 0) & np.isfinite(yw)
    if keep.sum() < MIN_POINTS:
        raise RateWindowError(f"window ({lo}, {hi}) has {int(keep.sum())} usable points, need {MIN_POINTS}")
    slope, intercept, r2 = fit_loglog(tw[keep], yw[keep])
    return RateReport((lo, hi), slope, intercept, r2, int(keep.sum()))
