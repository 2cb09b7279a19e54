"""Classical comparison forecasters: static lag, historical average, ARIMA.

All three consume a regular grid. Irregular samples are linearly interpolated
onto a regular grid over the observed span first; forecasts come back on a
regular horizon grid and are interpolated onto the sample's own forecast
times for scoring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class BaselineError(ValueError):
    pass


# ---------------------------------------------------------------------------
# static lag model


@dataclass
class StaticModel:
    p: int = 1

    def __post_init__(self):
        if self.p < 1:
            raise BaselineError("lag p must be at least 1")


def static_predict(model, history, horizon):
    """Repeat the value seen p steps earlier, consuming own forecasts as needed."""
    history = list(np.asarray(history, dtype=np.float64))
    if len(history) < model.p:
        raise BaselineError(f"history shorter than lag {model.p}")
    series = history[:]
    for i in range(horizon):
        series.append(series[len(series) - model.p])
    return np.array(series[len(history):])


# ---------------------------------------------------------------------------
# historical average


@dataclass
class HistoricalAverage:
    period: int
    decay: float = 0.9

    def __post_init__(self):
        if self.period < 1:
            raise BaselineError("period must be at least 1")
        if not (0.0 < self.decay <= 1.0):
            raise BaselineError("decay must be in (0, 1]")


def ha_predict(model, history, horizon):
    """Exponentially weighted mean of the same phase in all past seasons."""
    history = np.asarray(history, dtype=np.float64)
    n = len(history)
    if n < model.period:
        raise BaselineError(f"history shorter than one period ({model.period})")
    out = np.empty(horizon)
    for i in range(horizon):
        t = n + i
        num = den = 0.0
        j = 0
        idx = t - model.period
        while idx >= n:  # step back to the last in-history season at this phase
            idx -= model.period
        while idx >= 0:
            w = model.decay ** j
            num += w * history[idx]
            den += w
            j += 1
            idx -= model.period
        out[i] = num / den
    return out


def estimate_period(history, min_cycles=1.0):
    """Dominant season length in steps via the lowest strong DFT peak.

    The series is detrended with a cubic fit first so a trend does not mask
    the oscillatory bands; among bins within 50% of the peak magnitude the
    lowest frequency wins (the longest meaningful season).
    """
    history = np.asarray(history, dtype=np.float64)
    n = len(history)
    x = np.arange(n)
    trend = np.polyval(np.polyfit(x, history, 3), x)
    resid = history - trend
    mags = np.abs(np.fft.rfft(resid))
    mags[0] = 0.0
    lo = max(1, int(math.ceil(min_cycles)))
    if mags[lo:].size == 0 or mags[lo:].max() == 0:
        return n
    peak = mags[lo:].max()
    for f in range(lo, len(mags)):
        if mags[f] >= 0.5 * peak:
            return max(1, int(round(n / f)))
    return n


# ---------------------------------------------------------------------------
# ARIMA via Hannan-Rissanen


@dataclass
class ArimaModel:
    p: int
    d: int
    q: int
    phi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    theta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    intercept: float = 0.0
    sigma2: float = 0.0
    aic: float = float("inf")
    _tail_y: np.ndarray | None = None
    _tail_e: np.ndarray | None = None
    _last_levels: np.ndarray | None = None
    fitted: bool = False

    def __post_init__(self):
        if self.d not in (0, 1, 2):
            raise BaselineError("d must be 0, 1 or 2")
        if self.p < 0 or self.q < 0:
            raise BaselineError("orders must be non-negative")


def _difference(series, d):
    out = np.asarray(series, dtype=np.float64)
    heads = []
    for _ in range(d):
        heads.append(out[-1])
        out = np.diff(out)
    return out, heads


def _ols(X, y):
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    if not np.all(np.isfinite(coef)):
        raise BaselineError("singular normal equations in ARIMA fit")
    return coef


def _long_ar_residuals(y, m):
    n = len(y)
    X = np.column_stack([np.ones(n - m)] + [y[m - i - 1: n - i - 1] for i in range(m)])
    coef = _ols(X, y[m:])
    resid = np.zeros(n)
    resid[m:] = y[m:] - X @ coef
    return resid


def _max_char_root(coeffs):
    """Largest root modulus of z^k - c1 z^(k-1) - ... - ck (0 if no coeffs)."""
    if len(coeffs) == 0:
        return 0.0
    roots = np.roots(np.concatenate([[1.0], -np.asarray(coeffs)]))
    return float(np.max(np.abs(roots)))


def arima_fit(series, orders):
    """Hannan-Rissanen estimation: long-AR residual proxy, then least squares."""
    p, d, q = orders
    series = np.asarray(series, dtype=np.float64)
    if len(series) <= 10 * (p + d + q):
        raise BaselineError(
            f"series of length {len(series)} too short for orders {orders}"
        )
    model = ArimaModel(p=p, d=d, q=q)
    y, _ = _difference(series, d)
    n = len(y)

    if q > 0:
        m = max(p + q, min(20, n // 4))
        e = _long_ar_residuals(y, m)
        start = max(p, m + q)
    else:
        e = np.zeros(n)
        start = p

    # constant term only for the undifferenced case (standard convention;
    # with d > 0 and no AR/MA terms the forecast is then a pure random walk)
    use_const = d == 0
    cols = [np.ones(n - start)] if use_const else []
    for i in range(1, p + 1):
        cols.append(y[start - i: n - i])
    for j in range(1, q + 1):
        cols.append(e[start - j: n - j])
    if cols:
        X = np.column_stack(cols)
        coef = _ols(X, y[start:])
        resid = y[start:] - X @ coef
    else:
        coef = np.zeros(0)
        resid = y[start:].copy()
    n_eff = n - start
    sigma2 = float(resid @ resid / max(n_eff, 1))

    k0 = 1 if use_const else 0
    model.intercept = float(coef[0]) if use_const else 0.0
    model.phi = coef[k0: k0 + p].copy()
    model.theta = coef[k0 + p: k0 + p + q].copy()
    model.sigma2 = sigma2
    model.aic = n_eff * math.log(max(sigma2, 1e-300)) + 2 * (p + q + 1)

    # reject estimates outside the stationary/invertible region: a non-stationary
    # AR part makes the forecast recursion explode and a non-invertible MA part
    # makes the in-sample residual recursion explode
    if _max_char_root(model.phi) >= 1.0 - 1e-8:
        raise BaselineError(f"non-stationary AR coefficients for orders {orders}")
    if _max_char_root(-model.theta) >= 1.0 - 1e-8:
        raise BaselineError(f"non-invertible MA coefficients for orders {orders}")

    # in-sample residual recursion so forecasting has MA lags to start from
    e_full = np.zeros(n)
    for t in range(n):
        pred = model.intercept
        for i in range(1, p + 1):
            if t - i >= 0:
                pred += model.phi[i - 1] * y[t - i]
        for j in range(1, q + 1):
            if t - j >= 0:
                pred += model.theta[j - 1] * e_full[t - j]
        e_full[t] = y[t] - pred
    model._tail_y = y[-max(p, 1):].copy() if p else np.zeros(0)
    model._tail_e = e_full[-max(q, 1):].copy() if q else np.zeros(0)
    _, heads = _difference(series, d)
    model._last_levels = np.array(heads)
    model.fitted = True
    return model


def arima_predict(model, horizon):
    """Recursive forecast with future shocks at zero, then re-integrate."""
    if not model.fitted:
        raise BaselineError("predict before fit")
    y_hist = list(model._tail_y)
    e_hist = list(model._tail_e)
    out = []
    for _ in range(horizon):
        pred = model.intercept
        for i in range(1, model.p + 1):
            pred += model.phi[i - 1] * y_hist[-i]
        for j in range(1, model.q + 1):
            pred += model.theta[j - 1] * e_hist[-j]
        out.append(pred)
        if model.p:
            y_hist.append(pred)
        if model.q:
            e_hist.append(0.0)
    fc = np.array(out)
    # invert the d differencing passes, innermost first
    for level in reversed(model._last_levels):
        fc = level + np.cumsum(fc)
    if not np.all(np.isfinite(fc)):
        raise BaselineError("non-finite ARIMA forecast")
    return fc


def arima_auto(series, p_grid=(0, 1, 2), d_grid=(0, 1), q_grid=(0, 1, 2)):
    """Order selection by minimum AIC over a small grid."""
    best = None
    for d in d_grid:
        for p in p_grid:
            for q in q_grid:
                if len(series) <= 10 * (p + d + q):
                    continue
                try:
                    cand = arima_fit(series, (p, d, q))
                except (BaselineError, np.linalg.LinAlgError):
                    continue
                if best is None or cand.aic < best.aic:
                    best = cand
    if best is None:
        raise BaselineError("no ARIMA order could be fitted")
    return best


# ---------------------------------------------------------------------------
# sample-level scoring on irregular samples


def regularize_history(sample):
    """Observed prefix interpolated onto a regular grid of split_index points."""
    t = sample.observed_times
    v = sample.observed_values
    grid = np.linspace(t[0], t[-1], sample.split_index)
    return grid, np.interp(grid, t, v)


def baseline_forecast(name, sample, ha_decay=0.9, static_p=None):
    """Forecast values at the sample's own forecast times, raw units."""
    grid, hist = regularize_history(sample)
    step = grid[1] - grid[0]
    horizon_end = sample.times[-1]
    n_steps = max(len(sample.forecast_times),
                  int(math.ceil((horizon_end - grid[-1]) / step)))
    future_grid = grid[-1] + step * np.arange(1, n_steps + 1)

    if name == "static":
        # default is the persistence lag: the naive fixed-offset predictor
        p = static_p if static_p is not None else 1
        fc = static_predict(StaticModel(p=min(p, len(hist))), hist, n_steps)
    elif name == "ha":
        period = min(estimate_period(hist), len(hist))
        fc = ha_predict(HistoricalAverage(period=period, decay=ha_decay),
                        hist, n_steps)
    elif name == "arima":
        fc = arima_predict(arima_auto(hist), n_steps)
    else:
        raise BaselineError(f"unknown baseline {name!r}")
    return np.interp(sample.forecast_times, future_grid, fc)


def baseline_mse(name, samples, **kwargs):
    """Mean forecast-half MSE of a baseline across samples, raw units."""
    errs = []
    for s in samples:
        pred = baseline_forecast(name, s, **kwargs)
        errs.append(float(np.mean((pred - s.forecast_values) ** 2)))
    return float(np.mean(errs)), errs
