"""Hourly regulating-energy forecasting and the short-term frequency predictor.

The hourly quantity is the frequency-deviation integral
``W_g = sum_k (f_nominal - f_k) * dt / 3600`` in Hz*h, so that
``sigma_f * W_g`` is the regulating energy of hour ``g`` in kWh.

The seasonal model approximates SARIMA(6,0,0)(0,1,1)_24 by ordinary least
squares on the seasonally differenced series ``y_g = W_g - W_{g-24}`` with
regressors ``y_{g-1..g-p}`` plus optional seasonal lags (24, 48 by default);
the seasonal MA term is not estimated.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import FrequencyTrace

__all__ = [
    "ForecastKind",
    "HourlyIntegralSeries",
    "WForecast",
    "ForecastModel",
    "InsufficientData",
    "TraceTooShort",
    "AllZeroResiduals",
    "integrate_hourly",
    "fit",
    "predict_next_hour",
    "gamma_t",
    "durbin_watson",
    "short_term_frequency",
    "backtest",
]

SEASON = 24


class InsufficientData(ValueError):
    pass


class TraceTooShort(ValueError):
    pass


class AllZeroResiduals(ValueError):
    pass


class ForecastKind(str, enum.Enum):
    PERSISTENCE = "persistence"
    SEASONAL_NAIVE = "seasonal_naive"
    SEASONAL_AR = "seasonal_ar"


@dataclass(frozen=True)
class HourlyIntegralSeries:
    values: np.ndarray
    t0_hour: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise ValueError("hourly integrals must be finite")
        if np.any(np.abs(v) > 0.5):
            raise ValueError("|W_g| > 0.5 Hz*h is not a plausible frequency integral")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    def append(self, w: float) -> "HourlyIntegralSeries":
        return HourlyIntegralSeries(np.append(self.values, w), self.t0_hour)


@dataclass(frozen=True)
class WForecast:
    """Point forecast and non-negative half-widths of the confidence band."""

    w_hat: float
    w_up: float = 0.0
    w_down: float = 0.0
    level: float = 0.95

    def __post_init__(self):
        if self.w_up < 0 or self.w_down < 0:
            raise ValueError("band half-widths must be non-negative")


@dataclass(frozen=True)
class ForecastModel:
    kind: ForecastKind
    level: float = 0.95
    ar_order: int = 0
    seasonal_period: int = SEASON
    seasonal_lags: tuple[int, ...] = ()
    coefficients: np.ndarray = field(default_factory=lambda: np.zeros(0))
    resid_quantiles: tuple[float, float] = (0.0, 0.0)
    resid_sigma: float = 0.0
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ridge: bool = False

    @property
    def lags(self) -> tuple[int, ...]:
        return tuple(range(1, self.ar_order + 1)) + tuple(self.seasonal_lags)

    @property
    def min_history(self) -> int:
        if self.kind is ForecastKind.PERSISTENCE:
            return 1
        if self.kind is ForecastKind.SEASONAL_NAIVE:
            return self.seasonal_period
        return self.seasonal_period + max(self.lags, default=0)


def integrate_hourly(trace: FrequencyTrace, f_nominal: float = 50.0) -> HourlyIntegralSeries:
    """Hourly integrals of ``f_nominal - f`` over complete UTC hours of ``trace``."""
    per_hour = 3600.0 / trace.dt
    if abs(per_hour - round(per_hour)) > 1e-9:
        raise ValueError("trace dt must divide one hour")
    per_hour = int(round(per_hour))
    start = math.ceil(trace.t0 / 3600.0 - 1e-9) * 3600.0
    offset = int(round((start - trace.t0) / trace.dt))
    n_hours = (len(trace) - offset) // per_hour
    if n_hours < 1:
        raise TraceTooShort("trace does not span one full aligned hour")
    dev = trace.deviation(f_nominal)[offset: offset + n_hours * per_hour]
    w = dev.reshape(n_hours, per_hour).sum(axis=1) * trace.dt / 3600.0
    return HourlyIntegralSeries(w, start)


def _design(w: np.ndarray, lags: Sequence[int], season: int) -> tuple[np.ndarray, np.ndarray]:
    y = w[season:] - w[:-season]
    start = max(lags, default=0)
    rows = np.arange(start, y.size)
    X = np.column_stack([y[rows - lag] for lag in lags]) if lags else np.zeros((rows.size, 0))
    return X, y[rows]


def _residual_summary(r: np.ndarray, level: float) -> tuple[tuple[float, float], float]:
    a = (1.0 - level) / 2.0
    lo, hi = np.quantile(r, [a, 1.0 - a])
    return (float(lo), float(hi)), float(np.std(r))


def fit(series: HourlyIntegralSeries | Sequence[float], kind: ForecastKind | str,
        level: float = 0.95, ar_order: int = 6,
        seasonal_lags: Iterable[int] = (24, 48)) -> ForecastModel:
    """Fit a forecaster of the next-hour integral.

    Raises
    ------
    InsufficientData
        Fewer than 2 (persistence), 25 (seasonal naive) or
        ``10 * (ar_order + 24)`` (seasonal AR) hourly values.
    """
    kind = ForecastKind(kind)
    w = np.asarray(getattr(series, "values", series), dtype=float)
    if kind is ForecastKind.PERSISTENCE:
        if w.size < 2:
            raise InsufficientData("persistence needs >= 2 hours")
        r = w[1:] - w[:-1]
        q, s = _residual_summary(r, level)
        return ForecastModel(kind, level, resid_quantiles=q, resid_sigma=s, residuals=r)
    if kind is ForecastKind.SEASONAL_NAIVE:
        if w.size < SEASON + 1:
            raise InsufficientData("seasonal naive needs >= 25 hours")
        r = w[SEASON:] - w[:-SEASON]
        q, s = _residual_summary(r, level)
        return ForecastModel(kind, level, resid_quantiles=q, resid_sigma=s, residuals=r)

    seasonal_lags = tuple(int(s) for s in seasonal_lags)
    need = 10 * (ar_order + SEASON)
    if w.size < need:
        raise InsufficientData(f"seasonal AR needs >= {need} hours, got {w.size}")
    lags = tuple(range(1, ar_order + 1)) + seasonal_lags
    X, y = _design(w, lags, SEASON)
    ridge = False
    if X.shape[1]:
        if np.linalg.matrix_rank(X) < X.shape[1]:
            ridge = True
            beta = np.linalg.solve(X.T @ X + 1e-8 * np.eye(X.shape[1]), X.T @ y)
        else:
            beta = np.linalg.lstsq(X, y, rcond=None)[0]
        r = y - X @ beta
    else:
        beta = np.zeros(0)
        r = y
    q, s = _residual_summary(r, level)
    return ForecastModel(kind, level, ar_order, SEASON, seasonal_lags, beta, q, s, r, ridge)


def _point(model: ForecastModel, w: np.ndarray) -> float:
    if w.size < model.min_history:
        raise InsufficientData(f"{model.kind.value} needs {model.min_history} hours of history")
    if model.kind is ForecastKind.PERSISTENCE:
        return float(w[-1])
    S = model.seasonal_period
    if model.kind is ForecastKind.SEASONAL_NAIVE:
        return float(w[-S])
    y = w[S:] - w[:-S]
    y_hat = sum(c * y[-lag] for c, lag in zip(model.coefficients, model.lags))
    return float(w[-S] + y_hat)


def predict_next_hour(model: ForecastModel, history: HourlyIntegralSeries | Sequence[float]) -> WForecast:
    """Point forecast plus the empirical residual-quantile band."""
    w = np.asarray(getattr(history, "values", history), dtype=float)
    w_hat = _point(model, w)
    lo, hi = model.resid_quantiles
    return WForecast(w_hat, max(hi, 0.0), max(-lo, 0.0), model.level)


def gamma_t(residuals: Sequence[float], k_sigma: float = 2.0) -> float:
    """Fraction of residuals with ``|r| >= k * std(r)``."""
    r = np.asarray(residuals, dtype=float)
    if r.size == 0:
        raise ValueError("need at least one residual")
    sigma = float(np.std(r))
    if sigma == 0.0:
        return 0.0
    return float(np.mean(np.abs(r) >= k_sigma * sigma))


def durbin_watson(residuals: Sequence[float]) -> float:
    r = np.asarray(residuals, dtype=float)
    if r.size < 2:
        raise ValueError("need at least two residuals")
    den = float(r @ r)
    if den == 0.0:
        raise AllZeroResiduals("Durbin-Watson undefined for all-zero residuals")
    return float(np.sum(np.diff(r) ** 2) / den)


def short_term_frequency(past: FrequencyTrace | Sequence[float], horizon_p: int) -> np.ndarray:
    """Persistence forecast: the last measured frequency repeated ``horizon_p`` times."""
    samples = getattr(past, "samples", past)
    if horizon_p <= 0:
        return np.zeros(0)
    return np.full(horizon_p, float(samples[-1]))


def backtest(series: HourlyIntegralSeries | Sequence[float],
             kinds: Iterable[ForecastKind | str] = tuple(ForecastKind),
             train_frac: float = 0.7, level: float = 0.95, ar_order: int = 6,
             seasonal_lags: Iterable[int] = (24, 48), scale: float = 1.0) -> list[dict]:
    """One-step-ahead hold-out evaluation of each model kind.

    Models are fitted on the first ``train_frac`` of the series and evaluated
    on the rest with the true history revealed hour by hour. ``scale``
    converts integrals to reporting units (``sigma_f`` gives kWh).
    """
    w = np.asarray(getattr(series, "values", series), dtype=float)
    n_train = int(round(train_frac * w.size))
    rows = []
    for kind in kinds:
        model = fit(w[:n_train], kind, level, ar_order, seasonal_lags)
        start = max(n_train, model.min_history)
        pred = np.array([_point(model, w[:g]) for g in range(start, w.size)])
        r = (w[start:] - pred) * scale
        if r.size < 2:
            raise InsufficientData("hold-out split too short")
        rows.append(
            {
                "model": ForecastKind(kind).value,
                "n_train": n_train,
                "n_test": int(r.size),
                "mse": float(np.mean(r ** 2)),
                "sigma": float(np.std(r)),
                "gamma_95": gamma_t(r, 2.0),
                "gamma_99": gamma_t(r, 3.0),
                "dw": durbin_watson(r) if np.any(r) else float("nan"),
            }
        )
    return rows
