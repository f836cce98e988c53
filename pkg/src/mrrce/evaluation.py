"""Metrics, significance tests, resampling plans and time-series features."""
from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class MetricReport:
    """Per-replication values of one metric for one method.

    ``std`` is the sample standard deviation (``ddof=1``).
    """

    method: str
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @property
    def mean(self) -> float:
        v = np.asarray(self.values)
        v = v[np.isfinite(v)]
        return float(v.mean()) if v.size else math.nan

    @property
    def std(self) -> float:
        v = np.asarray(self.values)
        v = v[np.isfinite(v)]
        return float(v.std(ddof=1)) if v.size > 1 else math.nan


def model_error(gamma_true, gamma_hat, sigma_z) -> float:
    """``tr[(G - Ghat)' Sigma_Z (G - Ghat)]``."""
    gamma_true = np.asarray(gamma_true, dtype=float)
    gamma_hat = np.asarray(gamma_hat, dtype=float)
    sigma_z = np.asarray(sigma_z, dtype=float)
    if gamma_true.shape != gamma_hat.shape:
        raise ValueError(f"shape mismatch {gamma_true.shape} vs {gamma_hat.shape}")
    if sigma_z.shape != (gamma_true.shape[0],) * 2:
        raise ValueError("sigma_z does not match the number of predictors")
    diff = gamma_true - gamma_hat
    return float(max(np.sum(diff * (sigma_z @ diff)), 0.0))


def forecast_mse(y_true, y_pred) -> float:
    """Mean squared error normalized by ``n_test * q``."""
    y_true = np.atleast_2d(np.asarray(y_true, dtype=float))
    y_pred = np.atleast_2d(np.asarray(y_pred, dtype=float))
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch {y_true.shape} vs {y_pred.shape}")
    return float(np.mean((y_true - y_pred) ** 2))


def paired_t_test(a, b) -> tuple[float, float]:
    """Two-sided paired t-test on ``a - b``.

    Degenerate cases: all differences zero gives ``(0, 1)``; identical nonzero
    differences give ``(+-inf, 0)``. Pairs with a non-finite member are dropped.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-d with equal length")
    keep = np.isfinite(a) & np.isfinite(b)
    d = a[keep] - b[keep]
    if d.size < 2:
        raise ValueError("need at least two complete pairs")
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    t = mean / (sd / math.sqrt(d.size))
    p = 2.0 * stats.t.sf(abs(t), d.size - 1)
    return float(t), float(min(p, 1.0))


def kfold_split(n: int, k: int, rng) -> np.ndarray:
    """Random fold label for each of ``n`` observations; fold sizes differ by at most one."""
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    labels = np.arange(n) % k
    return labels[rng.permutation(n)]


def loo_split(n: int) -> np.ndarray:
    return np.arange(n)


def iter_folds(labels):
    """Yield ``(train_idx, test_idx)`` for each fold label in increasing order."""
    labels = np.asarray(labels)
    for f in np.unique(labels):
        yield np.flatnonzero(labels != f), np.flatnonzero(labels == f)


@dataclass(frozen=True)
class RollingOriginPlan:
    initial_train: int = 365
    step: int = 14
    horizon: int = 14
    num_cutoffs: int = 26

    def __post_init__(self):
        if min(self.initial_train, self.horizon, self.num_cutoffs) < 1 or self.step < 0:
            raise ValueError("plan sizes must be positive")

    @property
    def required_length(self) -> int:
        return self.initial_train + (self.num_cutoffs - 1) * self.step + self.horizon


def rolling_origin(plan: RollingOriginPlan, n: int | None = None) -> list:
    """Expanding-window splits as 0-based ``(train_idx, test_idx)`` pairs.

    Cutoff ``k`` trains on the first ``initial_train + k * step`` observations
    and tests on the following ``horizon``.
    """
    if n is not None and plan.required_length > n:
        raise ValueError(f"plan needs {plan.required_length} observations but only {n} are available")
    out = []
    for k in range(plan.num_cutoffs):
        end = plan.initial_train + k * plan.step
        out.append((np.arange(end), np.arange(end, end + plan.horizon)))
    return out


@dataclass(frozen=True)
class Fourier:
    period: float
    order: int

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError("period must be positive")
        if self.order < 1:
            raise ValueError("order must be at least 1")

    @property
    def width(self) -> int:
        return 2 * self.order

    def build(self, t, columns=None):
        arg = 2.0 * np.pi * np.outer(t, np.arange(1, self.order + 1)) / self.period
        out = np.empty((len(t), self.width))
        out[:, 0::2] = np.cos(arg)
        out[:, 1::2] = np.sin(arg)
        return out


@dataclass(frozen=True)
class Holiday:
    times: frozenset
    name: str = "holiday"

    def __post_init__(self):
        object.__setattr__(self, "times", frozenset(int(x) for x in self.times))

    width = 1

    def build(self, t, columns=None):
        return np.isin(np.asarray(t), list(self.times)).astype(float)[:, None]


@dataclass(frozen=True)
class PiecewiseTrend:
    changepoints: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "changepoints", tuple(float(c) for c in self.changepoints))

    @property
    def width(self) -> int:
        return 1 + len(self.changepoints)

    def build(self, t, columns=None):
        t = np.asarray(t, dtype=float)
        cols = [t] + [np.maximum(0.0, t - c) for c in self.changepoints]
        return np.column_stack(cols)


@dataclass(frozen=True)
class OneHot:
    """Indicators for ``levels[1:]`` of a categorical column (first level is the reference)."""

    column: str
    levels: tuple

    @property
    def width(self) -> int:
        return len(self.levels) - 1

    def build(self, t, columns=None):
        if columns is None or self.column not in columns:
            raise ValueError(f"categorical column {self.column!r} not supplied")
        vals = np.asarray(columns[self.column])
        return np.column_stack([(vals == lvl).astype(float) for lvl in self.levels[1:]])


@dataclass(frozen=True)
class FeatureRecipe:
    specs: tuple = field(default_factory=tuple)

    @property
    def width(self) -> int:
        return sum(s.width for s in self.specs)


def build_features(recipe: FeatureRecipe, t, columns=None) -> np.ndarray:
    """Design matrix with one block per spec, in recipe order."""
    t = np.asarray(t)
    if np.any(t < 0):
        raise ValueError("time indices must be nonnegative")
    blocks = [spec.build(t, columns) for spec in recipe.specs]
    if not blocks:
        return np.empty((len(t), 0))
    return np.hstack(blocks)


def scale_responses(Y) -> tuple[np.ndarray, np.ndarray]:
    """Divide each column by its maximum; returns the scaled matrix and the maxima."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    maxima = Y.max(axis=0)
    if np.any(maxima <= 0):
        raise ValueError("every response column needs a positive maximum")
    return Y / maxima, maxima


def unscale_responses(Y_scaled, maxima) -> np.ndarray:
    return np.asarray(Y_scaled) * np.asarray(maxima)


def _nth_weekday(year, month, weekday, nth):
    d = dt.date(year, month, 1)
    d += dt.timedelta(days=(weekday - d.weekday()) % 7)
    return d + dt.timedelta(weeks=nth - 1)


def _last_weekday(year, month, weekday):
    d = dt.date(year + (month == 12), month % 12 + 1, 1) - dt.timedelta(days=1)
    return d - dt.timedelta(days=(d.weekday() - weekday) % 7)


US_FEDERAL_HOLIDAYS = {
    "new_year": lambda y: dt.date(y, 1, 1),
    "mlk_day": lambda y: _nth_weekday(y, 1, 0, 3),
    "presidents_day": lambda y: _nth_weekday(y, 2, 0, 3),
    "memorial_day": lambda y: _last_weekday(y, 5, 0),
    "independence_day": lambda y: dt.date(y, 7, 4),
    "labor_day": lambda y: _nth_weekday(y, 9, 0, 1),
    "columbus_day": lambda y: _nth_weekday(y, 10, 0, 2),
    "veterans_day": lambda y: dt.date(y, 11, 11),
    "thanksgiving": lambda y: _nth_weekday(y, 11, 3, 4),
    "christmas": lambda y: dt.date(y, 12, 25),
}


def holiday_indices(start: dt.date, n_days: int, calendar=US_FEDERAL_HOLIDAYS) -> dict:
    """Day offsets from ``start`` at which each named holiday falls."""
    end = start + dt.timedelta(days=n_days)
    out = {}
    for name, rule in calendar.items():
        days = set()
        for year in range(start.year, end.year + 1):
            off = (rule(year) - start).days
            if 0 <= off < n_days:
                days.add(off)
        out[name] = frozenset(days)
    return out


def daily_recipe(
    n_days: int,
    start: dt.date = dt.date(2016, 1, 1),
    weekly_order: int = 3,
    yearly_order: int = 10,
    n_changepoints: int = 31,
    holidays: dict | None = None,
    trend_span: int | None = None,
    changepoint_range: float = 1.0,
) -> FeatureRecipe:
    """Weekly and yearly Fourier terms, holiday indicators and a piecewise-linear trend.

    The defaults give 6 + 20 + 10 + 32 = 68 columns with the ten US federal
    holidays. Changepoints are spread evenly over the interior of the first
    ``changepoint_range`` fraction of ``trend_span`` days (default: the whole
    series). Forecasting uses the training window with a range below one, so
    no hinge starts just before the cutoff.
    """
    if not 0.0 < changepoint_range <= 1.0:
        raise ValueError("changepoint_range must lie in (0, 1]")
    span = n_days if trend_span is None else trend_span
    holidays = holiday_indices(start, n_days) if holidays is None else holidays
    cps = tuple(np.linspace(0, changepoint_range * span, n_changepoints + 2)[1:-1].round(6))
    specs = [Fourier(7.0, weekly_order), Fourier(365.25, yearly_order)]
    specs += [Holiday(days, name) for name, days in holidays.items()]
    specs.append(PiecewiseTrend(cps))
    return FeatureRecipe(tuple(specs))
