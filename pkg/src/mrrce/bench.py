"""Benchmark sweeps over simulated settings and time-series evaluation plans.

Both sweeps fit every rostered method on the same data, record one metric
value per (setting, replication, method) cell and aggregate into a
:class:`BenchmarkReport`. A failing cell is stored as NaN with its error
message, and the sweep continues.
"""
from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, em
from .config import METHOD_ORDER, BenchSimConfig, BenchTsConfig, config_hash
from .evaluation import (
    RollingOriginPlan,
    build_features,
    daily_recipe,
    forecast_mse,
    holiday_indices,
    kfold_split,
    iter_folds,
    model_error,
    paired_t_test,
    rolling_origin,
    scale_responses,
)
from .model import Dataset, center_columns
from .numerics import make_rng
from .simgen import SimConfig, simulate

log = logging.getLogger(__name__)

METHOD_LABELS = {
    "mrrce": "MrRCE",
    "mrce": "MRCE",
    "group_lasso": "Group Lasso",
    "ridge": "Ridge",
    "sep_ridge": "Sep. Ridge",
    "sep_lasso": "Sep. Lasso",
    "ols": "OLS",
}
REFERENCE = "mrrce"
FLOAT_FMT = "{:.16e}"


@dataclass(frozen=True)
class MethodFit:
    coef: np.ndarray
    hyperparams: dict
    detail: object = None  # FitResult for mrrce, the precision matrix for mrce


def _grid_or_none(params, attr="lambdas"):
    v = getattr(params, attr, None)
    return None if v is None else np.asarray(v, dtype=float)


def fit_method(name: str, data: Dataset, params, rng) -> MethodFit:
    """Fit one rostered method on centered ``data`` with its validated parameters."""
    if name == "mrrce":
        cfg = em.FitConfig(tol=params.tol, max_iter=params.max_iter, stopping_rule=params.stopping_rule)
        lambdas = _grid_or_none(params)
        if lambdas is None:
            lambdas = em.default_lambda_grid(data, params.n_lambdas, params.lambda_ratio)
        lam, _ = em.select_lambda(data, lambdas, params.folds, cfg, rng)
        res = em.fit(data, em.FitConfig(lam, cfg.tol, cfg.max_iter, cfg.stopping_rule))
        hp = {"lambda_omega": lam, "sigma2": res.theta.sigma2, "rho": res.theta.rho,
              "iterations": res.iterations, "converged": res.converged}
        return MethodFit(res.gamma_star, hp, res)
    if name == "mrce":
        g1 = _grid_or_none(params, "lambda1")
        g2 = _grid_or_none(params, "lambda2")
        d1, d2 = baselines.mrce_grids(data, params.n_lambda1, params.n_lambda2, params.lambda_ratio)
        est, omega, _ = baselines.mrce_cv(
            data, params.folds, d1 if g1 is None else g1, d2 if g2 is None else g2, rng, params.tol, params.max_iter
        )
        return MethodFit(est.B_hat, est.hyperparams, omega)
    if name in ("ridge", "sep_ridge"):
        lambdas = _grid_or_none(params)
        if lambdas is None:
            lambdas = baselines.log_grid(baselines.ridge_lambda_max(data), params.n_lambdas, params.lambda_ratio)
        fn = baselines.ridge_fit_shared if name == "ridge" else baselines.ridge_fit_separate
        est = fn(data, lambdas)
        return MethodFit(est.B_hat, est.hyperparams)
    if name == "sep_lasso":
        est = baselines.lasso_fit_separate(data, params.folds, _grid_or_none(params), rng)
        return MethodFit(est.B_hat, est.hyperparams)
    if name == "group_lasso":
        est = baselines.group_lasso_fit(data, params.folds, _grid_or_none(params), rng)
        return MethodFit(est.B_hat, est.hyperparams)
    if name == "ols":
        est = baselines.ols_fit(data)
        return MethodFit(est.B_hat, est.hyperparams)
    raise ValueError(f"unknown method {name!r}")


# ------------------------------------------------------------------ report


@dataclass
class BenchmarkReport:
    """Cell values keyed by ``(setting, replication, method)``.

    ``settings`` keeps the sweep order; ``setting_values`` holds the numeric
    grid value of each setting (``rho`` for simulations) for the plot data.
    """

    metric: str
    methods: list
    settings: list
    setting_values: list
    replications: int
    config_hash: str
    values: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def series(self, setting, method) -> np.ndarray:
        return np.array([self.values.get((setting, r, method), math.nan) for r in range(self.replications)])

    def summary(self, setting) -> list[dict]:
        """Rows for one setting sorted ascending by mean (failed-only methods last)."""
        rows = []
        ref = self.series(setting, REFERENCE) if REFERENCE in self.methods else None
        for m in self.methods:
            v = self.series(setting, m)
            ok = np.isfinite(v)
            mean = float(v[ok].mean()) if ok.any() else math.nan
            std = float(v[ok].std(ddof=1)) if ok.sum() > 1 else math.nan
            t = p = math.nan
            if ref is not None and m != REFERENCE:
                try:
                    t, p = paired_t_test(v, ref)
                except ValueError:
                    pass
            rows.append(dict(method=m, mean=mean, std=std, n_ok=int(ok.sum()), n_failed=int((~ok).sum()), t=t, p=p))
        rows.sort(key=lambda r: (math.isnan(r["mean"]), r["mean"], METHOD_ORDER.index(r["method"])))
        return rows

    def write(self, out: str | Path) -> None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        fmt = _fmt
        with open(out / "report.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["setting", "method", "label", "metric", "mean", "std", "n_ok", "n_failed",
                        "t_vs_mrrce", "p_vs_mrrce", "config_hash"])
            for s in self.settings:
                for r in self.summary(s):
                    w.writerow([s, r["method"], METHOD_LABELS[r["method"]], self.metric, fmt(r["mean"]), fmt(r["std"]),
                                r["n_ok"], r["n_failed"], fmt(r["t"]), fmt(r["p"]), self.config_hash])
        with open(out / "values.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["setting", "replication", "method", self.metric, "config_hash"])
            for s in self.settings:
                for r in range(self.replications):
                    for m in self.methods:
                        w.writerow([s, r, m, fmt(self.values.get((s, r, m), math.nan)), self.config_hash])
        with open(out / "plot_data.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["setting", "x"] + [f"mean_{m}" for m in self.methods] + ["config_hash"])
            for s, x in zip(self.settings, self.setting_values):
                means = {r["method"]: r["mean"] for r in self.summary(s)}
                w.writerow([s, fmt(x)] + [fmt(means[m]) for m in self.methods] + [self.config_hash])
        with open(out / "failures.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["setting", "replication", "method", "error", "config_hash"])
            for (s, r, m), msg in sorted(self.errors.items(), key=lambda kv: self._order(kv[0])):
                w.writerow([s, r, m, msg, self.config_hash])
        # wall time varies run to run, so it stays out of the byte-stable files
        with open(out / "timing.json", "w") as fh:
            json.dump({m: round(self.timings.get(m, 0.0), 3) for m in self.methods}, fh, indent=2)

    def _order(self, key):
        s, r, m = key
        return self.settings.index(s), r, self.methods.index(m)


def _fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return FLOAT_FMT.format(x)


def _fit_cell(name, data, params, rng):
    t0 = time.perf_counter()
    try:
        return fit_method(name, data, params, rng), None, time.perf_counter() - t0
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        log.warning("%s failed: %s", name, exc)
        return None, f"{type(exc).__name__}: {exc}", time.perf_counter() - t0


def _run_tasks(fn, tasks, jobs):
    """Apply ``fn`` to each task; results come back in task order regardless of ``jobs``."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def resolve_jobs(jobs: int | None, default: int = 1) -> int:
    if jobs is None:
        env = os.environ.get("MRRCE_JOBS")
        jobs = int(env) if env else default
    if jobs < 1:
        raise ValueError("jobs must be at least 1")
    return jobs


# ----------------------------------------------------------- simulation sweep


def _sim_task(task):
    cfg, rho_idx, rho, r = task
    sim = SimConfig(**{**cfg.simulation.model_dump(), "rho": rho, "seed": cfg.seed})
    inst = simulate(sim, r)
    data = center_columns(inst.data.Z, inst.data.Y)
    out = {}
    for m in cfg.roster.methods():
        # same CV folds for a replication at every rho
        rng = make_rng(cfg.seed, r, 1000 + METHOD_ORDER.index(m))
        res, err, secs = _fit_cell(m, data, cfg.roster.params(m), rng)
        val = model_error(inst.gamma_true, res.coef, inst.sigma_z) if res is not None else math.nan
        out[m] = (val, err, secs)
    return rho_idx, r, out


def run_sim_benchmark(cfg: BenchSimConfig, jobs: int = 1) -> BenchmarkReport:
    settings = [f"rho={rho:g}" for rho in cfg.rhos]
    report = BenchmarkReport("model_error", cfg.roster.methods(), settings, list(cfg.rhos), cfg.replications,
                             config_hash(cfg))
    tasks = [(cfg, i, rho, r) for i, rho in enumerate(cfg.rhos) for r in range(cfg.replications)]
    for i, r, out in _run_tasks(_sim_task, tasks, jobs):
        _store(report, settings[i], r, out)
    return report


def _store(report, setting, r, out):
    for m, (val, err, secs) in out.items():
        report.values[(setting, r, m)] = val
        report.timings[m] = report.timings.get(m, 0.0) + secs
        if err is not None:
            report.errors[(setting, r, m)] = err


# -------------------------------------------------------- time-series sweep


@dataclass(frozen=True)
class SeriesData:
    t: np.ndarray
    Y: np.ndarray
    extra: np.ndarray
    response_names: list


def read_series(path, time_column="t", features=None) -> SeriesData:
    """Read a header CSV; every column other than time and ``features`` is a response."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: no data rows")
    header, body = rows[0], rows[1:]
    features = list(features or [])
    missing = [c for c in ([time_column] if time_column else []) + features if c not in header]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    arr = np.array(body, dtype=float)
    col = {name: arr[:, i] for i, name in enumerate(header)}
    t = col[time_column].astype(int) if time_column else np.arange(len(body))
    if np.any(np.diff(t) <= 0):
        raise ValueError(f"{path}: time column must be strictly increasing")
    resp = [c for c in header if c != time_column and c not in features]
    if not resp:
        raise ValueError(f"{path}: no response columns")
    extra = np.column_stack([col[c] for c in features]) if features else np.empty((len(body), 0))
    return SeriesData(t, np.column_stack([col[c] for c in resp]), extra, resp)


def write_series(path, t, Y, names=None) -> None:
    names = names or [f"y{j + 1}" for j in range(Y.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + list(names))
        for ti, row in zip(t, Y):
            w.writerow([int(ti)] + [_fmt(v) for v in row])


def series_design(cfg: BenchTsConfig, series: SeriesData, n_train: int | None = None) -> np.ndarray:
    """Recipe features on the time index followed by any user feature columns.

    Trend changepoints are laid out over the first ``n_train`` observations
    (the training window of a split); holidays cover the whole series.
    """
    blocks = []
    if cfg.recipe is not None:
        rc = cfg.recipe
        n_days = int(series.t.max()) + 1
        span = n_days if n_train is None else int(series.t[n_train - 1]) + 1
        start = dt.date.fromisoformat(rc.start_date)
        hol = holiday_indices(start, n_days) if rc.holidays == "us_federal" else {}
        recipe = daily_recipe(n_days, start, rc.weekly_order, rc.yearly_order, rc.n_changepoints, hol,
                              trend_span=span, changepoint_range=rc.changepoint_range)
        blocks.append(build_features(recipe, series.t))
    if series.extra.shape[1]:
        blocks.append(series.extra)
    if not blocks:
        raise ValueError("no features: give a recipe or feature columns")
    return np.hstack(blocks)


def prepare_split(X, Y, train, test, standardize=True):
    """Training dataset and test predictors after window-local cleaning.

    Columns constant on the training window (holidays that have not occurred
    yet) are dropped; the rest are standardized with training moments when
    ``standardize`` is set.
    """
    Xtr, Xte = X[train], X[test]
    keep = Xtr.std(axis=0) > 1e-12
    Xtr, Xte = Xtr[:, keep], Xte[:, keep]
    if standardize:
        mu, sd = Xtr.mean(axis=0), Xtr.std(axis=0)
        Xtr, Xte = (Xtr - mu) / sd, (Xte - mu) / sd
    return center_columns(Xtr, Y[train]), Xte


def _ts_task(task):
    cfg, series, Y, k, train, test = task
    # expanding windows start at row 0, so the window length is the largest index + 1
    X = series_design(cfg, series, int(train.max()) + 1 if cfg.plan.protocol == "rolling_origin" else None)
    data, X_test = prepare_split(X, Y, train, test, cfg.standardize_features)
    out = {}
    for m in cfg.roster.methods():
        rng = make_rng(cfg.seed, k, 1000 + METHOD_ORDER.index(m))
        res, err, secs = _fit_cell(m, data, cfg.roster.params(m), rng)
        val = forecast_mse(Y[test], data.predict(res.coef, X_test)) if res is not None else math.nan
        out[m] = (val, err, secs)
    return k, out


def ts_splits(cfg: BenchTsConfig, n: int) -> list:
    plan = cfg.plan
    if plan.protocol == "rolling_origin":
        return rolling_origin(RollingOriginPlan(plan.initial_train, plan.step, plan.horizon, plan.num_cutoffs), n)
    return list(iter_folds(kfold_split(n, plan.folds, make_rng(cfg.seed, 0))))


def run_ts_benchmark(cfg: BenchTsConfig, jobs: int = 1) -> BenchmarkReport:
    series = read_series(cfg.data, cfg.time_column, cfg.features)
    # one fixed unit per response over the whole series, so split MSEs are comparable
    Y = scale_responses(series.Y)[0] if cfg.scale_responses else series.Y
    splits = ts_splits(cfg, len(series.t))
    report = BenchmarkReport("mse", cfg.roster.methods(), [cfg.plan.protocol], [0.0], len(splits), config_hash(cfg))
    tasks = [(cfg, series, Y, k, tr, te) for k, (tr, te) in enumerate(splits)]
    for k, out in _run_tasks(_ts_task, tasks, jobs):
        _store(report, cfg.plan.protocol, k, out)
    return report
