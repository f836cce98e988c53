"""Validated run configurations for the command-line tools.

Configs are YAML files. Every section rejects unknown keys, and paths are
resolved relative to the directory of the config file.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .simgen import ERROR_STRUCTURES

METHOD_ORDER = ("mrrce", "mrce", "group_lasso", "ridge", "sep_ridge", "sep_lasso", "ols")


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SimulationParams(Strict):
    n: int = Field(50, ge=2)
    p: int = Field(20, ge=1)
    q: int = Field(5, ge=1)
    rho: float = Field(0.0, ge=0.0, lt=1.0)
    sigma: float = Field(1.0, ge=0.0)
    s: float = Field(0.0, ge=0.0, le=1.0)
    s_g: float = Field(0.0, ge=0.0, le=1.0)
    rho_z: float = Field(0.7, gt=-1.0, lt=1.0)
    error_structure: Literal[ERROR_STRUCTURES] = "identity"
    rho_e: float = Field(0.0, gt=-1.0, lt=1.0)
    hurst: float = Field(0.95, gt=0.0, lt=1.0)


class SimulateConfig(Strict):
    simulation: SimulationParams = SimulationParams()
    seed: int = Field(0, ge=0)
    replication: int = Field(0, ge=0)


class GridParams(Strict):
    n_lambdas: int = Field(20, ge=1)
    lambda_ratio: float = Field(1e-3, gt=0.0, le=1.0)
    lambdas: Optional[list[float]] = None

    @field_validator("lambdas")
    @classmethod
    def _nonnegative(cls, v):
        if v is not None and (not v or min(v) < 0):
            raise ValueError("lambdas must be a nonempty list of nonnegative values")
        return v


class OlsParams(Strict):
    pass


class RidgeParams(GridParams):
    pass


class LassoParams(GridParams):
    folds: int = Field(3, ge=2)


class MrrceParams(GridParams):
    folds: int = Field(3, ge=2)
    tol: float = Field(1e-4, gt=0.0)
    max_iter: int = Field(200, ge=1)
    stopping_rule: Literal["loglik-relative", "parameter-change"] = "loglik-relative"


class MrceParams(Strict):
    folds: int = Field(5, ge=2)
    n_lambda1: int = Field(20, ge=1)
    n_lambda2: int = Field(20, ge=1)
    lambda_ratio: float = Field(1e-3, gt=0.0, le=1.0)
    lambda1: Optional[list[float]] = None
    lambda2: Optional[list[float]] = None
    tol: float = Field(1e-6, gt=0.0)
    max_iter: int = Field(50, ge=1)


PARAM_MODELS = {
    "mrrce": MrrceParams,
    "mrce": MrceParams,
    "group_lasso": LassoParams,
    "sep_lasso": LassoParams,
    "ridge": RidgeParams,
    "sep_ridge": RidgeParams,
    "ols": OlsParams,
}


class Roster(Strict):
    mrrce: Optional[MrrceParams] = None
    mrce: Optional[MrceParams] = None
    group_lasso: Optional[LassoParams] = None
    ridge: Optional[RidgeParams] = None
    sep_ridge: Optional[RidgeParams] = None
    sep_lasso: Optional[LassoParams] = None
    ols: Optional[OlsParams] = None

    @model_validator(mode="after")
    def _nonempty(self):
        if not self.methods():
            raise ValueError("roster must name at least one method")
        return self

    def methods(self) -> list[str]:
        return [m for m in METHOD_ORDER if getattr(self, m) is not None]

    def params(self, method: str):
        return getattr(self, method)


class BenchSimConfig(Strict):
    seed: int = Field(0, ge=0)
    replications: int = Field(50, ge=2)
    rhos: list[float] = [0.0, 0.2, 0.4, 0.6, 0.8]
    simulation: SimulationParams = SimulationParams()
    roster: Roster
    jobs: int = Field(1, ge=1)

    @field_validator("rhos")
    @classmethod
    def _rhos(cls, v):
        if not v or any(not 0.0 <= r < 1.0 for r in v):
            raise ValueError("rhos must be a nonempty list of values in [0, 1)")
        return v


class RecipeParams(Strict):
    start_date: str = "2016-01-01"
    weekly_order: int = Field(3, ge=1)
    yearly_order: int = Field(10, ge=1)
    n_changepoints: int = Field(31, ge=0)
    changepoint_range: float = Field(0.8, gt=0.0, le=1.0)
    holidays: Literal["us_federal", "none"] = "us_federal"


class PlanParams(Strict):
    protocol: Literal["rolling_origin", "kfold"] = "rolling_origin"
    initial_train: int = Field(365, ge=2)
    step: int = Field(14, ge=0)
    horizon: int = Field(14, ge=1)
    num_cutoffs: int = Field(26, ge=1)
    folds: int = Field(10, ge=2)


class BenchTsConfig(Strict):
    data: Path
    time_column: Optional[str] = "t"
    features: Optional[list[str]] = None
    recipe: Optional[RecipeParams] = RecipeParams()
    plan: PlanParams = PlanParams()
    scale_responses: bool = True
    standardize_features: bool = True
    roster: Roster
    seed: int = Field(0, ge=0)
    jobs: int = Field(1, ge=1)


class FitCmdConfig(Strict):
    Z: Path
    Y: Path
    method: Literal[METHOD_ORDER] = "mrrce"
    params: dict = {}
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _params(self):
        PARAM_MODELS[self.method](**self.params)
        return self

    def method_params(self):
        return PARAM_MODELS[self.method](**self.params)


class PredictConfig(Strict):
    model_dir: Path
    Z: Path


COMMAND_MODELS = {
    "simulate": SimulateConfig,
    "fit": FitCmdConfig,
    "predict": PredictConfig,
    "bench-sim": BenchSimConfig,
    "bench-ts": BenchTsConfig,
}


def _resolve_paths(model: BaseModel, base: Path):
    updates = {}
    for name, value in model:
        if isinstance(value, Path) and not value.is_absolute():
            updates[name] = base / value
    return model.model_copy(update=updates) if updates else model


def load_config(command: str, path: str | Path | None, overrides: dict | None = None):
    """Parse and validate the YAML config for ``command``.

    Raises ``pydantic.ValidationError`` (naming the offending field) or
    ``ValueError`` for files that are not a key-value mapping.
    """
    raw = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: config must be a key-value mapping")
        base = path.resolve().parent
    raw = {**raw, **(overrides or {})}
    model = COMMAND_MODELS[command].model_validate(raw)
    return _resolve_paths(model, base)


def config_hash(model: BaseModel) -> str:
    """Short SHA-256 of the canonical JSON form.

    Paths and the worker count are left out: moving the inputs or changing
    ``jobs`` does not change the results.
    """
    data = model.model_dump(mode="json")
    for key in ("data", "Z", "Y", "model_dir", "jobs"):
        data.pop(key, None)
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
