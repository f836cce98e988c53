"""Command-line entry point: ``python -m mrrce <command> --config FILE``.

Exit status is 0 on success, 2 when the config fails validation and 3 when a
solver fails; other input errors exit with 1.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml
from pydantic import ValidationError

from .bench import _fmt, fit_method, resolve_jobs, run_sim_benchmark, run_ts_benchmark
from .config import config_hash, load_config
from .model import Dataset, center_columns
from .numerics import NumericalError, make_rng
from .simgen import SimConfig, simulate

log = logging.getLogger("mrrce")

EXIT_INPUT, EXIT_SCHEMA, EXIT_SOLVER = 1, 2, 3


def write_matrix(path, M, prefix) -> None:
    M = np.atleast_2d(M)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"{prefix}{j + 1}" for j in range(M.shape[1])])
        for row in M:
            w.writerow([_fmt(v) for v in row])


def read_matrix(path) -> np.ndarray:
    """Numeric CSV with one header row."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: no data rows")
    try:
        return np.array(rows[1:], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


def _dump(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_simulate(cfg, out: Path, jobs: int) -> None:
    sim = SimConfig(**cfg.simulation.model_dump(), seed=cfg.seed)
    inst = simulate(sim, cfg.replication)
    write_matrix(out / "Z.csv", inst.data.Z, "z")
    write_matrix(out / "Y.csv", inst.data.Y, "y")
    write_matrix(out / "gamma_true.csv", inst.gamma_true, "y")
    write_matrix(out / "sigma_z.csv", inst.sigma_z, "z")
    write_matrix(out / "error_cov.csv", inst.error_cov, "y")
    _dump(out / "meta.json", {"seed": cfg.seed, "replication": cfg.replication,
                              "config": cfg.model_dump(mode="json"), "config_hash": config_hash(cfg)})


def cmd_fit(cfg, out: Path, jobs: int) -> None:
    Z, Y = read_matrix(cfg.Z), read_matrix(cfg.Y)
    if Z.shape[0] != Y.shape[0]:
        raise ValueError(f"Z has {Z.shape[0]} rows but Y has {Y.shape[0]}")
    data = center_columns(Z, Y)
    res = fit_method(cfg.method, data, cfg.method_params(), make_rng(cfg.seed))
    coef_file = "gamma_star.csv" if cfg.method == "mrrce" else "B_hat.csv"
    write_matrix(out / coef_file, res.coef, "y")
    _dump(out / "centering.json", {"z_mean": data.z_mean.tolist(), "y_mean": data.y_mean.tolist()})
    if cfg.method == "mrrce":
        fr = res.detail
        _dump(out / "theta.json", {
            "omega": fr.theta.omega.tolist(),
            "omega_transformed": fr.omega_transformed.tolist(),
            "sigma2": fr.theta.sigma2,
            "rho": fr.theta.rho,
            "lambda_omega": fr.lambda_omega,
            "iterations": fr.iterations,
            "converged": fr.converged,
        })
    elif cfg.method == "mrce":
        _dump(out / "theta.json", {"omega": np.asarray(res.detail).tolist(), **res.hyperparams})
    _dump(out / "fit_report.json", {
        "method": cfg.method,
        "coefficients": coef_file,
        "n": data.n, "p": data.p, "q": data.q,
        "hyperparams": res.hyperparams,
        "seed": cfg.seed,
        "config_hash": config_hash(cfg),
    })


def cmd_predict(cfg, out: Path, jobs: int) -> None:
    model_dir = Path(cfg.model_dir)
    with open(model_dir / "fit_report.json") as fh:
        report = json.load(fh)
    with open(model_dir / "centering.json") as fh:
        cen = json.load(fh)
    coef = read_matrix(model_dir / report["coefficients"])
    Z = read_matrix(cfg.Z)
    if Z.shape[1] != coef.shape[0]:
        raise ValueError(f"Z has {Z.shape[1]} columns but the model expects {coef.shape[0]}")
    data = Dataset(np.zeros((1, coef.shape[0])), np.zeros((1, coef.shape[1])),
                   np.asarray(cen["z_mean"]), np.asarray(cen["y_mean"]))
    write_matrix(out / "predictions.csv", data.predict(coef, Z), "y")


def cmd_bench_sim(cfg, out: Path, jobs: int) -> None:
    report = run_sim_benchmark(cfg, jobs)
    report.write(out)
    _log_failures(report)


def cmd_bench_ts(cfg, out: Path, jobs: int) -> None:
    report = run_ts_benchmark(cfg, jobs)
    report.write(out)
    _log_failures(report)


def _log_failures(report) -> None:
    if report.errors:
        log.warning("%d benchmark cells failed; see failures.csv", len(report.errors))


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "bench-sim": cmd_bench_sim,
    "bench-ts": cmd_bench_ts,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrrce", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--jobs", type=int, default=None, help="worker processes (env MRRCE_JOBS)")
        p.add_argument("--out", type=Path, default=Path("mrrce-out"), help="output directory")
    return parser


def _schema_message(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        lines.append(f"  {loc}: {err['msg']}")
    return "invalid config:\n" + "\n".join(lines)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {}
    if args.seed is not None and args.command != "predict":
        overrides["seed"] = args.seed
    try:
        cfg = load_config(args.command, args.config, overrides)
        jobs = resolve_jobs(args.jobs, getattr(cfg, "jobs", 1))
    except ValidationError as exc:
        print(_schema_message(exc), file=sys.stderr)
        return EXIT_SCHEMA
    except (ValueError, yaml.YAMLError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, args.out, jobs)
    except NumericalError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
