"""
Command-line round trip
=======================

Drive the ``simulate``, ``fit`` and ``predict`` subcommands in-process and
look at what they write. The same calls work from a shell as
``python -m mrrce <command> --config FILE --out DIR``.
"""
import json
import sys
import tempfile
from pathlib import Path

import numpy as np
import yaml

from mrrce.cli import main, read_matrix

root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="mrrce-demo-"))
root.mkdir(parents=True, exist_ok=True)
configs = Path(__file__).resolve().parents[1] / "configs"

# simulate writes Z, Y, the true coefficients and covariances
assert main(["simulate", "--config", str(configs / "simulate.yaml"), "--out", str(root / "sim")]) == 0
print("simulated:", sorted(p.name for p in (root / "sim").iterdir()))

# fit reads the CSVs named in its config; paths resolve against the config file
fit_cfg = {"Z": "sim/Z.csv", "Y": "sim/Y.csv", "method": "mrrce", "params": {"folds": 3}, "seed": 0}
(root / "fit.yaml").write_text(yaml.safe_dump(fit_cfg))
assert main(["fit", "--config", str(root / "fit.yaml"), "--out", str(root / "fit")]) == 0
theta = json.loads((root / "fit" / "theta.json").read_text())
print(f"fit: sigma2={theta['sigma2']:.4f} rho={theta['rho']:.3f} lambda={theta['lambda_omega']:.3g}")

# predict applies the stored centering and coefficients to new rows
(root / "predict.yaml").write_text(yaml.safe_dump({"model_dir": "fit", "Z": "sim/Z.csv"}))
assert main(["predict", "--config", str(root / "predict.yaml"), "--out", str(root / "pred")]) == 0
Y = read_matrix(root / "sim" / "Y.csv")
P = read_matrix(root / "pred" / "predictions.csv")
print(f"in-sample R^2 per response: {np.round(1 - ((Y - P) ** 2).sum(0) / ((Y - Y.mean(0)) ** 2).sum(0), 3)}")

# A config with an unknown key is rejected with exit status 2
(root / "bad.yaml").write_text("simulation: {n: 10, colour: red}\n")
print("bad config exit status:", main(["simulate", "--config", str(root / "bad.yaml"), "--out", str(root / "x")]))
print("outputs under", root)
