"""Machine-learning regression baselines for one-step-ahead log-risk prediction."""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from .gp import EmpiricalBlockKernel, GaussianProcess, gp_fit, gp_predict, soft_gp_predict
from .grnn import GRNN, grnn_predict, grnn_temporal_predict
from .lagged import LaggedDataset, build_lagged, lag_matrix
from .mlp import (BNN, MLP, NU_GRID, bnn_fit, bnn_predict, mlp_fit, mlp_predict,
                  standardizer)
from .rbf import RBFNetwork, rbf_fit, rbf_predict
from .svr import SVR, svr_fit, svr_predict

KINDS = ("grnn", "mlp", "svr", "bnn", "rbf", "gp")

DEFAULT_GRIDS = {
    "mlp": {"NH": [0, 1, 3, 5, 7, 9]},
    "bnn": {"NH": [1, 3, 5, 7, 9]},
    "rbf": {"spread": [2.5, 5.0, 7.5, 10.0, 12.5, 15.0, 17.5, 20.0]},
    "grnn": {"h": [0.05, 0.1, 0.2, 0.3, 0.5, 0.6, 0.7]},
}

DEFAULT_HYPERPARAMS = {
    "grnn": {"h": 0.05, "form": "pointwise"},
    "mlp": {"NH": 1},
    "svr": {"C": 1.0, "epsilon": 0.01, "kernel": "linear", "gamma": 1.0, "standardize": True},
    "bnn": {"NH": 5},
    "rbf": {"spread": 2.5, "tol": 0.2, "standardize": True},
    "gp": {"center": True},
}

# larger means simpler, for breaking ties in a grid search
SIMPLICITY = {"NH": -1, "h": 1, "spread": 1}


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    hyperparams: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")

    def resolved(self):
        hp = dict(DEFAULT_HYPERPARAMS[self.kind])
        hp.update(self.hyperparams)
        return hp

    def with_params(self, **kw):
        hp = dict(self.hyperparams)
        hp.update(kw)
        return ModelSpec(self.kind, hp, self.seed)

    def to_dict(self):
        return {"kind": self.kind, "hyperparams": dict(self.hyperparams), "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], dict(d.get("hyperparams", {})), int(d.get("seed", 0)))

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


class Standardized:
    """Wrap an estimator so it sees inputs centred and scaled by the
    training-set column moments."""

    def __init__(self, model):
        self.model = model

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        self.mu_, self.sd_ = standardizer(X)
        self.model.fit((X - self.mu_) / self.sd_, y)
        return self

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.model.predict((X - self.mu_) / self.sd_)

    def to_dict(self):
        out = self.model.to_dict()
        out.update(input_mean=self.mu_.tolist(), input_scale=self.sd_.tolist())
        return out


def make_model(spec, seed=None):
    """Unfitted estimator with ``fit(X, y)`` and ``predict(X)``."""
    hp = spec.resolved()
    seed = spec.seed if seed is None else seed
    kind = spec.kind
    if kind == "grnn":
        return GRNN(hp["h"])
    if kind == "mlp":
        return MLP(hp["NH"], seed)
    if kind == "bnn":
        return BNN(hp["NH"], seed, hp.get("nu"))
    if kind == "svr":
        model = SVR(hp["C"], hp["epsilon"], hp["kernel"], hp.get("gamma", 1.0))
        return Standardized(model) if hp.get("standardize") else model
    if kind == "rbf":
        model = RBFNetwork(hp["spread"], hp.get("tol", 1e-2), hp.get("max_nodes"))
        return Standardized(model) if hp.get("standardize") else model
    return GaussianProcess(length_scale=hp.get("length_scale"), signal_var=hp.get("signal_var"),
                           noise=hp.get("noise"), center=hp.get("center", False))


def dump_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=2)
        fh.write("\n")


def write_predictions(path, rows):
    """``rows`` of (time, region, predicted log-risk)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "region", "prediction"])
        for t, region, value in rows:
            w.writerow([repr(float(t)), region, repr(float(value))])


__all__ = [
    "BNN", "DEFAULT_GRIDS", "DEFAULT_HYPERPARAMS", "EmpiricalBlockKernel", "GRNN",
    "GaussianProcess", "KINDS", "LaggedDataset", "MLP", "ModelSpec", "NU_GRID", "RBFNetwork",
    "SVR", "Standardized", "bnn_fit", "bnn_predict", "build_lagged", "dump_model", "gp_fit", "gp_predict",
    "grnn_predict", "grnn_temporal_predict", "lag_matrix", "make_model", "mlp_fit",
    "mlp_predict", "rbf_fit", "rbf_predict", "soft_gp_predict", "svr_fit", "svr_predict",
    "write_predictions",
]
