"""Spatial AR(1) analysis of regression residuals: empirical covariance
operators, truncated autocorrelation estimate and the plug-in predictor."""

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import trig
from .errors import DimensionError, IllConditionedError, ValidationError

CLASSICAL, BAYESIAN = "classical", "bayesian"
REFERENCE_TRUNCATION = 8
EIGEN_RTOL = 1e-12


@dataclass(frozen=True)
class ResidualPanel:
    node_times: np.ndarray
    values: np.ndarray
    region_ids: tuple = ()

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if not np.all(np.isfinite(v)):
            raise ValidationError("residuals must be finite")
        times = np.array(self.node_times, dtype=float)
        if times.size != v.shape[0]:
            raise DimensionError("node_times length does not match residual rows")
        ids = tuple(self.region_ids) or tuple(f"R{j + 1}" for j in range(v.shape[1]))
        v.flags.writeable = False
        times.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "node_times", times)
        object.__setattr__(self, "region_ids", ids)

    @property
    def T(self):
        return self.values.shape[0]

    @property
    def P(self):
        return self.values.shape[1]

    @property
    def column_means(self):
        return self.values.mean(axis=0)

    @classmethod
    def from_array(cls, values, region_ids=()):
        values = np.asarray(values, dtype=float)
        return cls(np.arange(1, values.shape[0] + 1, dtype=float), values, region_ids)


@dataclass(frozen=True)
class CovariancePair:
    R0: np.ndarray
    R1: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray


@dataclass(frozen=True)
class AutocorrEstimate:
    rho: np.ndarray
    kT: int
    method: str = CLASSICAL

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float)
        if not 1 <= self.kT <= rho.shape[0]:
            raise ValidationError(f"kT={self.kT} outside [1, {rho.shape[0]}]")
        if not np.all(np.isfinite(rho)):
            raise ValidationError("rho must be finite")


def residuals(panel, model):
    trig._check_grid(model, panel)
    fitted = trig.predict(model, trig.node_index(panel.T))
    return ResidualPanel(panel.node_times, panel.values - fitted, panel.region_ids)


def default_truncation(T):
    """``floor(ln T)``, at least 1."""
    return max(int(math.floor(math.log(T))), 1)


def empirical_covariances(res, center=False):
    """Lag-0 and lag-1 empirical covariance matrices of the residuals.

    ``R0[p, q] = (1/T) sum_t Y_t(p) Y_t(q)`` and
    ``R1[p, q] = (1/(T-1)) sum_t Y_t(q) Y_{t+1}(p)``; no centering unless
    asked.  Eigenpairs of R0 come sorted by decreasing eigenvalue.
    """
    Y = res.values
    T = Y.shape[0]
    if T < 2:
        raise ValidationError("covariance estimation needs T >= 2")
    if center:
        Y = Y - Y.mean(axis=0)
    R0 = Y.T @ Y / T
    R0 = 0.5 * (R0 + R0.T)
    R1 = Y[1:].T @ Y[:-1] / (T - 1)
    return _pair(R0, R1)


def _pair(R0, R1):
    w, V = linalg.eigh(R0)
    order = np.argsort(w)[::-1]
    return CovariancePair(R0, R1, w[order], V[:, order])


def covariances_from_pairs(prev, nxt):
    """Covariances from explicit transitions ``prev[i] -> nxt[i]`` (rows)."""
    prev = np.asarray(prev, dtype=float)
    nxt = np.asarray(nxt, dtype=float)
    if prev.shape != nxt.shape or prev.shape[0] < 1:
        raise ValidationError("transition arrays must be non-empty and of equal shape")
    n = prev.shape[0]
    R0 = prev.T @ prev / n
    return _pair(0.5 * (R0 + R0.T), nxt.T @ prev / n)


def estimate_rho(cov, kT):
    """Truncated estimate ``Pi R1 R0^+ Pi`` on the leading kT eigenvectors.

    Oriented for prediction: ``Y_hat_t = rho @ Y_{t-1}``.
    """
    P = cov.R0.shape[0]
    if not 1 <= kT <= P:
        raise ValidationError(f"truncation kT={kT} must lie in [1, {P}]")
    lam, V = cov.eigvals, cov.eigvecs
    cutoff = max(EIGEN_RTOL * max(lam[0], 0.0), 1e-300)
    usable = int(np.sum(lam > cutoff))
    if usable < kT:
        raise IllConditionedError(
            f"only {usable} eigenvalue(s) of R0 exceed {cutoff:.3g}; "
            f"kT={kT} cannot be used (usable rank {usable})", usable_rank=usable)
    Vk = V[:, :kT]
    rho = Vk @ (Vk.T @ cov.R1 @ Vk / lam[:kT]) @ Vk.T
    return AutocorrEstimate(rho, kT, CLASSICAL)


def _lagged(res, t):
    if not 2 <= t <= res.T + 1:
        raise ValidationError(f"node index t={t} outside [2, {res.T + 1}]")
    return res.values[t - 2]


def plugin_predict(est, res, t):
    """One-step prediction at (1-based) node ``t`` from ``Y_{t-1}``;
    ``t = T + 1`` forecasts past the sample."""
    return est.rho @ _lagged(res, t)


def predict_path(rho, res):
    """Predictions for t = 2..T+1 stacked as rows, shape (T, P)."""
    return res.values @ np.asarray(rho).T


def outside_support_fraction(rho, scale):
    """Share of entries outside ``(0, scale)``, for reporting only."""
    rho = np.asarray(rho)
    return float(np.mean((rho <= 0) | (rho >= scale)))
