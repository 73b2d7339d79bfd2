"""Synthetic panels with known ground truth: harmonic mean, stationary
spatial AR(1) residuals and Poisson counts driven by the implied intensity."""

import datetime as dt
import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.integrate import cumulative_trapezoid

from . import trig
from .classical import ResidualPanel
from .errors import NumericalError, ValidationError
from .panel import CountPanel, LogRiskPanel

MAX_MEAN = 1e12
DEFAULT_START = dt.date(2020, 3, 8)


def spectral_radius(rho):
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(rho)))))


@dataclass(frozen=True)
class Scenario:
    true_model: trig.TrigModel
    true_rho: np.ndarray
    noise_sigma: np.ndarray
    T: int
    seed: int = 0
    innovation_cov: np.ndarray = None   # full covariance, overrides noise_sigma

    def __post_init__(self):
        P = self.true_model.P
        rho = np.atleast_2d(np.asarray(self.true_rho, dtype=float))
        sigma = np.broadcast_to(np.asarray(self.noise_sigma, dtype=float), (P,)).copy()
        if rho.shape != (P, P):
            raise ValidationError(f"true_rho must be {P}x{P}")
        if np.any(sigma < 0):
            raise ValidationError("noise_sigma must be non-negative")
        if self.T < 2:
            raise ValidationError("T must be at least 2")
        object.__setattr__(self, "true_rho", rho)
        object.__setattr__(self, "noise_sigma", sigma)
        if self.innovation_cov is not None:
            cov = np.asarray(self.innovation_cov, dtype=float)
            if cov.shape != (P, P) or not np.allclose(cov, cov.T):
                raise ValidationError("innovation_cov must be a symmetric PxP matrix")
            object.__setattr__(self, "innovation_cov", cov)

    @property
    def P(self):
        return self.true_model.P

    @property
    def Q(self):
        """Innovation covariance."""
        if self.innovation_cov is not None:
            return self.innovation_cov
        return np.diag(self.noise_sigma ** 2)

    def to_dict(self):
        d = {"T": self.T, "P": self.P, "seed": self.seed, "model": self.true_model.to_dict(),
             "rho": self.true_rho.tolist(), "noise_sigma": self.noise_sigma.tolist()}
        if self.innovation_cov is not None:
            d["innovation_cov"] = self.innovation_cov.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(trig.TrigModel.from_dict(d["model"]), d["rho"], d["noise_sigma"],
                   int(d["T"]), int(d.get("seed", 0)), d.get("innovation_cov"))

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def make_scenario(T=265, P=17, N=6, rho=0.5, sigma=0.1, seed=0, level=3.0,
                  amplitude=0.5, convention=trig.SHIFTED):
    """Random harmonic coefficients (decaying with frequency) around ``level``.

    ``rho`` may be a scalar (diagonal autocorrelation) or a PxP matrix.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    freqs = trig.harmonic_frequencies(N, T, convention)
    decay = amplitude / np.arange(1, N + 1)[:, None]
    A = rng.normal(size=(N, P)) * decay
    B = rng.normal(size=(N, P)) * decay
    pin = convention == trig.SHIFTED
    if pin:
        A[0] = level + 0.2 * rng.normal(size=P)
        B[0] = 0.0
    ids = tuple(f"C{j + 1}" for j in range(P))
    model = trig.TrigModel(freqs, A, B, T, ids, pin, convention)
    rho = np.eye(P) * rho if np.ndim(rho) == 0 else np.asarray(rho, dtype=float)
    return Scenario(model, rho, np.full(P, float(sigma)), T, int(seed))


def stationary_covariance(rho, Q):
    """Solution ``C`` of ``C = rho C rho^T + Q``."""
    return linalg.solve_discrete_lyapunov(rho, Q)


def _gaussian(rng, cov, size):
    w, V = linalg.eigh(0.5 * (cov + cov.T))
    root = V * np.sqrt(np.clip(w, 0.0, None))
    return rng.standard_normal((size, cov.shape[0])) @ root.T


def generate_residuals(sc):
    """Stationary ``eps_t = rho eps_{t-1} + nu_t`` of length ``sc.T``."""
    if spectral_radius(sc.true_rho) >= 1:
        raise ValidationError(
            f"spectral radius {spectral_radius(sc.true_rho):.4g} >= 1: not stationary")
    rng = np.random.default_rng(sc.seed)
    C = stationary_covariance(sc.true_rho, sc.Q)
    eps = np.empty((sc.T, sc.P))
    eps[0] = _gaussian(rng, C, 1)[0]
    innov = _gaussian(rng, sc.Q, sc.T - 1)
    for t in range(1, sc.T):
        eps[t] = sc.true_rho @ eps[t - 1] + innov[t - 1]
    return ResidualPanel(trig.node_index(sc.T), eps, sc.true_model.region_ids)


@dataclass(frozen=True)
class SyntheticPanel:
    panel: LogRiskPanel
    mean: np.ndarray
    residuals: ResidualPanel
    scenario: Scenario


def generate_panel(sc, node_times=None):
    """Harmonic mean plus residuals; the components are kept for scoring."""
    mean = trig.predict(sc.true_model, trig.node_index(sc.T))
    res = generate_residuals(sc)
    times = trig.node_index(sc.T) if node_times is None else np.asarray(node_times, float)
    panel = LogRiskPanel(times, sc.true_model.region_ids, mean + res.values)
    return SyntheticPanel(panel, mean, res, sc)


def interval_means(panel, boundaries=None):
    """Integral of ``exp(log-risk)`` over consecutive boundary intervals.

    The intensity is taken as the piecewise-linear interpolant of its node
    values, so the integral is exact trapezoid arithmetic.  Boundaries
    default to the integers spanning the node times.
    """
    t = panel.node_times
    if boundaries is None:
        boundaries = np.arange(np.ceil(t[0]), np.floor(t[-1]) + 1)
    b = np.asarray(boundaries, dtype=float)
    if b.size < 2 or np.any(np.diff(b) <= 0) or b[0] < t[0] or b[-1] > t[-1]:
        raise ValidationError("boundaries must increase and lie within the node range")
    grid = np.union1d(t, b)
    with np.errstate(over="raise"):
        try:
            lam = np.exp(panel.values)
        except FloatingPointError:
            raise NumericalError("log-risk too large: intensity overflows") from None
    lam_grid = np.column_stack([np.interp(grid, t, lam[:, p]) for p in range(panel.P)])
    cum = cumulative_trapezoid(lam_grid, grid, axis=0, initial=0.0)
    at = cum[np.searchsorted(grid, b)]
    means = np.diff(at, axis=0)
    if np.any(means > MAX_MEAN):
        raise NumericalError(f"Poisson mean exceeds {MAX_MEAN:g}")
    return b, means


def generate_counts(panel, boundaries=None, seed=0, start=DEFAULT_START):
    """Poisson counts per boundary interval.

    The count of interval ``[b_i, b_{i+1}]`` is dated ``start + b_{i+1}``
    days; a zero row dated ``start + b_0`` anchors the cumulative curve.
    """
    b, means = interval_means(panel, boundaries)
    counts = np.random.default_rng(seed).poisson(means)
    counts = np.vstack([np.zeros((1, panel.P), dtype=counts.dtype), counts])
    offset = b - b[0]
    if np.any(offset != np.round(offset)):
        raise ValidationError("boundaries must be whole days apart")
    dates = tuple(start + dt.timedelta(days=int(d)) for d in offset)
    return CountPanel(panel.region_ids, dates, counts)
