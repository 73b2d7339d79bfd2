"""Posterior-mode estimation of the residual autocorrelation under
independent scaled-Beta priors, and the combined space-time predictor."""

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import linalg
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import minimize
from scipy.special import betaln, expit

from . import classical
from .errors import (DegenerateSampleError, DimensionError, NumericalError,
                     ValidationError)
from .parallel import ordered_map

DEFAULT_PRIOR = {"a": 14.0, "b": 13.0, "scale": 1.0 / 3.0}


@dataclass(frozen=True)
class BetaPrior:
    a: np.ndarray
    b: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        if a.shape != b.shape:
            raise DimensionError("prior shape parameters a and b differ in shape")
        if np.any(a <= 0) or np.any(b <= 0):
            raise ValidationError("Beta shape parameters must be positive")
        if not self.scale > 0:
            raise ValidationError("prior scale must be positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def shared(cls, P, a, b, scale=1.0):
        return cls(np.full((P, P), float(a)), np.full((P, P), float(b)), scale)

    @classmethod
    def default(cls, P):
        return cls.shared(P, DEFAULT_PRIOR["a"], DEFAULT_PRIOR["b"], DEFAULT_PRIOR["scale"])

    @property
    def P(self):
        return self.a.shape[0]

    def mode(self):
        """Entrywise prior mode (defined for a, b > 1)."""
        return (self.a - 1.0) / (self.a + self.b - 2.0) * self.scale

    def to_dict(self):
        a, b = self.a, self.b
        if np.all(a == a.flat[0]) and np.all(b == b.flat[0]):
            return {"a": float(a.flat[0]), "b": float(b.flat[0]), "scale": self.scale}
        return {"a": a.tolist(), "b": b.tolist(), "scale": self.scale}


class RowPosterior:
    """Log-posterior of one row of rho (the coefficients predicting region p).

    The data term uses the T-1 observed transitions; with sufficient
    statistics each evaluation costs O(P^2).
    """

    def __init__(self, res, p, prior, sigma_p, pairs=None):
        if sigma_p <= 0:
            raise ValidationError("sigma_p must be positive")
        if pairs is None:
            X, y = res.values[:-1], res.values[1:, p]
        else:
            X, y = pairs[0], pairs[1][:, p]
        self.n = X.shape[0]
        self.xtx = X.T @ X
        self.xty = X.T @ y
        self.yty = float(y @ y)
        self.sigma = float(sigma_p)
        self.s = prior.scale
        self.a = prior.a[p]
        self.b = prior.b[p]
        self._const = (-self.n * np.log(self.sigma * np.sqrt(2.0 * np.pi))
                       - np.sum(np.log(self.s) + betaln(self.a, self.b)))

    def sse(self, rho):
        rho = np.atleast_2d(rho)
        quad = np.einsum("ij,jk,ik->i", rho, self.xtx, rho)
        return self.yty - 2.0 * rho @ self.xty + quad

    def _value(self, rho, log_frac, log_comp):
        prior = log_frac @ (self.a - 1.0) + log_comp @ (self.b - 1.0)
        return self._const - self.sse(rho) / (2.0 * self.sigma ** 2) + prior

    def __call__(self, rho):
        """Vectorized over leading rows; ``-inf`` outside ``(0, s)^P``."""
        rho = np.atleast_2d(np.asarray(rho, dtype=float))
        inside = np.all((rho > 0) & (rho < self.s), axis=1)
        out = np.full(rho.shape[0], -np.inf)
        if inside.any():
            r = rho[inside]
            out[inside] = self._value(r, np.log(r / self.s), np.log1p(-r / self.s))
        return out

    def gradient(self, rho):
        rho = np.asarray(rho, dtype=float)
        data = (self.xty - self.xtx @ rho) / self.sigma ** 2
        return data + (self.a - 1.0) / rho - (self.b - 1.0) / (self.s - rho)

    # logit coordinates u = ln(rho / (s - rho)), evaluated without cancellation
    def rho_of(self, u):
        return self.s * _expit(u)

    def value_u(self, u):
        u = np.atleast_2d(u)
        rho = self.s * _expit(u)
        log_frac = -np.logaddexp(0.0, -u)
        log_comp = -np.logaddexp(0.0, u)
        return self._value(rho, log_frac, log_comp)

    def negative_u(self, u):
        rho = self.s * _expit(u)
        val = self.value_u(u)[0]
        # d rho / d u = rho (s - rho) / s
        data = (self.xty - self.xtx @ rho) / self.sigma ** 2
        drho = rho * _expit(-u)
        grad = data * drho + (self.a - 1.0) * _expit(-u) - (self.b - 1.0) * _expit(u)
        return -val, -grad


def _expit(u):
    return expit(np.asarray(u, dtype=float))


def residual_sigma(res):
    """Root second moment of each region's residuals."""
    return np.sqrt(np.mean(res.values ** 2, axis=0))


def log_posterior(rho_row, res, p, prior, sigma_p):
    return float(RowPosterior(res, p, prior, sigma_p)(rho_row)[0])


@dataclass
class PriorSuggestion:
    a: float
    b: float
    scale: float
    a_entry: np.ndarray
    b_entry: np.ndarray
    n_clipped: int
    B: int

    def prior(self, P=None, per_entry=False):
        if per_entry:
            return BetaPrior(self.a_entry, self.b_entry, self.scale)
        P = P or self.a_entry.shape[0]
        return BetaPrior.shared(P, self.a, self.b, self.scale)


def _beta_moments(u, axis=None):
    m = np.mean(u, axis=axis)
    v = np.var(u, axis=axis, ddof=1)
    common = m * (1.0 - m) / np.where(v > 0, v, np.nan) - 1.0
    return m * common, (1.0 - m) * common, v


def fit_prior_from_bootstrap(rho_samples, scale=DEFAULT_PRIOR["scale"], min_samples=30):
    """Method-of-moments Beta fit of bootstrap rho samples rescaled by ``scale``.

    ``rho_samples`` has one bootstrap replicate per row (P*P entries each).
    Entries outside ``(0, scale)`` are clipped and counted.  Per-entry fits
    that are degenerate fall back to the pooled fit.
    """
    x = np.atleast_2d(np.asarray(rho_samples, dtype=float))
    if x.shape[0] < min_samples:
        raise ValidationError(f"need at least {min_samples} bootstrap samples, got {x.shape[0]}")
    u = x / scale
    outside = (u <= 0) | (u >= 1)
    u = np.clip(u, 1e-6, 1 - 1e-6)
    a, b, v = _beta_moments(u.ravel())
    if np.ptp(u) == 0 or not v > 0:
        raise DegenerateSampleError("bootstrap samples have zero variance")
    if not (a > 0 and b > 0):
        raise DegenerateSampleError("sample variance too large for a Beta fit")
    ae, be, _ = _beta_moments(u, axis=0)
    bad = ~(np.isfinite(ae) & np.isfinite(be) & (ae > 0) & (be > 0))
    ae, be = np.where(bad, a, ae), np.where(bad, b, be)
    P = int(round(np.sqrt(x.shape[1])))
    shape = (P, P) if P * P == x.shape[1] else (1, x.shape[1])
    return PriorSuggestion(float(a), float(b), float(scale), ae.reshape(shape),
                           be.reshape(shape), int(outside.sum()), x.shape[0])


def bootstrap_rho_samples(res, kT, B=100, seed=0):
    """Bootstrap replicates of the truncated rho, resampling transitions.

    Each replicate draws T-1 pairs ``(Y_t, Y_{t+1})`` with replacement and
    re-estimates rho; rows are the flattened (row-major) matrices.
    """
    E = res.values
    n = E.shape[0] - 1
    rng = np.random.default_rng(seed)
    out = np.empty((B, E.shape[1] ** 2))
    for i in range(B):
        idx = rng.integers(0, n, size=n)
        cov = classical.covariances_from_pairs(E[idx], E[idx + 1])
        out[i] = classical.estimate_rho(cov, kT).rho.ravel()
    return out


@dataclass
class OptimizerOptions:
    population: int = 50
    generations: int = 200
    tournament: int = 3
    elite: int = 2
    crossover_rate: float = 0.8
    mutation_scale: float = 0.1      # times the prior scale
    mutation_rate: float = None      # per gene; default max(1/P, 0.1)
    qn_gtol: float = 1e-9
    qn_maxiter: int = 2000
    edge: float = 1e-9               # clamp margin, times the prior scale

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in (d or {}).items() if k in cls.__dataclass_fields__})


@dataclass
class BayesFit:
    rho: np.ndarray
    sigma: np.ndarray
    objective: np.ndarray
    prior: BetaPrior
    seed: int
    optimizer_trace: list = field(default_factory=list)

    def to_dict(self):
        return {"rho": self.rho.tolist(), "sigma": self.sigma.tolist(),
                "objective": self.objective.tolist(), "prior": self.prior.to_dict(),
                "seed": self.seed}

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        rho = np.asarray(d["rho"], dtype=float)
        pr = d["prior"]
        P = rho.shape[0]
        prior = BetaPrior(np.broadcast_to(pr["a"], (P, P)), np.broadcast_to(pr["b"], (P, P)),
                          pr["scale"])
        return cls(rho, np.asarray(d["sigma"]), np.asarray(d["objective"]), prior, d["seed"])

    def trace_rows(self, p):
        """(iteration, phase, best objective) rows of region ``p``."""
        return self.optimizer_trace[p]


def _genetic_phase(post, P, opts, rng):
    s = post.s
    lo, hi = opts.edge * s, s - opts.edge * s
    pop = rng.uniform(lo, hi, size=(opts.population, P))
    fit = post(pop)
    if not np.any(np.isfinite(fit)):
        raise NumericalError("objective is not finite at any initial individual")
    rate = opts.mutation_rate or max(1.0 / P, 0.1)
    sigma = opts.mutation_scale * s
    trace = []
    n_child = opts.population - opts.elite
    for gen in range(opts.generations):
        order = np.argsort(-fit, kind="stable")
        trace.append((gen, "genetic", float(fit[order[0]])))
        elite = pop[order[:opts.elite]]
        # tournaments: best of `tournament` random picks, twice per child
        picks = rng.integers(0, opts.population, size=(2, n_child, opts.tournament))
        winners = np.take_along_axis(picks, np.argmax(fit[picks], axis=2)[..., None], axis=2)[..., 0]
        p1, p2 = pop[winners[0]], pop[winners[1]]
        w = rng.uniform(size=(n_child, P))
        cross = rng.uniform(size=(n_child, 1)) < opts.crossover_rate
        child = np.where(cross, w * p1 + (1.0 - w) * p2, p1)
        mutate = rng.uniform(size=(n_child, P)) < rate
        child = child + mutate * rng.normal(0.0, sigma, size=(n_child, P))
        np.clip(child, lo, hi, out=child)
        pop = np.vstack([elite, child])
        fit = post(pop)
    best = int(np.argmax(fit))
    trace.append((opts.generations, "genetic", float(fit[best])))
    return pop[best], float(fit[best]), trace


def _quasi_newton_phase(post, start, opts):
    s = post.s
    u0 = np.log(start / (s - start))
    trace = []

    def record(u):
        trace.append((len(trace) + 1, "quasi-newton", float(post.value_u(u)[0])))

    res = minimize(post.negative_u, u0, jac=True, method="BFGS", callback=record,
                   options={"gtol": opts.qn_gtol, "maxiter": opts.qn_maxiter})
    return post.rho_of(res.x), float(-res.fun), trace


def _optimize_row(task):
    res, p, prior, sigma_p, opts, seed, pairs = task
    P = prior.P
    post = RowPosterior(res, p, prior, sigma_p, pairs)
    rng = np.random.default_rng(np.random.SeedSequence([seed, p]))
    best, best_val, trace = _genetic_phase(post, P, opts, rng)
    rho_qn, val_qn, qn_trace = _quasi_newton_phase(post, best, opts)
    trace += qn_trace
    # the refined point is kept only if it is feasible and no worse
    val_check = post(rho_qn)[0]
    if np.isfinite(val_check) and val_check >= best_val:
        best, best_val = rho_qn, float(val_check)
    return best, best_val, trace


def optimize_posterior(res, prior, opts=None, seed=0, jobs=1, pairs=None):
    """Posterior mode of every row of rho by a genetic search followed by
    BFGS in logit coordinates.

    Parameters
    ----------
    res : ResidualPanel
        Residuals, ``T >= P + 2``.
    prior : BetaPrior
        Shape parameters per entry and the common support scale.
    opts : OptimizerOptions, optional
    seed : int
        Master seed; region p uses the stream ``SeedSequence([seed, p])``.
    jobs : int
        Worker processes; results do not depend on it.
    pairs : tuple of arrays, optional
        Explicit transitions ``(prev, next)``, used instead of the
        consecutive rows of ``res`` (which may then be None).
    """
    opts = opts or OptimizerOptions()
    if pairs is None:
        T, P = res.values.shape
        sigma = residual_sigma(res)
    else:
        pairs = tuple(np.asarray(a, dtype=float) for a in pairs)
        T, P = pairs[1].shape[0] + 1, pairs[1].shape[1]
        sigma = np.sqrt(np.mean(pairs[1] ** 2, axis=0))
    if T < P + 2:
        raise ValidationError(f"need T >= P + 2 residual rows, got T={T}, P={P}")
    if prior.P != P:
        raise DimensionError(f"prior is {prior.P}x{prior.P} but residuals have P={P}")
    if np.any(sigma <= 0):
        raise NumericalError("a region has identically zero residuals; sigma_p would be 0")
    tasks = [(res, p, prior, float(sigma[p]), opts, int(seed), pairs) for p in range(P)]
    rows = ordered_map(_optimize_row, tasks, jobs)
    rho = np.vstack([r[0] for r in rows])
    objective = np.array([r[1] for r in rows])
    return BayesFit(rho, sigma, objective, prior, int(seed), [r[2] for r in rows])


def bayes_predict(fit, res, t):
    return fit.rho @ classical._lagged(res, t)


class CombinedForecast(NamedTuple):
    log_risk: np.ndarray
    risk: np.ndarray
    cumulative: np.ndarray


def combine_predictions(regression, residual, node_times, weighting=None, invert=False):
    """Regression plus residual prediction, mapped back to hard values when
    ``invert`` is set, exponentiated and integrated over ``node_times``."""
    reg = np.atleast_2d(np.asarray(regression, dtype=float))
    resid = np.atleast_2d(np.asarray(residual, dtype=float))
    if reg.shape != resid.shape:
        raise DimensionError(f"regression {reg.shape} and residual {resid.shape} differ")
    times = np.asarray(node_times, dtype=float)
    if times.size != reg.shape[0]:
        raise DimensionError("node_times length does not match prediction rows")
    log_risk = reg + resid
    if invert and weighting is not None and weighting.kind != "identity":
        W = weighting.matrix
        if W.shape[0] != log_risk.shape[1]:
            raise DimensionError("weighting size does not match the prediction columns")
        if np.linalg.cond(W) > 1e12:
            raise NumericalError("weighting matrix is singular; cannot invert the projection")
        # soft = hard @ W.T, so hard = soft @ inv(W).T
        log_risk = linalg.solve(W, log_risk.T).T
    risk = np.exp(log_risk)
    cumulative = cumulative_trapezoid(risk, times, axis=0, initial=0.0)
    return CombinedForecast(log_risk, risk, cumulative)
