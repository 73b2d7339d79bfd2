"""Exact Gaussian process regression (zero prior mean)."""

import itertools

import numpy as np
from scipy import linalg

from ..errors import NumericalError, ValidationError

JITTER = 1e-8
LENGTH_FACTORS = (0.25, 0.5, 1.0, 2.0, 4.0)
SIGNAL_FACTORS = (0.25, 1.0, 4.0)
NOISE_FACTORS = (1e-4, 1e-3, 1e-2, 1e-1)


class SquaredExponential:
    def __init__(self, length_scale=1.0, variance=1.0):
        self.length_scale, self.variance = float(length_scale), float(variance)

    def __call__(self, A, B):
        d2 = np.sum((A[:, None, :] - B[None, :, :]) ** 2, axis=-1)
        return self.variance * np.exp(-0.5 * d2 / self.length_scale ** 2)

    def to_dict(self):
        return {"name": "se", "length_scale": self.length_scale, "variance": self.variance}


class EmpiricalBlockKernel:
    """Covariance between (time, region) inputs from empirical lag covariances.

    Inputs are rows ``(t, p)`` with 0-based integer time and region indices.
    ``C_h = (1/T) sum_t (x_{t+h} - m)(x_t - m)^T`` gives
    ``Cov(x_{t+h}(p), x_t(q)) = C_h[p, q]``; negative lags use ``C_h^T``.
    The biased normalization keeps the block Toeplitz matrix positive
    semidefinite.
    """

    def __init__(self, values, center=True):
        X = np.asarray(values, dtype=float)
        self.mean = X.mean(axis=0) if center else np.zeros(X.shape[1])
        Y = X - self.mean
        T = Y.shape[0]
        self.lags = np.stack([Y[h:].T @ Y[:T - h] / T for h in range(T)])

    def __call__(self, A, B):
        A = np.asarray(A, dtype=int)
        B = np.asarray(B, dtype=int)
        h = A[:, 0][:, None] - B[:, 0][None, :]
        pa = np.broadcast_to(A[:, 1][:, None], h.shape)
        pb = np.broadcast_to(B[:, 1][None, :], h.shape)
        ah = np.abs(h)
        if ah.max(initial=0) >= self.lags.shape[0]:
            raise ValidationError("time lag beyond the empirical covariance range")
        return np.where(h >= 0, self.lags[ah, pa, pb], self.lags[ah, pb, pa])


def _noise_matrix(noise, n):
    noise = np.asarray(noise, dtype=float)
    if noise.ndim == 0:
        return np.eye(n) * float(noise)
    if noise.ndim == 1:
        return np.diag(noise)
    return noise


def factor(K):
    """Cholesky factor, retrying once with a small diagonal jitter."""
    try:
        return linalg.cho_factor(K, lower=True)
    except linalg.LinAlgError:
        pass
    jitter = JITTER * max(float(np.mean(np.abs(np.diag(K)))), 1.0)
    try:
        return linalg.cho_factor(K + jitter * np.eye(K.shape[0]), lower=True)
    except linalg.LinAlgError:
        raise NumericalError("GP Gram matrix is not positive definite after jitter") from None


def log_marginal(K, y):
    c = factor(K)
    alpha = linalg.cho_solve(c, y)
    return (-0.5 * y @ alpha - np.sum(np.log(np.diag(c[0])))
            - 0.5 * y.size * np.log(2 * np.pi))


class GaussianProcess:
    """Conditional-mean predictor ``k(x*, X) [K + noise]^{-1} y``.

    Parameters
    ----------
    kernel : callable or None
        ``kernel(A, B)`` Gram function.  ``None`` means a squared-exponential
        kernel whose unset parameters are chosen by log marginal likelihood
        over a grid scaled to the data.
    noise : float, array or None
        Noise variance: scalar, per-sample vector or full matrix.
    center : bool
        Subtract the target mean before conditioning (prior mean = sample mean).
    """

    def __init__(self, kernel=None, length_scale=None, signal_var=None, noise=None,
                 center=False):
        self.kernel, self.length_scale, self.signal_var = kernel, length_scale, signal_var
        self.noise, self.center = noise, center

    def _grid(self, X, y):
        n = X.shape[0]
        if n > 1:
            d = np.sqrt(np.sum((X[:, None] - X[None]) ** 2, axis=-1))[np.triu_indices(n, 1)]
            base_len = float(np.median(d[d > 0])) if np.any(d > 0) else 1.0
        else:
            base_len = 1.0
        base_var = float(np.var(y)) or 1.0
        lens = [self.length_scale] if self.length_scale is not None else [
            base_len * f for f in LENGTH_FACTORS]
        sigs = [self.signal_var] if self.signal_var is not None else [
            base_var * f for f in SIGNAL_FACTORS]
        noises = [self.noise] if self.noise is not None else [
            base_var * f for f in NOISE_FACTORS]
        return itertools.product(lens, sigs, noises)

    def fit(self, X, y):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        if X.shape[0] != y.size:
            raise ValidationError("inputs and targets differ in length")
        self.offset_ = float(y.mean()) if self.center else 0.0
        yc = y - self.offset_
        if self.kernel is not None:
            if self.noise is None:
                raise ValidationError("a fixed kernel needs an explicit noise variance")
            kern, noise = self.kernel, self.noise
        else:
            best = None
            for ell, sig, nz in self._grid(X, yc):
                k = SquaredExponential(ell, sig)
                lml = log_marginal(k(X, X) + _noise_matrix(nz, y.size), yc)
                if best is None or lml > best[0]:
                    best = (lml, k, nz)
            _, kern, noise = best
        K = kern(X, X) + _noise_matrix(noise, y.size)
        self.kernel_, self.noise_ = kern, noise
        self.log_marginal_ = log_marginal(K, yc)
        self.alpha_ = linalg.cho_solve(factor(K), yc)
        self.X_ = X
        return self

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.kernel_(X, self.X_) @ self.alpha_ + self.offset_

    def to_dict(self):
        kern = self.kernel_.to_dict() if hasattr(self.kernel_, "to_dict") else {"name": "custom"}
        noise = np.asarray(self.noise_, dtype=float)
        return {"kind": "gp", "kernel": kern, "noise": noise.tolist(), "offset": self.offset_,
                "inputs": self.X_.tolist(), "alpha": self.alpha_.tolist()}


def gp_fit(train, kernel=None, noise=None, **kwargs):
    return GaussianProcess(kernel, noise=noise, **kwargs).fit(train.inputs, train.targets)


def gp_predict(model, x):
    return model.predict(x)


def block_inputs(times, P):
    times = np.asarray(times, dtype=int)
    return np.column_stack([np.repeat(times, P), np.tile(np.arange(P), times.size)])


def soft_gp_predict(values, weighting, train_times, query_times, noise_var):
    """Predict soft-panel rows at ``query_times`` from rows at ``train_times``.

    The soft panel is ``values @ W^T``; its empirical lag covariances act as
    the kernel and the hard-space noise variances ``noise_var`` (P,) are
    projected to ``W diag(noise_var) W^T`` within each time.  Returns an
    array (len(query_times), P).
    """
    values = np.asarray(values, dtype=float)
    W = np.asarray(weighting, dtype=float)
    P = values.shape[1]
    soft = values @ W.T
    kern = EmpiricalBlockKernel(soft)
    train_times = np.asarray(train_times, dtype=int)
    proj = W @ np.diag(np.broadcast_to(np.asarray(noise_var, dtype=float), (P,))) @ W.T
    noise = np.kron(np.eye(train_times.size), proj)
    X = block_inputs(train_times, P)
    y = (soft[train_times] - kern.mean).ravel()
    model = GaussianProcess(kern, noise=noise).fit(X, y)
    pred = model.predict(block_inputs(query_times, P))
    return pred.reshape(-1, P) + kern.mean
