"""Penalized cubic B-spline smoother with GCV-selected smoothing parameter.

The basis is a cubic B-spline basis on a uniform knot grid covering the data
abscissae; roughness is penalized through fourth-order differences of the
coefficients.  On uniform knots the coefficients of any cubic polynomial form
a cubic sequence, so the penalty vanishes on cubics and the smoother
reproduces them exactly for every value of the smoothing parameter.
"""

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline
from scipy.optimize import minimize_scalar

from .errors import InsufficientDataError, ValidationError

DEGREE = 3
PENALTY_ORDER = 4
LOG10_LAMBDA_RANGE = (-6.0, 6.0)


def uniform_knots(x):
    """Uniform cubic knot vector whose base interval is ``[x[0], x[-1]]``.

    The spacing is the smallest gap between consecutive abscissae, so for
    daily data every day is a knot (calendar gaps included).
    """
    x = np.asarray(x, dtype=float)
    gaps = np.diff(x)
    if np.any(gaps <= 0):
        raise ValidationError("abscissae must be strictly increasing")
    h = gaps.min()
    m = max(int(round((x[-1] - x[0]) / h)), 1)
    h = (x[-1] - x[0]) / m
    inner = x[0] + h * np.arange(m + 1)
    inner[-1] = x[-1]
    lead = x[0] - h * np.arange(DEGREE, 0, -1)
    tail = x[-1] + h * np.arange(1, DEGREE + 1)
    return np.concatenate([lead, inner, tail])


def _difference_matrix(n, order):
    return np.diff(np.eye(n), n=order, axis=0)


class PenalizedSpline:
    """Fit ``y`` (n, or n x P) on abscissae ``x`` with one GCV-chosen
    smoothing parameter per column.

    Parameters
    ----------
    x : array of shape (n,)
        Strictly increasing abscissae, ``n >= 4``.
    lam : float or None
        Smoothing parameter relative to the basis/penalty scale.  ``None``
        selects it per column by generalized cross-validation.
    """

    def __init__(self, lam=None):
        self.lam = lam

    def fit(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        squeeze = y.ndim == 1
        if squeeze:
            y = y[:, None]
        if x.size < DEGREE + 1:
            raise InsufficientDataError(
                f"cubic smoothing needs at least {DEGREE + 1} points, got {x.size}")
        if y.shape[0] != x.size:
            raise ValidationError("x and y lengths differ")
        self.knots_ = uniform_knots(x)
        basis = BSpline.design_matrix(x, self.knots_, DEGREE).toarray()
        nb = basis.shape[1]
        diff = _difference_matrix(nb, PENALTY_ORDER)
        # relative scaling keeps the lambda grid meaningful for any spacing
        scale = np.sqrt(np.trace(basis.T @ basis) / np.trace(diff.T @ diff))
        self._basis, self._diff, self._scale = basis, diff * scale, scale

        if self.lam is None:
            log_lams = np.array([self._select(y[:, j]) for j in range(y.shape[1])])
        else:
            log_lams = np.full(y.shape[1], np.log10(self.lam))
        coef = np.empty((nb, y.shape[1]))
        for j, ll in enumerate(log_lams):
            coef[:, j] = self._solve(ll, y[:, [j]])[0][:, 0]
        self.log10_lambda_ = log_lams
        self.coef_ = coef[:, 0] if squeeze else coef
        self.spline_ = BSpline(self.knots_, self.coef_, DEGREE, extrapolate=False)
        return self

    def _solve(self, log_lam, y):
        """Least squares on the stacked system [B; sqrt(lam) D] c = [y; 0]."""
        basis, diff = self._basis, self._diff
        stacked = np.vstack([basis, np.sqrt(10.0 ** log_lam) * diff])
        q, r = linalg.qr(stacked, mode="economic")
        rhs = np.vstack([y, np.zeros((diff.shape[0], y.shape[1]))])
        coef = linalg.solve_triangular(r, q.T @ rhs)
        q_top = q[: basis.shape[0]]
        return coef, float(np.sum(q_top * q_top))

    def _gcv(self, log_lam, y):
        coef, trace = self._solve(log_lam, y[:, None])
        n = y.size
        rss = float(np.sum((y - self._basis @ coef[:, 0]) ** 2))
        return n * rss / (n - trace) ** 2

    def _select(self, y):
        lo, hi = LOG10_LAMBDA_RANGE
        grid = np.linspace(lo, hi, 49)
        scores = np.array([self._gcv(g, y) for g in grid])
        i = int(np.argmin(scores))
        a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
        res = minimize_scalar(self._gcv, bounds=(a, b), args=(y,),
                              method="bounded", options={"xatol": 1e-3})
        return float(res.x) if res.fun <= scores[i] else float(grid[i])

    def __call__(self, x, nu=0):
        x = np.clip(np.asarray(x, dtype=float), self.knots_[DEGREE], self.knots_[-DEGREE - 1])
        return self.spline_(x, nu=nu)
