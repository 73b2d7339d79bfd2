"""Epsilon-insensitive support vector regression solved on the primal."""

import warnings

import numpy as np

from ..errors import ValidationError


def gaussian_gram(A, B, gamma):
    d2 = np.sum((A[:, None, :] - B[None, :, :]) ** 2, axis=-1)
    return np.exp(-gamma * d2)


class SVR:
    """Linear or Gaussian-kernel SVR.

    The primal ``0.5 |f|^2 + C sum max(0, |y - f(x)| - eps)`` is minimized by
    normalized subgradient steps.  A step is kept only when it lowers the
    objective; rejected steps halve the step length, accepted ones let it
    grow slightly.  The running average of accepted iterates is compared
    with the last iterate at the end and the better one is kept.

    Parameters
    ----------
    C : float
        Penalty on tube violations, ``C >= 0``.
    epsilon : float
        Half-width of the insensitive tube.
    kernel : {"linear", "gaussian"}
    gamma : float
        Gaussian kernel ``exp(-gamma |x - x'|^2)``.
    """

    def __init__(self, C=1.0, epsilon=0.1, kernel="linear", gamma=1.0,
                 max_iter=20000, step=1.0):
        if C < 0:
            raise ValidationError("C must be non-negative")
        if epsilon < 0:
            raise ValidationError("epsilon must be non-negative")
        if kernel not in ("linear", "gaussian"):
            raise ValidationError(f"unknown SVR kernel {kernel!r}")
        self.C, self.epsilon, self.kernel = float(C), float(epsilon), kernel
        self.gamma, self.max_iter, self.step = float(gamma), int(max_iter), float(step)

    # the parameter vector is (coef, b); coef is beta or the kernel expansion alpha
    def _parts(self, w):
        return w[:-1], w[-1]

    def _fitted(self, w):
        coef, b = self._parts(w)
        return (self._X @ coef if self.kernel == "linear" else self._K @ coef) + b

    def _norm2(self, coef):
        return coef @ coef if self.kernel == "linear" else coef @ self._K @ coef

    def objective(self, w):
        coef, _ = self._parts(w)
        slack = np.maximum(np.abs(self._y - self._fitted(w)) - self.epsilon, 0.0)
        return 0.5 * self._norm2(coef) + self.C * slack.sum()

    def _direction(self, w):
        coef, _ = self._parts(w)
        r = self._y - self._fitted(w)
        s = np.where(np.abs(r) > self.epsilon, np.sign(r), 0.0)
        if self.kernel == "linear":
            g = np.append(coef - self.C * (self._X.T @ s), -self.C * s.sum())
            size = np.sqrt(g @ g)
        else:
            # gradient taken in the RKHS metric, so coef - C s is the update
            gc = coef - self.C * s
            g = np.append(gc, -self.C * s.sum())
            size = np.sqrt(max(gc @ self._K @ gc, 0.0) + g[-1] ** 2)
        return g, size

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        self._X, self._y = X, y
        if self.kernel == "gaussian":
            self._K = gaussian_gram(X, X, self.gamma)
        n = X.shape[1] if self.kernel == "linear" else X.shape[0]
        w = np.zeros(n + 1)
        w[-1] = np.median(y)
        obj = self.objective(w)
        self.objective_trace_ = [obj]
        avg, n_acc = w.copy(), 1
        eta = self.step
        converged = False
        for _ in range(self.max_iter):
            g, size = self._direction(w)
            if size == 0.0:
                converged = True
                break
            cand = w - (eta / size) * g
            c_obj = self.objective(cand)
            if c_obj < obj:
                w, obj = cand, c_obj
                self.objective_trace_.append(obj)
                n_acc += 1
                avg += (w - avg) / n_acc
                eta *= 1.2
            else:
                eta *= 0.5
                if eta < 1e-12 * max(1.0, np.abs(w).max()):
                    converged = True
                    break
        if not converged:
            warnings.warn(f"SVR subgradient solver stopped after {self.max_iter} "
                          f"iterations, objective {obj:.6g}", RuntimeWarning)
        if self.objective(avg) < obj:
            w, obj = avg, self.objective(avg)
            self.objective_trace_.append(obj)
        self.coef_, self.intercept_ = self._parts(w.copy())
        self.objective_ = obj
        self.X_ = X
        del self._X, self._y
        self.__dict__.pop("_K", None)
        return self

    @property
    def beta(self):
        """Primal weight vector (linear kernel only)."""
        if self.kernel != "linear":
            raise ValidationError("beta is defined for the linear kernel only")
        return self.coef_

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kernel == "linear":
            return X @ self.coef_ + self.intercept_
        return gaussian_gram(X, self.X_, self.gamma) @ self.coef_ + self.intercept_

    def to_dict(self):
        out = {"kind": "svr", "C": self.C, "epsilon": self.epsilon, "kernel": self.kernel,
               "coef": self.coef_.tolist(), "intercept": float(self.intercept_)}
        if self.kernel == "gaussian":
            out.update(gamma=self.gamma, support=self.X_.tolist())
        return out


def svr_fit(train, C, epsilon, kernel="linear", gamma=1.0):
    return SVR(C, epsilon, kernel, gamma).fit(train.inputs, train.targets)


def svr_predict(model, x):
    return model.predict(x)
