"""One-hidden-layer logistic perceptrons: plain least squares (MLP) and the
evidence-regularized variant (BNN)."""

import numpy as np
from scipy.special import expit

from ..errors import ConvergenceError, ValidationError

NU_GRID = np.round(np.arange(0.05, 0.951, 0.05), 2)
MAX_NAN_BACKOFFS = 5


def standardizer(X):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return mu, sd


class _Net:
    """Parameter packing and derivatives for ``eta0 + sum_k eta_k g(W_k . [1, x])``."""

    def __init__(self, n_in, NH):
        self.n_in, self.NH = n_in, NH
        self.size = NH * (n_in + 1) + NH + 1

    def unpack(self, w):
        k = self.NH * (self.n_in + 1)
        return w[:k].reshape(self.NH, self.n_in + 1), w[k], w[k + 1:]

    def hidden(self, w, Xa):
        W, _, _ = self.unpack(w)
        return expit(Xa @ W.T)

    def output(self, w, Xa):
        _, e0, eta = self.unpack(w)
        return e0 + self.hidden(w, Xa) @ eta

    def sse_grad(self, w, Xa, y):
        """Half the residual sum of squares and its gradient."""
        W, e0, eta = self.unpack(w)
        H = expit(Xa @ W.T)
        r = e0 + H @ eta - y
        dZ = np.outer(r, eta) * H * (1.0 - H)
        grad = np.concatenate([(dZ.T @ Xa).ravel(), [r.sum()], H.T @ r])
        return 0.5 * (r @ r), grad

    def jacobian(self, w, Xa):
        """d output / d parameters, one row per sample."""
        W, _, eta = self.unpack(w)
        H = expit(Xa @ W.T)
        dW = (H * (1.0 - H) * eta)[:, :, None] * Xa[:, None, :]
        return np.hstack([dW.reshape(Xa.shape[0], -1), np.ones((Xa.shape[0], 1)), H])


def _descend(objective, w, max_iter, tol, lr=0.1, momentum=0.9):
    """Full-batch gradient descent with momentum and an adaptive rate.

    A trial step is kept only when the objective does not increase, so the
    accepted losses form a non-increasing sequence (returned as the trace).
    """
    f, g = objective(w)
    trace = [f]
    v = np.zeros_like(w)
    nan_backoffs = stalled = 0
    for _ in range(max_iter):
        v_new = momentum * v - lr * g
        cand = w + v_new
        f_new, g_new = objective(cand)
        if not np.isfinite(f_new) or not np.all(np.isfinite(g_new)):
            nan_backoffs += 1
            if nan_backoffs > MAX_NAN_BACKOFFS:
                raise ConvergenceError(
                    f"training diverged after {MAX_NAN_BACKOFFS} learning-rate backoffs")
            lr *= 0.1
            v[:] = 0.0
            continue
        if f_new <= f:
            stalled = stalled + 1 if f - f_new <= tol * f else 0
            w, f, g, v = cand, f_new, g_new, v_new
            trace.append(f)
            lr *= 1.05
            if f == 0.0 or stalled >= 10:
                break
        else:
            v[:] = 0.0
            lr *= 0.5
            if lr < 1e-14:
                break
    return w, np.array(trace)


class MLP:
    """Logistic hidden layer, linear output, least-squares training.

    ``NH = 0`` is the affine model solved in closed form.  Otherwise inputs
    are standardized, weights start from a seeded uniform(-0.5, 0.5) draw,
    and training ends with an exact least-squares solve for the output
    layer, kept only if it lowers the loss.
    """

    def __init__(self, NH=3, seed=0, max_iter=3000, tol=1e-10):
        if NH < 0:
            raise ValidationError("NH must be non-negative")
        self.NH, self.seed, self.max_iter, self.tol = int(NH), seed, max_iter, tol

    def _design(self, X):
        Z = (X - self.mu_) / self.sd_
        return np.column_stack([np.ones(Z.shape[0]), Z])

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.NH == 0:
            A = np.column_stack([np.ones(X.shape[0]), X])
            sol = np.linalg.lstsq(A, y, rcond=None)[0]
            self.intercept_, self.coef_ = float(sol[0]), sol[1:]
            r = y - A @ sol
            self.loss_trace_ = np.array([0.5 * r @ r])
            return self
        self.mu_, self.sd_ = standardizer(X)
        Xa = self._design(X)
        self.net_ = _Net(X.shape[1], self.NH)
        w0 = np.random.default_rng(self.seed).uniform(-0.5, 0.5, self.net_.size)
        w, trace = _descend(lambda w: self.net_.sse_grad(w, Xa, y), w0,
                            self.max_iter, self.tol)
        w = self._polish(w, Xa, y, trace[-1], ridge=0.0)
        self.weights_ = w
        self.loss_trace_ = np.append(trace, self.net_.sse_grad(w, Xa, y)[0])
        return self

    def _polish(self, w, Xa, y, current, ridge):
        H = np.column_stack([np.ones(Xa.shape[0]), self.net_.hidden(w, Xa)])
        if ridge > 0:
            A = np.vstack([H, np.sqrt(ridge) * np.eye(H.shape[1])])
            rhs = np.concatenate([y, np.zeros(H.shape[1])])
        else:
            A, rhs = H, y
        out = np.linalg.lstsq(A, rhs, rcond=None)[0]
        trial = w.copy()
        trial[-(self.NH + 1):] = out
        return trial if self._objective(trial, Xa, y) <= current else w

    def _objective(self, w, Xa, y):
        return self.net_.sse_grad(w, Xa, y)[0]

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.NH == 0:
            return self.intercept_ + X @ self.coef_
        return self.net_.output(self.weights_, self._design(X))

    def to_dict(self):
        if self.NH == 0:
            return {"kind": "mlp", "NH": 0, "intercept": self.intercept_,
                    "coef": self.coef_.tolist()}
        return {"kind": "mlp", "NH": self.NH, "seed": self.seed,
                "input_mean": self.mu_.tolist(), "input_scale": self.sd_.tolist(),
                "weights": self.weights_.tolist()}


class BNN(MLP):
    """Same network trained on ``J = nu E_O + (1 - nu) E_W``.

    ``E_O`` is half the residual sum of squares and ``E_W`` half the sum of
    squared parameters.  With ``nu=None`` the trade-off is chosen on
    ``NU_GRID`` by maximizing a Laplace (Gauss-Newton) evidence
    approximation, alternating with refits of the weights.  Targets are
    centred first, so the weight prior shrinks towards the sample mean.
    """

    def __init__(self, NH=3, seed=0, nu=None, max_iter=3000, tol=1e-10, max_rounds=20):
        if NH < 1:
            raise ValidationError("BNN needs NH >= 1")
        super().__init__(NH, seed, max_iter, tol)
        self.nu, self.max_rounds = nu, max_rounds

    def _J(self, w, Xa, y, nu):
        eo, go = self.net_.sse_grad(w, Xa, y)
        return nu * eo + (1 - nu) * 0.5 * (w @ w), nu * go + (1 - nu) * w

    def _objective(self, w, Xa, y):
        return self._J(w, Xa, y, self._nu)[0]

    def _train(self, w, Xa, y, nu):
        self._nu = nu
        w, trace = _descend(lambda v: self._J(v, Xa, y, nu), w, self.max_iter, self.tol)
        w = self._polish(w, Xa, y, trace[-1], ridge=(1 - nu) / nu)
        return w, self._J(w, Xa, y, nu)[0]

    def log_evidence(self, w, Xa, y, nu):
        M, L = Xa.shape[0], w.size
        G = self.net_.jacobian(w, Xa)
        A = nu * (G.T @ G) + (1 - nu) * np.eye(L)
        logdet = np.linalg.slogdet(A)[1]
        J = self._J(w, Xa, y, nu)[0]
        return (-J - 0.5 * logdet + 0.5 * L * np.log(1 - nu)
                + 0.5 * M * np.log(nu) - 0.5 * M * np.log(2 * np.pi))

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        self.mu_, self.sd_ = standardizer(X)
        self.offset_ = float(y.mean())
        y = y - self.offset_
        Xa = self._design(X)
        self.net_ = _Net(X.shape[1], self.NH)
        w = np.random.default_rng(self.seed).uniform(-0.5, 0.5, self.net_.size)
        if self.nu is not None:
            nu = float(self.nu)
            w, J = self._train(w, Xa, y, nu)
        else:
            nu = 0.5
            w, J = self._train(w, Xa, y, nu)
            for _ in range(self.max_rounds):
                ev = [self.log_evidence(w, Xa, y, v) for v in NU_GRID]
                new_nu = float(NU_GRID[int(np.argmax(ev))])
                if new_nu == nu:
                    break
                w, J_new = self._train(w, Xa, y, new_nu)
                nu, changed = new_nu, abs(J_new - J)
                J = J_new
                if changed < 1e-8:
                    break
        self.nu_, self.weights_, self.J_ = nu, w, J
        self.E_O_ = self.net_.sse_grad(w, Xa, y)[0]
        self.E_W_ = 0.5 * (w @ w)
        return self

    def predict(self, X):
        return super().predict(X) + self.offset_

    def to_dict(self):
        out = super().to_dict()
        out.update(kind="bnn", nu=self.nu_, target_offset=self.offset_)
        return out


def mlp_fit(train, NH, seed=0):
    return MLP(NH, seed).fit(train.inputs, train.targets)


def mlp_predict(model, x):
    return model.predict(x)


def bnn_fit(train, NH, seed=0, nu=None):
    return BNN(NH, seed, nu).fit(train.inputs, train.targets)


def bnn_predict(model, x):
    return model.predict(x)
