"""Radial basis function network grown one node at a time."""

import numpy as np

from ..errors import ValidationError


def _activations(X, centers, spread):
    d2 = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=-1)
    return np.exp(-d2 / spread ** 2)


class RBFNetwork:
    """Greedy RBF regression.

    Nodes are centred on the worst-fitted training input, one at a time, and
    all output weights are re-solved by least squares after each addition.
    Growth stops once the largest training error is within ``tol`` or every
    distinct training input is a centre.
    """

    def __init__(self, spread=2.5, tol=1e-3, max_nodes=None):
        if not spread > 0:
            raise ValidationError("spread must be positive")
        self.spread = float(spread)
        self.tol = float(tol)
        self.max_nodes = max_nodes

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        M = X.shape[0]
        limit = M if self.max_nodes is None else min(self.max_nodes, M)
        available = np.ones(M, dtype=bool)
        chosen = []
        weights = np.zeros(0)
        resid = y.copy()
        self.history_ = []   # (nodes, max abs error, residual sum of squares)
        while len(chosen) < limit:
            if np.max(np.abs(resid)) <= self.tol and chosen:
                break
            score = np.where(available, np.abs(resid), -np.inf)
            k = int(np.argmax(score))
            if not np.isfinite(score[k]):
                break
            chosen.append(k)
            # duplicates of a centre add nothing new
            available &= np.any(X != X[k], axis=1)
            design = _activations(X, X[chosen], self.spread)
            weights = np.linalg.lstsq(design, y, rcond=None)[0]
            resid = y - design @ weights
            self.history_.append((len(chosen), float(np.max(np.abs(resid))),
                                  float(resid @ resid)))
        self.centers_ = X[chosen]
        self.weights_ = weights
        return self

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.centers_.shape[0] == 0:
            return np.zeros(X.shape[0])
        return _activations(X, self.centers_, self.spread) @ self.weights_

    @property
    def n_nodes(self):
        return self.centers_.shape[0]

    def to_dict(self):
        return {"kind": "rbf", "spread": self.spread, "centers": self.centers_.tolist(),
                "weights": self.weights_.tolist()}


def rbf_fit(train, spread, tol=1e-3, max_nodes=None):
    return RBFNetwork(spread, tol, max_nodes).fit(train.inputs, train.targets)


def rbf_predict(model, x):
    return model.predict(x)
