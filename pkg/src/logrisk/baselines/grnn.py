"""General regression neural network (Nadaraya-Watson with a Gaussian kernel)."""

import numpy as np

from ..errors import ValidationError


def _weights(train_inputs, queries, h):
    d2 = np.sum((queries[:, None, :] - train_inputs[None, :, :]) ** 2, axis=-1)
    # shifting by the nearest distance keeps the nearest weight at 1, so the
    # weights never all underflow; the limit is the nearest-neighbour target
    d2 = d2 - d2.min(axis=1, keepdims=True)
    return np.exp(-d2 / (2.0 * h * h))


class GRNN:
    def __init__(self, h=0.05):
        if not h > 0:
            raise ValidationError("bandwidth h must be positive")
        self.h = float(h)

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.shape[0] == 0:
            raise ValidationError("GRNN needs at least one training sample")
        self.X_, self.y_ = X, y
        return self

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        w = _weights(self.X_, X, self.h)
        return (w @ self.y_) / w.sum(axis=1)

    def to_dict(self):
        return {"kind": "grnn", "h": self.h, "inputs": self.X_.tolist(),
                "targets": self.y_.tolist()}


def grnn_predict(train, x, h):
    return float(GRNN(h).fit(train.inputs, train.targets).predict(x)[0])


def grnn_temporal_predict(history, j0, h):
    """Vector forecast of the next row from the last ``j0`` rows of ``history``.

    The current state ``y_t`` is compared with ``y_{t-j}``, j = 1..j0-1, and
    the rows that followed those states are averaged with kernel weights.
    """
    Y = np.atleast_2d(np.asarray(history, dtype=float))
    if j0 < 2:
        raise ValidationError("the temporal GRNN needs j0 >= 2")
    if Y.shape[0] < j0:
        raise ValidationError(f"need {j0} rows of history, got {Y.shape[0]}")
    current = Y[-1]
    past = Y[-1 - np.arange(1, j0)]          # y_{t-j}
    following = Y[-np.arange(1, j0)]         # y_{t-j+1}
    w = _weights(past, current[None, :], h)[0]
    return w @ following / w.sum()
