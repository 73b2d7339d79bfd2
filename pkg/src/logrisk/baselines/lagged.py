"""Sliding-window regression samples from a single log-risk series."""

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError


@dataclass(frozen=True)
class LaggedDataset:
    inputs: np.ndarray       # (M, j0), most recent value first
    targets: np.ndarray      # (M,)
    j0: int
    region: int = 0
    target_index: np.ndarray = None   # 0-based node index of each target

    @property
    def M(self):
        return self.targets.size

    def take(self, rows):
        idx = None if self.target_index is None else self.target_index[rows]
        return LaggedDataset(self.inputs[rows], self.targets[rows], self.j0, self.region, idx)


def lag_matrix(series, j0):
    """Inputs ``(v_t, ..., v_{t-j0+1})`` and targets ``v_{t+1}``."""
    v = np.asarray(series, dtype=float)
    T = v.size
    if j0 < 1:
        raise ValidationError("j0 must be at least 1")
    if T <= j0:
        raise ValidationError(f"series of length {T} is too short for {j0} lags")
    rows = np.arange(j0 - 1, T - 1)
    X = np.column_stack([v[rows - i] for i in range(j0)])
    return X, v[rows + 1], rows + 1


def build_lagged(panel, region, j0):
    series = panel.values[:, region] if hasattr(panel, "values") else panel
    X, y, idx = lag_matrix(series, j0)
    return LaggedDataset(X, y, j0, region, idx)
