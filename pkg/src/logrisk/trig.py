"""Harmonic log-risk regression shared across regions.

Each region's log-risk curve is modelled as
``g_t = sum_k A_k cos(phi_k t) + B_k sin(phi_k t)`` with frequencies common
to all regions, fitted by least squares on the node index ``t = 1..T``.

Two frequency conventions are supported:

``standard``
    ``phi_k = 2 pi k / T`` for ``k = 1..N``; the Gram matrix in the selection
    ratio is the raw ``Phi^T Phi``.
``shifted``
    ``phi_k = 2 pi (k - 1) / T`` so the first harmonic is the constant term
    (its sine column vanishes and ``B_1`` is pinned at 0), and the Gram
    matrix is normalized by ``T``.  With ``N = 6`` and ``T = 265`` this gives
    the selection ratio 1.1304.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DimensionError, RankError, ValidationError

STANDARD, SHIFTED = "standard", "shifted"
CONDITION_LIMIT = 1e10


def harmonic_frequencies(N, T, convention=STANDARD):
    k = np.arange(1, N + 1, dtype=float)
    if convention == SHIFTED:
        k = k - 1.0
    elif convention != STANDARD:
        raise ValidationError(f"unknown frequency convention {convention!r}")
    return 2.0 * np.pi * k / T


def node_index(T):
    return np.arange(1, T + 1, dtype=float)


def design_matrix(frequencies, times, pin_b1=False):
    """Columns ``cos(phi_1 t), sin(phi_1 t), cos(phi_2 t), ...``.

    With ``pin_b1`` the ``sin(phi_1 t)`` column is left out.
    """
    freqs = np.atleast_1d(np.asarray(frequencies, dtype=float))
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if freqs.size == 0 or t.size == 0:
        raise ValidationError("design matrix needs frequencies and times")
    arg = np.outer(t, freqs)
    cols = np.empty((t.size, 2 * freqs.size))
    cols[:, 0::2] = np.cos(arg)
    cols[:, 1::2] = np.sin(arg)
    if pin_b1:
        cols = np.delete(cols, 1, axis=1)
    return cols


def _column_frequencies(frequencies, pin_b1):
    labels = [f for phi in frequencies for f in (phi, phi)]
    if pin_b1:
        del labels[1]
    return labels


@dataclass(frozen=True)
class TrigModel:
    frequencies: np.ndarray
    A: np.ndarray
    B: np.ndarray
    T_fit: int
    region_ids: tuple = ()
    pin_b1: bool = False
    convention: str = STANDARD

    def __post_init__(self):
        f = np.atleast_1d(np.asarray(self.frequencies, dtype=float))
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if np.any(np.diff(f) <= 0):
            raise ValidationError("frequencies must be strictly increasing")
        if np.any(f < 0) or (f[0] == 0 and not self.pin_b1):
            raise ValidationError("frequencies must be positive (zero only with pin_b1)")
        if A.shape != B.shape or A.shape[0] != f.size:
            raise DimensionError(
                f"coefficient shapes {A.shape}/{B.shape} do not match N={f.size}")
        if self.pin_b1 and np.any(B[0] != 0):
            raise ValidationError("B_1 must be zero when pinned")
        ids = tuple(self.region_ids) or tuple(f"R{j + 1}" for j in range(A.shape[1]))
        if len(ids) != A.shape[1]:
            raise DimensionError("region_ids length does not match coefficient columns")
        for name, arr in (("frequencies", f), ("A", A), ("B", B)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "region_ids", ids)

    @property
    def N(self):
        return self.frequencies.size

    @property
    def P(self):
        return self.A.shape[1]

    @property
    def n_params(self):
        return 2 * self.N - int(self.pin_b1)

    def coefficient_matrix(self):
        """Coefficients stacked in design-column order, shape (n_params, P)."""
        c = np.empty((2 * self.N, self.P))
        c[0::2], c[1::2] = self.A, self.B
        return np.delete(c, 1, axis=0) if self.pin_b1 else c

    def to_dict(self):
        return {"N": self.N, "frequencies": self.frequencies.tolist(),
                "regions": list(self.region_ids), "A": self.A.tolist(),
                "B": self.B.tolist(), "T_fit": int(self.T_fit),
                "pin_b1": bool(self.pin_b1), "convention": self.convention}

    @classmethod
    def from_dict(cls, d):
        model = cls(d["frequencies"], d["A"], d["B"], d["T_fit"], d.get("regions", ()),
                    d.get("pin_b1", False), d.get("convention", STANDARD))
        if model.N != d.get("N", model.N):
            raise ValidationError("N does not match the number of frequencies")
        return model

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _rank_failure(design, frequencies, pin_b1):
    labels = _column_frequencies(frequencies, pin_b1)
    norms = np.linalg.norm(design, axis=0)
    zero = np.flatnonzero(norms < 1e-12 * max(norms.max(), 1.0))
    if zero.size:
        phi = labels[zero[0]]
        return RankError(f"design column for frequency {phi:.6g} vanishes on the sample "
                         f"(frequency pair ({phi:.6g}, {phi:.6g}))")
    unit = design / norms
    corr = np.abs(unit.T @ unit)
    np.fill_diagonal(corr, 0.0)
    best, pair = -1.0, None
    for i in range(corr.shape[0]):
        for j in range(i + 1, corr.shape[0]):
            if labels[i] != labels[j] and corr[i, j] > best:
                best, pair = corr[i, j], (labels[i], labels[j])
    if pair is None:
        pair = (labels[0], labels[0])
    return RankError("rank-deficient harmonic design: frequencies "
                     f"({pair[0]:.6g}, {pair[1]:.6g}) are duplicated or aliased")


def least_squares(design, y):
    """QR with column pivoting; returns coefficients and the condition number."""
    q, r, piv = linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    cond = np.inf if diag[-1] == 0 else np.linalg.cond(r)
    coef = np.empty((design.shape[1], y.shape[1]))
    if np.isfinite(cond):
        coef[piv] = linalg.solve_triangular(r, q.T @ y)
    return coef, cond


def fit(panel, N=None, frequencies=None, pin_b1=False, convention=STANDARD, times=None):
    """Least-squares harmonic fit of every region of ``panel``.

    Either ``N`` (frequencies from ``convention``) or explicit
    ``frequencies`` must be given.  Times default to the node index 1..T.
    """
    T = panel.T
    if frequencies is None:
        if N is None:
            raise ValidationError("give N or frequencies")
        frequencies = harmonic_frequencies(N, T, convention)
        if convention == SHIFTED:
            pin_b1 = True
    frequencies = np.atleast_1d(np.asarray(frequencies, dtype=float))
    n_params = 2 * frequencies.size - int(pin_b1)
    if T < n_params:
        raise ValidationError(f"T={T} is too short for {n_params} coefficients")
    t = node_index(T) if times is None else np.asarray(times, dtype=float)
    design = design_matrix(frequencies, t, pin_b1)
    coef, cond = least_squares(design, panel.values)
    if not cond < CONDITION_LIMIT:
        raise _rank_failure(design, frequencies, pin_b1)
    full = np.insert(coef, 1, 0.0, axis=0) if pin_b1 else coef
    return TrigModel(frequencies, full[0::2], full[1::2], T, panel.region_ids,
                     pin_b1, convention)


def predict(model, times):
    """Regression predictor at arbitrary (node-index) times, shape (n, P)."""
    design = design_matrix(model.frequencies, times, model.pin_b1)
    return design @ model.coefficient_matrix()


def _check_grid(model, panel):
    if model.T_fit != panel.T or model.P != panel.P:
        raise DimensionError(
            f"model fitted on T={model.T_fit}, P={model.P} but panel has "
            f"T={panel.T}, P={panel.P}")


def empirical_risk(model, panel):
    """Mean squared residual per region, ``(1/T) sum_t (value - fitted)^2``."""
    _check_grid(model, panel)
    r = panel.values - predict(model, node_index(panel.T))
    return np.mean(r * r, axis=0)


def projection_risk(panel, design):
    """``(1/T) R^T (I - Phi (Phi^T Phi)^{-1} Phi^T) R`` per region.

    Computed from the normal equations, independently of the QR fit.
    """
    R = panel.values
    gram = design.T @ design
    proj = design @ linalg.solve(gram, design.T @ R, assume_a="pos")
    return np.einsum("tp,tp->p", R, R - proj) / R.shape[0]


def gram_eigenvalues(design, normalize=False):
    gram = design.T @ design
    if normalize:
        gram = gram / design.shape[0]
    return linalg.eigvalsh(gram)


def selection_ratio(T, N, design=None, normalize=False, n_params=None):
    """Ratio of expected loss to expected minimized empirical risk.

    ``(1 - n/T)^{-1} (1 + sum_i 1/lambda_i / T)`` where ``lambda_i`` are the
    eigenvalues of ``Phi^T Phi`` (divided by ``T`` when ``normalize``) and
    ``n`` is the number of estimated coefficients, by default the number of
    design columns.  An empty model (``N = 0`` or no design) has ratio 1.
    """
    if N == 0 or design is None or design.shape[1] == 0:
        return 1.0
    n = design.shape[1] if n_params is None else n_params
    if n >= T:
        raise ValidationError(f"parameter count {n} must be below T={T}")
    lam = gram_eigenvalues(design, normalize)
    if lam.min() <= 1e-12 * max(lam.max(), 1e-300):
        raise RankError("Phi^T Phi is singular; the selection ratio is undefined")
    return (1.0 - n / T) ** -1 * (1.0 + np.sum(1.0 / lam) / T)


def ratio_for(N, T, convention=STANDARD, pin_b1=False):
    """Selection ratio of the harmonic design with N harmonics on 1..T."""
    if N == 0:
        return 1.0
    freqs = harmonic_frequencies(N, T, convention)
    if convention == SHIFTED:
        design = design_matrix(freqs, node_index(T), pin_b1=True)
        return selection_ratio(T, N, design, normalize=True, n_params=2 * N)
    design = design_matrix(freqs, node_index(T), pin_b1)
    return selection_ratio(T, N, design)


@dataclass
class SelectionReport:
    candidates: list = field(default_factory=list)
    chosen_N: int = 0
    threshold: float = np.inf

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("N,ratio,mean_risk\n")
            for n, ratio, risk in self.candidates:
                fh.write(f"{n},{ratio:.15g},{risk:.15g}\n")


def select_N(panel, candidates, threshold, convention=STANDARD, pin_b1=False):
    """Largest candidate N whose selection ratio stays within ``threshold``."""
    if not candidates:
        raise ValidationError("no candidate harmonic counts")
    rows = []
    for N in sorted(candidates):
        if 2 * N >= panel.T:
            raise ValidationError(f"candidate N={N} needs 2N < T={panel.T}")
        ratio = ratio_for(N, panel.T, convention, pin_b1)
        model = fit(panel, N, pin_b1=pin_b1, convention=convention)
        rows.append((N, float(ratio), float(np.mean(empirical_risk(model, panel)))))
    feasible = [n for n, ratio, _ in rows if ratio <= threshold]
    if not feasible:
        smallest = min(r for _, r, _ in rows)
        raise ValidationError(
            f"no candidate has ratio <= {threshold}; the smallest ratio is "
            f"{smallest:.6g}, increase the threshold")
    return SelectionReport(rows, max(feasible), threshold)


def format_risk_table(risks, per_row=5, digits=4):
    """Per-region minimized risks laid out ``per_row`` to a line."""
    cells = [f"{r:.{digits}f}" for r in np.asarray(risks, dtype=float)]
    lines = ["  ".join(cells[i:i + per_row]) for i in range(0, len(cells), per_row)]
    return "\n".join(lines)
