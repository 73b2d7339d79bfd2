"""Nonparametric bootstrap: replicate generation, five confidence-interval
constructions and a kernel density estimate of the replicate distribution.

Interval labels:

``I1``  bias-corrected and accelerated percentile (jackknife acceleration)
``I2``  normal approximation with bootstrap bias and standard error
``I3``  basic percentile
``I4``  bias-corrected percentile
``I5``  Student t with B - 1 degrees of freedom
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import DegenerateSampleError, NumericalError, ValidationError

METHODS = ("I1", "I2", "I3", "I4", "I5")
METHOD_NAMES = {"I1": "BCa", "I2": "normal", "I3": "percentile",
                "I4": "bias-corrected percentile", "I5": "Student"}


@dataclass
class BootstrapResult:
    replicates: np.ndarray
    point_estimate: float
    B: int
    seed: int
    jackknife: np.ndarray = None

    def __post_init__(self):
        self.replicates = np.asarray(self.replicates, dtype=float)
        if self.B < 2 or self.replicates.size != self.B:
            raise ValidationError("a bootstrap result needs B >= 2 replicates")
        if not np.all(np.isfinite(self.replicates)):
            raise NumericalError("bootstrap replicates must be finite")

    @property
    def degenerate(self):
        return np.ptp(self.replicates) == 0.0


def resample(data, statistic, B=1000, seed=0, axis=0, jackknife=True, vectorized=False):
    """Apply ``statistic`` to ``B`` with-replacement resamples of ``data``.

    Resampling draws indices along ``axis`` (rows by default, so a panel
    keeps all regions of a time together).  The whole B x n index matrix is
    drawn from one generator seeded by ``seed``, which makes replicate i the
    same however the statistics are later evaluated.

    With ``vectorized=True`` the statistic receives all resamples stacked
    on a new leading axis and must return one value per resample; the
    point and jackknife values are then computed on a stack of one.
    """
    data = np.asarray(data)
    if B < 2:
        raise ValidationError("B must be at least 2")
    n = data.shape[axis]
    if n < 1:
        raise ValidationError("cannot resample an empty sample")
    idx = np.random.default_rng(seed).integers(0, n, size=(B, n))
    if vectorized:
        stat = statistic
        reps = np.asarray(stat(np.take(data, idx, axis=axis)), dtype=float)
        bad = np.flatnonzero(~np.isfinite(reps))
        if bad.size:
            raise NumericalError(f"statistic failed on replicate {bad[0]}: non-finite value")

        def statistic(x):
            return float(stat(x[None])[0])
    else:
        reps = np.empty(B)
        for i in range(B):
            try:
                reps[i] = statistic(np.take(data, idx[i], axis=axis))
            except Exception as exc:
                raise NumericalError(f"statistic failed on replicate {i}: {exc}") from exc
    point = float(statistic(data))
    jack = None
    if jackknife and n > 1:
        keep = ~np.eye(n, dtype=bool)
        jack = np.array([statistic(np.take(data, np.flatnonzero(keep[j]), axis=axis))
                         for j in range(n)], dtype=float)
    return BootstrapResult(reps, point, B, int(seed), jack)


def _quantile(x, q):
    return np.quantile(x, q, method="linear")


def _z0(result):
    reps = result.replicates
    frac = (np.sum(reps < result.point_estimate)
            + 0.5 * np.sum(reps == result.point_estimate)) / reps.size
    frac = np.clip(frac, 0.5 / reps.size, 1.0 - 0.5 / reps.size)
    return stats.norm.ppf(frac)


def acceleration(jack):
    """``sum d^3 / (6 (sum d^2)^{3/2})`` with ``d = mean(jack) - jack``."""
    if jack is None or jack.size < 2:
        return 0.0
    d = jack.mean() - jack
    ss = np.sum(d * d)
    return 0.0 if ss == 0 else float(np.sum(d ** 3) / (6.0 * ss ** 1.5))


def ci(result, method="I3", level=0.95):
    """Two-sided interval ``(lower, upper)`` at confidence ``level``."""
    if method not in METHODS:
        raise ValidationError(f"unknown interval method {method!r}; expected one of {METHODS}")
    if not 0 < level < 1:
        raise ValidationError("level must lie in (0, 1)")
    alpha = 1.0 - level
    if result.B * alpha / 2 < 1:
        raise ValidationError(f"B={result.B} is too small for level {level}")
    point = result.point_estimate
    if result.degenerate:
        return point, point
    reps = result.replicates
    sd = reps.std(ddof=1)
    z = stats.norm.ppf(1 - alpha / 2)
    if method == "I3":
        lo, hi = _quantile(reps, [alpha / 2, 1 - alpha / 2])
    elif method == "I2":
        centre = point - (reps.mean() - point)
        lo, hi = centre - z * sd, centre + z * sd
    elif method == "I5":
        t = stats.t.ppf(1 - alpha / 2, reps.size - 1)
        lo, hi = point - t * sd, point + t * sd
    else:
        z0 = _z0(result)
        a = acceleration(result.jackknife) if method == "I1" else 0.0
        ends = []
        for zq in (-z, z):
            w = z0 + zq
            ends.append(stats.norm.cdf(z0 + w / (1 - a * w)))
        lo, hi = _quantile(reps, ends)
    return float(min(lo, hi)), float(max(lo, hi))


@dataclass
class CiSet:
    level: float
    B: int
    seed: int
    intervals: dict = field(default_factory=dict)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "lower", "upper", "level", "B", "seed"])
            for m, (lo, hi) in self.intervals.items():
                w.writerow([m, repr(lo), repr(hi), repr(self.level), self.B, self.seed])


def ci_set(result, level=0.95, methods=METHODS):
    return CiSet(level, result.B, result.seed, {m: ci(result, m, level) for m in methods})


def format_ci_table(columns, digits=4, corner="CI/S"):
    """Text table with one row per method and one column per labelled CiSet."""
    names = list(columns)
    methods = list(next(iter(columns.values())).intervals)
    body = [[m, *(f"[{columns[c].intervals[m][0]:.{digits}g}, "
                  f"{columns[c].intervals[m][1]:.{digits}g}]" for c in names)]
            for m in methods]
    rows = [[corner, *names], *body]
    widths = [max(len(r[j]) for r in rows) for j in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    return "\n".join(lines) + "\n"


def silverman_bandwidth(x):
    x = np.asarray(x, dtype=float)
    sd = x.std(ddof=1)
    iqr = np.subtract(*np.quantile(x, [0.75, 0.25]))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * x.size ** (-0.2)


def density(result, grid_size=512):
    """Gaussian KDE of the replicates with Silverman's bandwidth on a grid
    spanning the data range padded by three bandwidths."""
    if result.degenerate:
        raise DegenerateSampleError(
            "replicates have no spread; use the point interval instead of a density")
    x = result.replicates
    h = silverman_bandwidth(x)
    grid = np.linspace(x.min() - 3 * h, x.max() + 3 * h, grid_size)
    dens = np.empty(grid_size)
    norm = 1.0 / (x.size * h * np.sqrt(2 * np.pi))
    for i in range(0, grid_size, 64):
        u = (grid[i:i + 64, None] - x[None, :]) / h
        dens[i:i + 64] = norm * np.exp(-0.5 * u * u).sum(axis=1)
    return grid, dens


def histogram(result, bins="auto"):
    counts, edges = np.histogram(result.replicates, bins=bins, density=True)
    return 0.5 * (edges[:-1] + edges[1:]), counts


def write_density_csv(path, grid, dens):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "density"])
        for a, b in zip(grid, dens):
            w.writerow([repr(float(a)), repr(float(b))])
