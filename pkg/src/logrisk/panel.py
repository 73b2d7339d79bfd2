"""Raw daily counts to smoothed log-risk panels (hard and soft data)."""

import csv
import datetime as dt
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import (ConflictError, DimensionError, InsufficientDataError,
                     ParseError, ValidationError)
from .smoothing import PenalizedSpline

DEFAULT_NODES = 265
DEFAULT_FLOOR = 1e-6
DEFAULT_SCHEMA = {"date": "date", "region": "region", "count": "count"}
HARD, SOFT = "hard", "soft"


@dataclass(frozen=True)
class CountPanel:
    region_ids: tuple
    dates: tuple
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        object.__setattr__(self, "region_ids", tuple(self.region_ids))
        object.__setattr__(self, "dates", tuple(self.dates))
        if counts.shape != (len(self.dates), len(self.region_ids)):
            raise DimensionError(
                f"counts shape {counts.shape} does not match "
                f"{len(self.dates)} dates x {len(self.region_ids)} regions")
        if not self.region_ids or not self.dates:
            raise ValidationError("a count panel needs at least one region and one date")
        if np.any(counts < 0):
            raise ValidationError("counts must be non-negative")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValidationError("dates must be strictly increasing")
        counts = counts.copy()
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @property
    def day_offsets(self):
        """Days elapsed since the first date, as floats."""
        first = self.dates[0]
        return np.array([(d - first).days for d in self.dates], dtype=float)


@dataclass(frozen=True)
class LogRiskPanel:
    node_times: np.ndarray
    region_ids: tuple
    values: np.ndarray
    mode: str = HARD

    def __post_init__(self):
        times = np.array(self.node_times, dtype=float)
        values = np.array(self.values, dtype=float)
        object.__setattr__(self, "region_ids", tuple(self.region_ids))
        if values.ndim != 2 or values.shape != (times.size, len(self.region_ids)):
            raise DimensionError(
                f"values shape {values.shape} does not match "
                f"{times.size} nodes x {len(self.region_ids)} regions")
        if not np.all(np.isfinite(values)):
            raise ValidationError("log-risk values must be finite")
        if self.mode not in (HARD, SOFT):
            raise ValidationError(f"mode must be 'hard' or 'soft', not {self.mode!r}")
        times.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "node_times", times)
        object.__setattr__(self, "values", values)

    @property
    def T(self):
        return self.values.shape[0]

    @property
    def P(self):
        return self.values.shape[1]

    def with_values(self, values, mode=None):
        return LogRiskPanel(self.node_times, self.region_ids, values,
                            self.mode if mode is None else mode)

    def subset(self, rows):
        return LogRiskPanel(self.node_times[rows], self.region_ids,
                            self.values[rows], self.mode)


@dataclass(frozen=True)
class SpatialWeighting:
    """Row-stochastic P x P matrix mapping hard regional values to soft ones."""

    matrix: np.ndarray
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"weighting matrix must be square, got {m.shape}")
        if np.any(m < 0):
            raise ValidationError("weighting entries must be non-negative")
        if np.any(np.abs(m.sum(axis=1) - 1.0) > 1e-12):
            raise ValidationError("weighting rows must sum to 1")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def P(self):
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, P):
        return cls(np.eye(P), "identity")

    @classmethod
    def gaussian_kernel(cls, centroids, bandwidth):
        """Rows ``exp(-|c_p - c_q|^2 / (2 h^2))``, normalized to sum 1."""
        c = np.atleast_2d(np.asarray(centroids, dtype=float))
        if c.shape[0] == 1 and c.shape[1] > 1 and np.ndim(centroids) == 1:
            c = c.T
        if bandwidth <= 0:
            raise ValidationError("bandwidth must be positive")
        d2 = np.sum((c[:, None, :] - c[None, :, :]) ** 2, axis=-1)
        # shift by the row minimum (the diagonal, 0) keeps the diagonal at 1
        k = np.exp(-(d2 - d2.min(axis=1, keepdims=True)) / (2.0 * bandwidth ** 2))
        return cls(k / k.sum(axis=1, keepdims=True), "gaussian_kernel",
                   {"bandwidth": float(bandwidth), "centroids": c.tolist()})

    @classmethod
    def custom(cls, matrix):
        """Normalize the rows of a non-negative matrix."""
        m = np.asarray(matrix, dtype=float)
        sums = m.sum(axis=1, keepdims=True)
        if np.any(sums <= 0):
            raise ValidationError("every weighting row needs positive mass")
        return cls(m / sums, "custom")


class SmoothedCurves(NamedTuple):
    node_times: np.ndarray
    values: np.ndarray
    derivative: np.ndarray
    log10_lambda: np.ndarray


def _parse_date(text):
    return dt.date.fromisoformat(text.strip())


def parse_counts(path, schema=None):
    """Read a long-format ``date,region,count`` CSV into a :class:`CountPanel`.

    Regions keep their order of first appearance; dates are sorted.  Cells
    with no record are zero.
    """
    cols = dict(DEFAULT_SCHEMA, **(schema or {}))
    records = {}
    regions = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError("no records")
        missing = [c for c in cols.values() if c not in reader.fieldnames]
        if missing:
            raise ParseError(f"missing column(s) {', '.join(missing)}", line=1)
        for row in reader:
            line = reader.line_num
            try:
                day = _parse_date(row[cols["date"]])
                region = row[cols["region"]].strip()
                count = int(row[cols["count"]])
            except (TypeError, ValueError, AttributeError) as exc:
                raise ParseError(f"malformed row ({exc})", line=line) from None
            if not region:
                raise ParseError("empty region label", line=line)
            if count < 0:
                raise ParseError(f"negative count {count}", line=line)
            if (day, region) in records:
                raise ConflictError(
                    f"line {line}: duplicate record for ({day.isoformat()}, {region})")
            records[(day, region)] = count
            regions.setdefault(region, len(regions))
    if not records:
        raise ParseError("no records")
    dates = sorted({d for d, _ in records})
    row_of = {d: i for i, d in enumerate(dates)}
    counts = np.zeros((len(dates), len(regions)), dtype=np.int64)
    for (day, region), n in records.items():
        counts[row_of[day], regions[region]] = n
    return CountPanel(tuple(regions), tuple(dates), counts)


def write_counts(panel, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "region", "count"])
        for i, day in enumerate(panel.dates):
            for j, region in enumerate(panel.region_ids):
                w.writerow([day.isoformat(), region, int(panel.counts[i, j])])


def cumulative_curve(panel):
    return np.cumsum(np.asarray(panel.counts, dtype=float), axis=0)


def smooth_and_sample(cumulative, T=DEFAULT_NODES, days=None, lam=None):
    """Smooth cumulative curves and sample them, with derivatives, at T nodes.

    Parameters
    ----------
    cumulative : array of shape (D, P)
        Cumulative counts per region.
    T : int
        Number of equispaced nodes spanning ``[days[0], days[-1]]``.
    days : array of shape (D,), optional
        Abscissae of the rows, default ``0..D-1``.
    lam : float, optional
        Fixed smoothing parameter; GCV per region when omitted.

    Returns
    -------
    SmoothedCurves
        Node times, smoothed values, first derivatives clamped at zero, and
        the smoothing parameter used per region (log10).
    """
    cum = np.asarray(cumulative, dtype=float)
    if cum.ndim == 1:
        cum = cum[:, None]
    D = cum.shape[0]
    if D < 4:
        raise InsufficientDataError(f"need at least 4 days for cubic smoothing, got {D}")
    if T < D:
        raise ValidationError(f"node count T={T} is below the number of days D={D}")
    days = np.arange(D, dtype=float) if days is None else np.asarray(days, dtype=float)
    spline = PenalizedSpline(lam).fit(days, cum)
    nodes = np.linspace(days[0], days[-1], T)
    values = spline(nodes)
    deriv = np.maximum(spline(nodes, nu=1), 0.0)
    return SmoothedCurves(nodes, values, deriv, spline.log10_lambda_)


def log_transform(intensity, floor=DEFAULT_FLOOR, node_times=None, region_ids=None):
    if floor <= 0:
        raise ValidationError("floor must be positive")
    lam = np.asarray(intensity, dtype=float)
    if lam.ndim == 1:
        lam = lam[:, None]
    values = np.log(np.maximum(lam, floor))
    if node_times is None:
        node_times = np.arange(1, lam.shape[0] + 1, dtype=float)
    if region_ids is None:
        region_ids = tuple(f"R{j + 1}" for j in range(lam.shape[1]))
    return LogRiskPanel(node_times, region_ids, values, HARD)


def apply_weighting(panel, w):
    """Soft values ``values @ w.T``; the identity returns the input bits."""
    if w.P != panel.P:
        raise DimensionError(f"weighting is {w.P}x{w.P} but the panel has {panel.P} regions")
    if w.kind == "identity" or np.array_equal(w.matrix, np.eye(w.P)):
        return panel.with_values(panel.values.copy(), SOFT)
    return panel.with_values(panel.values @ w.matrix.T, SOFT)


def ingest(counts, T=DEFAULT_NODES, floor=DEFAULT_FLOOR, weighting=None, lam=None):
    """Counts -> (hard panel, soft panel, smoothed cumulative curves)."""
    curves = smooth_and_sample(cumulative_curve(counts), T, counts.day_offsets, lam)
    hard = log_transform(curves.derivative, floor, curves.node_times, counts.region_ids)
    w = SpatialWeighting.identity(hard.P) if weighting is None else weighting
    return hard, apply_weighting(hard, w), curves


# CSV interfaces ---------------------------------------------------------

def _fmt(x):
    return f"{x:.15g}"


def write_matrix_csv(path, first_col_name, first_col, header, matrix):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([first_col_name, *header])
        for lead, row in zip(first_col, np.atleast_2d(matrix)):
            w.writerow([lead if isinstance(lead, str) else _fmt(lead), *map(_fmt, row)])


def write_panel(panel, path):
    write_matrix_csv(path, "node_time", panel.node_times, panel.region_ids, panel.values)


def read_panel(path, mode=HARD):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ParseError(f"{path}: panel file has no data rows")
    header = rows[0]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return LogRiskPanel(data[:, 0], header[1:], data[:, 1:], mode)


def read_weighting(path, region_ids=None):
    """P x P weighting CSV with a region-id header row; rows are normalized."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    header, body = rows[0], rows[1:]
    try:
        m = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if m.shape != (len(header), len(header)):
        raise DimensionError(f"{path}: expected {len(header)}x{len(header)} matrix, got {m.shape}")
    if region_ids is not None and tuple(header) != tuple(region_ids):
        raise DimensionError(f"{path}: region header does not match the panel regions")
    if np.array_equal(m, np.eye(len(header))):
        return SpatialWeighting.identity(len(header))
    return SpatialWeighting.custom(m)


def read_centroids(path):
    """CSV with columns region,x,y (further coordinates allowed)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    ids = [r[0] for r in rows[1:]]
    coords = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return ids, coords
