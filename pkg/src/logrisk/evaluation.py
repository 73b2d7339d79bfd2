"""SMAPE scoring, repeated random k-fold cross-validation, hyperparameter
grid search and comparison tables."""

import csv
import itertools
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bayes, classical, trig
from .baselines import (DEFAULT_GRIDS, SIMPLICITY, ModelSpec, grnn_temporal_predict,
                        lag_matrix, make_model)
from .errors import InsufficientDataError, ValidationError
from .panel import SOFT
from .parallel import ordered_map

PIPELINE_KINDS = ("classical", "bayes")
TABLE_SCALE = 1e-2


def smape_terms(obs, pred):
    """Elementwise ``|pred - obs| / ((|obs| + |pred|) / 2)``, 0 where both vanish."""
    obs = np.asarray(obs, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if obs.shape != pred.shape:
        raise ValidationError(f"length mismatch: {obs.shape} vs {pred.shape}")
    denom = np.abs(obs) + np.abs(pred)
    num = np.abs(pred - obs)
    out = np.zeros(np.broadcast(num, denom).shape)
    # halving the denominator instead would lose bits on subnormals and break the bound 2
    np.divide(num, denom, out=out, where=denom > 0)
    return 2.0 * out


def smape(obs, pred):
    """Symmetric mean absolute percentage error, in [0, 2]."""
    terms = smape_terms(obs, pred)
    if terms.size == 0:
        raise ValidationError("SMAPE of an empty sample")
    return float(np.mean(terms, axis=0)) if terms.ndim == 1 else np.mean(terms, axis=0)


@dataclass
class CvConfig:
    k: int = 10
    runs: int = 10
    seed: int = 0
    holdout: tuple = (10, 3)
    j0: int = 5
    jobs: int = 1
    refit_N: bool = False           # choose N inside every fold
    N_candidates: tuple = (2, 4, 6, 8)
    N_threshold: float = 1.05

    def __post_init__(self):
        if self.k < 2:
            raise ValidationError("k must be at least 2")
        if self.runs < 1:
            raise ValidationError("runs must be at least 1")
        self.holdout = tuple(int(h) for h in self.holdout)
        if len(self.holdout) != 2 or min(self.holdout) < 0:
            raise ValidationError("holdout must be a pair of non-negative counts")

    def to_dict(self):
        d = asdict(self)
        d["holdout"] = list(self.holdout)
        d["N_candidates"] = list(self.N_candidates)
        return d

    @classmethod
    def from_dict(cls, d):
        d = {k: v for k, v in (d or {}).items() if k in cls.__dataclass_fields__}
        if "N_candidates" in d:
            d["N_candidates"] = tuple(d["N_candidates"])
        return cls(**d)


@dataclass(frozen=True)
class PipelineSpec:
    """Harmonic regression plus an AR(1) residual predictor, scored as one model."""

    kind: str = "classical"
    N: int = 6
    kT: int = None
    convention: str = trig.SHIFTED
    prior: dict = None
    optimizer: dict = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PIPELINE_KINDS:
            raise ValidationError(f"unknown pipeline kind {self.kind!r}")

    @property
    def name(self):
        return self.kind

    def to_dict(self):
        return asdict(self)


@dataclass
class SmapeTable:
    model: str
    mode: str
    region_ids: tuple
    rows: np.ndarray
    mean_row: float = None
    total_row: float = None
    fold_means: np.ndarray = None   # (runs, k) spatially averaged SMAPE per fold
    terms: np.ndarray = None        # (targets, P) summands averaged over runs

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float)
        self.region_ids = tuple(self.region_ids)
        self.mean_row = float(np.mean(self.rows))
        self.total_row = float(np.sum(self.rows))

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["region", self.model])
            for rid, v in zip(self.region_ids, self.rows):
                w.writerow([rid, repr(float(v))])
            w.writerow(["M.", repr(self.mean_row)])
            w.writerow(["T.", repr(self.total_row)])

    def to_dict(self):
        return {"model": self.model, "mode": self.mode, "region_ids": list(self.region_ids),
                "rows": self.rows.tolist(), "mean": self.mean_row, "total": self.total_row}


def format_tables(tables, scale=TABLE_SCALE, digits=4):
    """Aligned text table with regions as rows and models as columns.

    Values are divided by ``scale`` (the header notes the multiplier), then
    the mean (M.) and total (T.) rows follow a double rule.
    """
    if not tables:
        raise ValidationError("no tables to format")
    ids = tables[0].region_ids
    exp = int(round(np.log10(scale)))
    head = ["SC" if exp == 0 else f"SC (x10^{exp})"] + [t.model.upper() for t in tables]

    def cells(values):
        return [f"{v / scale:.{digits}f}" for v in values]

    body = [[rid, *cells([t.rows[i] for t in tables])] for i, rid in enumerate(ids)]
    mean = ["M.", *cells([t.mean_row for t in tables])]
    total = ["T.", *cells([t.total_row for t in tables])]
    widths = [max(len(r[j]) for r in [head, *body, mean, total]) for j in range(len(head))]

    def line(r):
        return "  ".join(c.rjust(w) if j else c.ljust(w) for j, (c, w) in
                         enumerate(zip(r, widths))).rstrip()

    rule = "-" * len(line(head))
    out = [line(head), rule, *map(line, body), rule.replace("-", "="), line(mean), rule,
           line(total)]
    return "\n".join(out) + "\n"


def write_tables_csv(tables, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region", *[t.model for t in tables]])
        for i, rid in enumerate(tables[0].region_ids):
            w.writerow([rid, *[repr(float(t.rows[i])) for t in tables]])
        w.writerow(["M.", *[repr(t.mean_row) for t in tables]])
        w.writerow(["T.", *[repr(t.total_row) for t in tables]])


# cross-validation ---------------------------------------------------------

def cv_block(panel, cfg):
    """Rows of ``panel`` left for cross-validation and the target positions
    (within that block) that have ``j0`` lags available."""
    head, tail = cfg.holdout
    T = panel.T
    start, stop = head, T - tail
    if stop - start <= cfg.j0:
        raise InsufficientDataError(
            f"after holding out {head}+{tail} nodes only {max(stop - start, 0)} remain, "
            f"not enough for j0={cfg.j0} lags")
    return np.arange(start, stop), np.arange(cfg.j0, stop - start)


def split_folds(n, k, seed, run):
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(run)]))
    return np.array_split(rng.permutation(n), k)


def _task_seed(seed, *keys):
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


def _min_train(spec, P):
    if isinstance(spec, PipelineSpec):
        n = 2 * spec.N
        return n + P + 2 if spec.kind == "bayes" else n + 1
    if spec.kind == "mlp" and spec.resolved()["NH"] > 0 or spec.kind == "bnn":
        return 2
    return 1


def _ml_predict(values, spec, cfg, train_pos, test_pos, run, fold, mode):
    """One-step predictions at ``test_pos`` (block positions), shape (n, P)."""
    P = values.shape[1]
    hp = spec.resolved()
    out = np.empty((test_pos.size, P))
    form = hp.get("form", "pointwise")
    if spec.kind == "grnn" and mode == SOFT and "form" not in spec.hyperparams:
        form = "temporal"
    if spec.kind == "grnn" and form == "temporal":
        for i, t in enumerate(test_pos):
            out[i] = grnn_temporal_predict(values[:t], cfg.j0, hp["h"])
        return out
    for p in range(P):
        X, y, idx = lag_matrix(values[:, p], cfg.j0)
        rows_train = train_pos - cfg.j0
        rows_test = test_pos - cfg.j0
        model = make_model(spec, seed=_task_seed(spec.seed, run, fold, p))
        model.fit(X[rows_train], y[rows_train])
        out[:, p] = model.predict(X[rows_test])
    return out


def _pipeline_predict(values, times, spec, cfg, train_pos, test_pos, run, fold, T_full):
    P = values.shape[1]
    if cfg.refit_N:
        N = _select_N_on(values[train_pos], times[train_pos], T_full, spec, cfg)
    else:
        N = spec.N
    freqs = trig.harmonic_frequencies(N, T_full, spec.convention)
    pin = spec.convention == trig.SHIFTED
    design = trig.design_matrix(freqs, times[train_pos], pin)
    coef, cond = trig.least_squares(design, values[train_pos])
    if not cond < trig.CONDITION_LIMIT:
        raise trig._rank_failure(design, freqs, pin)
    resid = values - trig.design_matrix(freqs, times, pin) @ coef
    prev, nxt = resid[train_pos - 1], resid[train_pos]
    if np.abs(prev).max() <= 1e-10 * max(np.abs(values).max(), 1.0):
        # the regression explains the training block; nothing left to predict
        rho = np.zeros((P, P))
    elif spec.kind == "classical":
        kT = spec.kT or min(classical.default_truncation(T_full), P)
        rho = classical.estimate_rho(classical.covariances_from_pairs(prev, nxt), kT).rho
    else:
        pr = dict(bayes.DEFAULT_PRIOR)
        pr.update(spec.prior or {})
        prior = bayes.BetaPrior.shared(P, pr["a"], pr["b"], pr["scale"])
        opts = bayes.OptimizerOptions.from_dict(spec.optimizer)
        fit = bayes.optimize_posterior(None, prior, opts, seed=_task_seed(spec.seed, run, fold),
                                       pairs=(prev, nxt))
        rho = fit.rho
    reg = trig.design_matrix(freqs, times[test_pos], pin) @ coef
    return reg + resid[test_pos - 1] @ rho.T


def _select_N_on(values, times, T_full, spec, cfg):
    best = cfg.N_candidates[0]
    for N in cfg.N_candidates:
        n_params = 2 * N - (spec.convention == trig.SHIFTED)
        if values.shape[0] <= n_params:
            break
        if trig.ratio_for(N, T_full, spec.convention, spec.convention == trig.SHIFTED) \
                <= cfg.N_threshold:
            best = N
    return best


def _fold_task(args):
    values, times, spec, cfg, train_pos, test_pos, run, fold, mode, T_full = args
    if isinstance(spec, PipelineSpec):
        pred = _pipeline_predict(values, times, spec, cfg, train_pos, test_pos, run, fold, T_full)
    else:
        pred = _ml_predict(values, spec, cfg, train_pos, test_pos, run, fold, mode)
    return smape_terms(values[test_pos], pred)


def model_name(spec):
    return spec.name if isinstance(spec, PipelineSpec) else spec.kind


def kfold_cv(panel, spec, cfg):
    """Repeated random k-fold cross-validated SMAPE per region.

    Sample units are the one-step-ahead targets inside the cross-validation
    block; the same index partition is used for every region.  Each run
    reshuffles with the stream ``SeedSequence([cfg.seed, run])``.
    """
    rows, targets = cv_block(panel, cfg)
    values = panel.values[rows]
    times = trig.node_index(panel.T)[rows]
    n = targets.size
    if cfg.k > n:
        raise InsufficientDataError(f"k={cfg.k} folds but only {n} samples")
    need = _min_train(spec, panel.P)
    tasks, order = [], []
    for run in range(cfg.runs):
        folds = split_folds(n, cfg.k, cfg.seed, run)
        for f, held in enumerate(folds):
            train = np.setdiff1d(np.arange(n), held)
            if train.size < need:
                raise InsufficientDataError(
                    f"model {model_name(spec)}: fold {f} leaves {train.size} training "
                    f"samples, fewer than the {need} required")
            tasks.append((values, times, spec, cfg, targets[train], targets[held], run, f,
                          panel.mode, panel.T))
            order.append((run, held))
    results = ordered_map(_fold_task, tasks, cfg.jobs)
    per_fold = np.array([r.mean(axis=0) for r in results]).reshape(cfg.runs, cfg.k, panel.P)
    terms = np.zeros((n, panel.P))
    for (run, held), r in zip(order, results):
        terms[held] += r / cfg.runs
    return SmapeTable(model_name(spec), panel.mode, panel.region_ids,
                      per_fold.mean(axis=(0, 1)), fold_means=per_fold.mean(axis=2),
                      terms=terms)


def holdout_report(panel, spec, cfg):
    """Fit on every cross-validation target and score one-step predictions of
    the trailing held-out nodes."""
    head, tail = cfg.holdout
    if tail == 0:
        raise ValidationError("no trailing holdout nodes to score")
    rows, targets = cv_block(panel, cfg)
    stop = rows[-1] + 1
    values = panel.values[head:]
    times = trig.node_index(panel.T)[head:]
    test = np.arange(stop - head, panel.T - head)
    pred = _fold_task((values, times, spec, cfg, targets, test, 0, 0, panel.mode, panel.T))
    return SmapeTable(f"{model_name(spec)} (out-of-sample)", panel.mode, panel.region_ids,
                      pred.mean(axis=0), terms=pred)


# hyperparameter search ----------------------------------------------------

@dataclass
class GridResult:
    kind: str
    best: dict
    points: list = field(default_factory=list)   # (params, mean SMAPE)

    def to_dict(self):
        return {"kind": self.kind, "best": self.best,
                "grid": [{"params": p, "smape_mean": s} for p, s in self.points]}


def expand_grid(grid):
    if isinstance(grid, dict):
        keys = sorted(grid)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
    return [dict(g) for g in grid]


def _simplicity(params):
    return tuple(SIMPLICITY.get(k, 0) * float(v) for k, v in sorted(params.items())
                 if isinstance(v, (int, float)))


def grid_search(panel, kind, grid=None, cfg=None, base=None, rtol=1e-12):
    """Mean cross-validated SMAPE over a hyperparameter grid.

    Ties (within ``rtol``) go to the simpler model: fewer hidden nodes,
    larger bandwidth, larger spread.
    """
    cfg = cfg or CvConfig()
    grid = DEFAULT_GRIDS[kind] if grid is None else grid
    points = expand_grid(grid)
    if not points:
        raise ValidationError("empty hyperparameter grid")
    base = base or ModelSpec(kind)
    scored = []
    for params in points:
        table = kfold_cv(panel, base.with_params(**params), cfg)
        scored.append((params, table.mean_row))
    low = min(s for _, s in scored)
    tied = [p for p, s in scored if s <= low + rtol * max(abs(low), 1.0)]
    best = max(tied, key=_simplicity)
    return GridResult(kind, best, scored)


def write_report(path, tables, cfg, grids=(), extra=None):
    settings = cfg.to_dict()
    settings.pop("jobs")
    report = {"config": settings, "tables": [t.to_dict() for t in tables],
              "grids": [g.to_dict() for g in grids]}
    if extra:
        report.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
