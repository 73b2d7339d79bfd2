"""Command-line driver: ingestion, regression, residual prediction, model
comparison, bootstrap intervals and synthetic data generation.

Settings come from a JSON file (``--config``) with command-line flags taking
precedence.  Every command writes its resolved configuration next to its
outputs so a run can be replayed exactly.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import bayes, bootstrap, classical, evaluation, panel, synth, trig
from .baselines import KINDS, ModelSpec
from .errors import LogRiskError, NumericalError, ValidationError
from .parallel import default_jobs

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

DEFAULTS = {
    "mode": panel.HARD,
    "T": panel.DEFAULT_NODES,
    "floor": panel.DEFAULT_FLOOR,
    "lambda": None,
    "weighting": {"kind": "identity"},
    "N": 6,
    "N_candidates": [2, 4, 6, 8],
    "threshold": 1.14,
    "convention": trig.SHIFTED,
    "kT": None,
    "prior": dict(bayes.DEFAULT_PRIOR),
    "optimizer": {},
    "residual_model": "bayes",
    "invert": False,
    "cv": {},
    "models": list(KINDS),
    "pipelines": ["classical", "bayes"],
    "grid_search": False,
    "bootstrap": {"B": 1000, "level": 0.95, "methods": list(bootstrap.METHODS),
                  "target": "smape", "unit": "temporal", "grid_size": 512},
    "scenario": {},
    "seed": 0,
    "out": "out",
}


# configuration ---------------------------------------------------------------

def load_config(args):
    cfg = json.loads(json.dumps(DEFAULTS))
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(user, dict):
            raise ValidationError(f"{args.config}: top level must be an object")
        base = os.path.dirname(os.path.abspath(args.config))
        for key in ("counts", "panel", "scenario_file", "truth"):
            if isinstance(user.get(key), str):
                user[key] = os.path.join(base, user[key])
        w = user.get("weighting")
        if isinstance(w, dict):
            for key in ("centroids", "matrix"):
                if isinstance(w.get(key), str):
                    w[key] = os.path.join(base, w[key])
        for key, value in user.items():
            if isinstance(value, dict) and isinstance(cfg.get(key), dict):
                cfg[key].update(value)
            else:
                cfg[key] = value
    for key in ("seed", "out", "mode", "jobs", "counts", "panel"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    cfg.setdefault("jobs", None)
    if cfg["jobs"] is None:
        cfg["jobs"] = default_jobs()
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    if cfg["mode"] not in (panel.HARD, panel.SOFT):
        raise ValidationError(f"mode must be hard or soft, not {cfg['mode']!r}")
    if not isinstance(cfg["seed"], int):
        raise ValidationError("seed must be an integer")
    if cfg["kT"] is not None and (not isinstance(cfg["kT"], int) or cfg["kT"] < 1):
        raise ValidationError("kT must be a positive integer")
    if cfg["residual_model"] not in ("classical", "bayes"):
        raise ValidationError("residual_model must be classical or bayes")
    for key in ("counts", "panel", "truth"):
        path = cfg.get(key)
        if path is not None and not os.path.exists(path):
            raise FileNotFoundError(f"{key} file not found: {path}")
    for m in cfg["models"]:
        ModelSpec.from_dict(m if isinstance(m, dict) else {"kind": m})
    for p in cfg["pipelines"]:
        evaluation.PipelineSpec(p)
    evaluation.CvConfig.from_dict(cfg["cv"])


def _replay_record(cfg, command):
    rec = {k: v for k, v in cfg.items() if k != "jobs"}
    rec["command"] = command
    _write_json(os.path.join(cfg["out"], f"{command}_config.json"), rec)


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out(cfg, name):
    os.makedirs(cfg["out"], exist_ok=True)
    return os.path.join(cfg["out"], name)


def _fmt(x):
    return f"{float(x):.15g}"


def write_tidy(path, series):
    """Plot data as (series, x, y) rows; ``series`` maps name -> (x, y)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series", "x", "y"])
        for name, (xs, ys) in series.items():
            for a, b in zip(xs, ys):
                w.writerow([name, _fmt(a), _fmt(b)])


# data loading ------------------------------------------------------------------

def build_weighting(cfg, region_ids):
    spec = cfg["weighting"] or {"kind": "identity"}
    kind = spec.get("kind", "identity")
    P = len(region_ids)
    if kind == "identity":
        return panel.SpatialWeighting.identity(P)
    if kind == "gaussian_kernel":
        ids, coords = panel.read_centroids(spec["centroids"])
        if tuple(ids) != tuple(region_ids):
            raise ValidationError("centroid regions do not match the panel regions")
        return panel.SpatialWeighting.gaussian_kernel(coords, float(spec["bandwidth"]))
    if kind == "custom":
        return panel.read_weighting(spec["matrix"], region_ids)
    raise ValidationError(f"unknown weighting kind {kind!r}")


def load_panels(cfg):
    """(hard, soft, weighting, curves) from a counts file or a hard panel CSV."""
    curves = None
    if cfg.get("panel"):
        hard = panel.read_panel(cfg["panel"])
        _check_kT(cfg, hard.P)
    elif cfg.get("counts"):
        counts = panel.parse_counts(cfg["counts"], cfg.get("schema"))
        _check_kT(cfg, len(counts.region_ids))
        hard, _, curves = panel.ingest(counts, int(cfg["T"]), float(cfg["floor"]),
                                       None, cfg["lambda"])
    else:
        raise ValidationError("give a counts file or a panel file")
    w = build_weighting(cfg, hard.region_ids)
    soft = panel.apply_weighting(hard, w)
    return hard, soft, w, curves


def _check_kT(cfg, P):
    if cfg["kT"] is not None and cfg["kT"] > P:
        raise ValidationError(f"kT={cfg['kT']} exceeds the number of regions P={P}")


def working_panel(cfg):
    hard, soft, w, _ = load_panels(cfg)
    return (soft if cfg["mode"] == panel.SOFT else hard), w


def _kT(cfg, P, T):
    return cfg["kT"] or min(classical.default_truncation(T), P)


def _prior(cfg, P):
    pr = dict(bayes.DEFAULT_PRIOR)
    pr.update(cfg["prior"] or {})
    return bayes.BetaPrior.shared(P, float(pr["a"]), float(pr["b"]), float(pr["scale"]))


# commands --------------------------------------------------------------------

def cmd_ingest(cfg):
    hard, soft, w, curves = load_panels(cfg)
    panel.write_panel(hard, _out(cfg, "panel_hard.csv"))
    panel.write_panel(soft, _out(cfg, "panel_soft.csv"))
    panel.write_matrix_csv(_out(cfg, "weighting.csv"), "region", hard.region_ids,
                           hard.region_ids, w.matrix)
    if curves is not None:
        write_tidy(_out(cfg, "cumulative_curves.csv"),
                   {rid: (curves.node_times, curves.values[:, j])
                    for j, rid in enumerate(hard.region_ids)})
    _replay_record(cfg, "ingest")
    return {"T": hard.T, "P": hard.P}


def fit_regression(cfg, pn):
    pin = cfg["convention"] == trig.SHIFTED
    if cfg["N"] is None:
        report = trig.select_N(pn, cfg["N_candidates"], cfg["threshold"], cfg["convention"], pin)
        N = report.chosen_N
    else:
        report, N = None, int(cfg["N"])
    return trig.fit(pn, N, pin_b1=pin, convention=cfg["convention"]), report


def cmd_fit(cfg):
    pn, _ = working_panel(cfg)
    model, report = fit_regression(cfg, pn)
    model.to_json(_out(cfg, "trig_model.json"))
    if report is not None:
        report.to_csv(_out(cfg, "selection.csv"))
    fitted = trig.predict(model, trig.node_index(pn.T))
    panel.write_matrix_csv(_out(cfg, "fitted.csv"), "node_time", pn.node_times,
                           pn.region_ids, fitted)
    risk = trig.empirical_risk(model, pn)
    panel.write_matrix_csv(_out(cfg, "empirical_risk.csv"), "statistic", ["risk"],
                           pn.region_ids, risk[None, :])
    summary = {"N": model.N, "mean_risk": float(risk.mean()),
               "selection_ratio": trig.ratio_for(model.N, pn.T, model.convention,
                                                 model.pin_b1)}
    if cfg.get("truth"):
        truth = synth.Scenario.from_json(cfg["truth"]).true_model
        if truth.A.shape != model.A.shape:
            raise ValidationError("true model and fitted model have different shapes")
        err = max(np.abs(truth.A - model.A).max(), np.abs(truth.B - model.B).max())
        summary["coefficient_recovery_error"] = float(err)
    _write_json(_out(cfg, "fit_summary.json"), summary)
    _replay_record(cfg, "fit")
    return summary


def _residual_setup(cfg):
    pn, w = working_panel(cfg)
    model, _ = fit_regression(cfg, pn)
    res = classical.residuals(pn, model)
    return pn, w, model, res


def _write_predictions(cfg, name, pn, pred):
    """Rows for t = 2..T+1 (node index)."""
    times = np.arange(2, pn.T + 2, dtype=float)
    panel.write_matrix_csv(_out(cfg, name), "node_index", times, pn.region_ids, pred)


def cmd_residual(cfg):
    pn, _, _, res = _residual_setup(cfg)
    kT = _kT(cfg, pn.P, pn.T)
    cov = classical.empirical_covariances(res)
    est = classical.estimate_rho(cov, kT)
    panel.write_matrix_csv(_out(cfg, "rho_classical.csv"), "region", pn.region_ids,
                           pn.region_ids, est.rho)
    panel.write_matrix_csv(_out(cfg, "eigenvalues.csv"), "statistic", ["eigenvalue"],
                           [str(i + 1) for i in range(pn.P)], cov.eigvals[None, :])
    _write_predictions(cfg, "residual_predictions_classical.csv", pn,
                       classical.predict_path(est.rho, res))
    _replay_record(cfg, "residual")
    return {"kT": kT}


def _bayes_fit(cfg, pn, res):
    opts = bayes.OptimizerOptions.from_dict(cfg["optimizer"])
    return bayes.optimize_posterior(res, _prior(cfg, pn.P), opts, cfg["seed"], cfg["jobs"])


def cmd_bayes(cfg):
    pn, _, _, res = _residual_setup(cfg)
    fit = _bayes_fit(cfg, pn, res)
    fit.to_json(_out(cfg, "bayes_fit.json"))
    panel.write_matrix_csv(_out(cfg, "rho_bayes.csv"), "region", pn.region_ids,
                           pn.region_ids, fit.rho)
    _write_predictions(cfg, "residual_predictions_bayes.csv", pn,
                       classical.predict_path(fit.rho, res))
    with open(_out(cfg, "optimizer_trace.csv"), "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["region", "iteration", "phase", "objective"])
        for p, rid in enumerate(pn.region_ids):
            for it, phase, val in fit.trace_rows(p):
                wr.writerow([rid, it, phase, _fmt(val)])
    _replay_record(cfg, "bayes")
    return {"objective": fit.objective.tolist()}


def cmd_forecast(cfg):
    pn, w, model, res = _residual_setup(cfg)
    if cfg["residual_model"] == "bayes":
        rho = _bayes_fit(cfg, pn, res).rho
    else:
        rho = classical.estimate_rho(classical.empirical_covariances(res),
                                     _kT(cfg, pn.P, pn.T)).rho
    t = np.arange(2, pn.T + 2, dtype=float)
    reg = trig.predict(model, t)
    resid = classical.predict_path(rho, res)
    step = np.diff(pn.node_times).mean() if pn.T > 1 else 1.0
    times = np.append(pn.node_times[1:], pn.node_times[-1] + step)
    out = bayes.combine_predictions(reg, resid, times, w,
                                    invert=bool(cfg["invert"]) and cfg["mode"] == panel.SOFT)
    with open(_out(cfg, "forecast.csv"), "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["node_index", "time", "region", "log_risk", "risk", "cumulative"])
        for i in range(t.size):
            for j, rid in enumerate(pn.region_ids):
                wr.writerow([int(t[i]), _fmt(times[i]), rid, _fmt(out.log_risk[i, j]),
                             _fmt(out.risk[i, j]), _fmt(out.cumulative[i, j])])
    _replay_record(cfg, "forecast")
    return {"forecast_T_plus_1": out.log_risk[-1].tolist()}


def _model_specs(cfg):
    specs = []
    for m in cfg["models"]:
        d = m if isinstance(m, dict) else {"kind": m}
        d = dict(d)
        d.setdefault("seed", cfg["seed"])
        specs.append(ModelSpec.from_dict(d))
    return specs


def _pipeline_specs(cfg, P, T):
    kT = cfg["kT"] or min(classical.default_truncation(T), P)
    return [evaluation.PipelineSpec(kind, int(cfg["N"] or 6), kT, cfg["convention"],
                                    cfg["prior"], cfg["optimizer"], cfg["seed"])
            for kind in cfg["pipelines"]]


def _cv_config(cfg):
    d = dict(cfg["cv"])
    d.setdefault("seed", cfg["seed"])
    d["jobs"] = cfg["jobs"]
    return evaluation.CvConfig.from_dict(d)


def _modes(cfg, explicit):
    return [cfg["mode"]] if explicit else [panel.HARD, panel.SOFT]


def _compare_tables(cfg, pn, cv):
    grids, specs = [], []
    for spec in _model_specs(cfg):
        if cfg["grid_search"] and spec.kind in evaluation.DEFAULT_GRIDS:
            g = evaluation.grid_search(pn, spec.kind, None, cv, spec)
            grids.append(g)
            spec = spec.with_params(**g.best)
        specs.append(spec)
    specs += _pipeline_specs(cfg, pn.P, pn.T)
    return [evaluation.kfold_cv(pn, s, cv) for s in specs], grids, specs


def cmd_compare(cfg, explicit_mode=False):
    hard, soft, _, _ = load_panels(cfg)
    cv = _cv_config(cfg)
    settings = cv.to_dict()
    settings.pop("jobs")      # pool size never changes results, so it stays out of outputs
    report = {"config": settings, "modes": {}}
    for mode in _modes(cfg, explicit_mode):
        pn = soft if mode == panel.SOFT else hard
        tables, grids, specs = _compare_tables(cfg, pn, cv)
        for t in tables:
            t.to_csv(_out(cfg, f"smape_{mode}_{t.model}.csv"))
        evaluation.write_tables_csv(tables, _out(cfg, f"smape_{mode}.csv"))
        with open(_out(cfg, f"smape_{mode}.txt"), "w", encoding="utf-8") as fh:
            fh.write(evaluation.format_tables(tables))
        oos = [evaluation.holdout_report(pn, s, cv) for s in specs]
        evaluation.write_tables_csv(oos, _out(cfg, f"smape_{mode}_out_of_sample.csv"))
        report["modes"][mode] = {
            "tables": [t.to_dict() for t in tables],
            "out_of_sample": [t.to_dict() for t in oos],
            "grids": [g.to_dict() for g in grids],
            "specs": [s.to_dict() for s in specs]}
    _write_json(_out(cfg, "compare_report.json"), report)
    _replay_record(cfg, "compare")
    return {m: {t["model"]: t["mean"] for t in r["tables"]} for m, r in report["modes"].items()}


def _bootstrap_columns(cfg, pn, bcfg):
    """Label -> BootstrapResult for the configured target statistic."""
    B, seed = int(bcfg["B"]), cfg["seed"]
    axis = 1 if bcfg.get("unit") == "regional" else 0

    def mean_stat(x):
        return x.mean(axis=(-2, -1))

    if bcfg.get("target") == "risk":
        model, _ = fit_regression(cfg, pn)
        sq = (pn.values - trig.predict(model, trig.node_index(pn.T))) ** 2
        return {"risk": bootstrap.resample(sq, mean_stat, B, seed, axis=axis, vectorized=True)}
    cv = _cv_config(cfg)
    specs = _model_specs(cfg) + _pipeline_specs(cfg, pn.P, pn.T)
    out = {}
    for spec in specs:
        table = evaluation.kfold_cv(pn, spec, cv)
        out[table.model] = bootstrap.resample(table.terms, mean_stat, B, seed, axis=axis,
                                              vectorized=True)
    return out


def cmd_bootstrap(cfg, explicit_mode=False):
    hard, soft, _, _ = load_panels(cfg)
    bcfg = cfg["bootstrap"]
    level = float(bcfg["level"])
    methods = tuple(bcfg["methods"])
    summary = {}
    for mode in _modes(cfg, explicit_mode):
        pn = soft if mode == panel.SOFT else hard
        columns = {}
        plots = {}
        for label, res in _bootstrap_columns(cfg, pn, bcfg).items():
            cis = bootstrap.ci_set(res, level, methods)
            cis.to_csv(_out(cfg, f"ci_{mode}_{label}.csv"))
            columns[label] = cis
            if not res.degenerate:
                grid, dens = bootstrap.density(res, int(bcfg.get("grid_size", 512)))
                bootstrap.write_density_csv(_out(cfg, f"density_{mode}_{label}.csv"), grid, dens)
                plots[f"{label} density"] = (grid, dens)
                plots[f"{label} histogram"] = bootstrap.histogram(res)
        with open(_out(cfg, f"ci_{mode}.txt"), "w", encoding="utf-8") as fh:
            fh.write(bootstrap.format_ci_table(columns, corner="CI/ML"))
        write_tidy(_out(cfg, f"bootstrap_plot_{mode}.csv"), plots)
        summary[mode] = {k: {m: list(v) for m, v in c.intervals.items()}
                         for k, c in columns.items()}
    _write_json(_out(cfg, "bootstrap_summary.json"), summary)
    _replay_record(cfg, "bootstrap")
    return summary


def cmd_synth(cfg):
    sc_cfg = cfg["scenario"]
    if cfg.get("scenario_file"):
        sc = synth.Scenario.from_json(cfg["scenario_file"])
    else:
        opts = {k: sc_cfg[k] for k in ("T", "P", "N", "rho", "sigma", "level", "amplitude",
                                       "convention") if k in sc_cfg}
        sc = synth.make_scenario(seed=cfg["seed"], **opts)
    data = synth.generate_panel(sc)
    sc.to_json(_out(cfg, "scenario.json"))
    panel.write_panel(data.panel, _out(cfg, "panel_hard.csv"))
    panel.write_matrix_csv(_out(cfg, "true_mean.csv"), "node_time", data.panel.node_times,
                           data.panel.region_ids, data.mean)
    panel.write_matrix_csv(_out(cfg, "true_residuals.csv"), "node_time",
                           data.panel.node_times, data.panel.region_ids,
                           data.residuals.values)
    if sc_cfg.get("counts", True):
        counts = synth.generate_counts(data.panel, seed=cfg["seed"])
        panel.write_counts(counts, _out(cfg, "counts.csv"))
    _replay_record(cfg, "synth")
    return {"T": sc.T, "P": sc.P}


def cmd_report(cfg):
    """Collect the text tables found in the output directory into one file."""
    parts = []
    out = cfg["out"]
    if not os.path.isdir(out):
        raise FileNotFoundError(f"output directory not found: {out}")
    for name in sorted(os.listdir(out)):
        if name.endswith(".txt") and name != "report.txt":
            with open(os.path.join(out, name), encoding="utf-8") as fh:
                parts.append(f"== {name[:-4]} ==\n{fh.read()}")
    for name in ("fit_summary.json", "compare_report.json"):
        path = os.path.join(out, name)
        if os.path.exists(path) and name == "fit_summary.json":
            with open(path, encoding="utf-8") as fh:
                parts.append("== fit ==\n" + json.dumps(json.load(fh), indent=2,
                                                          sort_keys=True) + "\n")
    if not parts:
        raise ValidationError(f"nothing to report in {out}")
    with open(_out(cfg, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts))
    return {"sections": len(parts)}


COMMANDS = {
    "ingest": cmd_ingest, "fit": cmd_fit, "residual": cmd_residual, "bayes": cmd_bayes,
    "forecast": cmd_forecast, "compare": cmd_compare, "bootstrap": cmd_bootstrap,
    "synth": cmd_synth, "report": cmd_report,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="logrisk", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="master random seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--jobs", type=int, help="worker processes (default: logical cores)")
    common.add_argument("--mode", choices=[panel.HARD, panel.SOFT])
    common.add_argument("--counts", help="daily counts CSV (date,region,count)")
    common.add_argument("--panel", help="hard log-risk panel CSV")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or name).splitlines()[0])
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        fn = COMMANDS[args.command]
        if args.command in ("compare", "bootstrap"):
            result = fn(cfg, explicit_mode=args.mode is not None)
        else:
            result = fn(cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        name = getattr(exc, "filename", None)
        detail = f"{exc.strerror}: {name}" if name and exc.strerror else str(exc)
        print(f"I/O error: {detail}", file=sys.stderr)
        return EXIT_IO
    except LogRiskError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
