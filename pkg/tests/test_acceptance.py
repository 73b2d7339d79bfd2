"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line
that is printed in the pytest terminal summary."""

import json
import os
import time

import numpy as np
from scipy.integrate import trapezoid

from logrisk import bayes, bootstrap, classical, cli, evaluation, panel, synth, trig
from logrisk.baselines import BNN, GRNN, MLP, NU_GRID, SVR, GaussianProcess, RBFNetwork
from logrisk.baselines.gp import SquaredExponential
from logrisk.bayes import BetaPrior
from logrisk.classical import ResidualPanel

from conftest import make_panel

DATA = os.path.join(os.path.dirname(__file__), "data")


def load_layout(name):
    with open(os.path.join(DATA, name), encoding="utf-8") as fh:
        return json.load(fh)


def test_01_coefficient_recovery(criterion):
    t0 = time.perf_counter()
    errs = []
    for convention in (trig.SHIFTED, trig.STANDARD):
        sc = synth.make_scenario(T=265, P=17, N=6, sigma=0.0, seed=1, convention=convention)
        data = synth.generate_panel(sc)
        model = trig.fit(data.panel, 6, convention=convention)
        truth = sc.true_model
        errs.append(max(np.abs(model.A - truth.A).max(), np.abs(model.B - truth.B).max()))
    dt = time.perf_counter() - t0
    err = max(errs)
    ok = criterion(1, err <= 1e-8 and dt < 1.0, f"max |coef error| = {err:.2e}", dt)
    assert ok


def test_02_selection_ratio(criterion):
    t0 = time.perf_counter()
    T, N = 265, 6
    design = trig.design_matrix(trig.harmonic_frequencies(N, T), trig.node_index(T))
    assert design.shape[1] == 12
    # orthogonal harmonic design: Phi^T Phi = (T/2) I, so the ratio has a closed form
    lam = T / 2
    closed = (1 - 12 / T) ** -1 * (1 + 12 / lam / T)
    got = trig.selection_ratio(T, N, design)
    zero = trig.selection_ratio(T, 0)
    reference = trig.ratio_for(N, T, trig.SHIFTED, pin_b1=True)
    dt = time.perf_counter() - t0
    ok = abs(got - closed) <= 1e-4 and abs(got - 1.0478) <= 1e-4 and zero == 1.0
    criterion(2, ok, f"ratio = {got:.6f} (closed form {closed:.6f}); zero-parameter "
                     f"ratio = {zero}; reference convention ratio = {reference:.4f}", dt)
    assert ok


def test_03_projection_risk_identity(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for i in range(100):
        T = int(rng.integers(30, 300))
        P = int(rng.integers(1, 6))
        N = int(rng.integers(1, 7))
        pn = make_panel(rng.normal(scale=rng.uniform(0.1, 10), size=(T, P))
                        + rng.normal(size=P))
        model = trig.fit(pn, N)
        design = trig.design_matrix(model.frequencies, trig.node_index(T))
        a = trig.empirical_risk(model, pn)
        b = trig.projection_risk(pn, design)
        worst = max(worst, float(np.max(np.abs(a - b) / np.abs(b))))
    dt = time.perf_counter() - t0
    ok = criterion(3, worst <= 1e-10, f"max relative gap = {worst:.2e} over 100 panels", dt)
    assert ok


def _rho_errors(T, seeds=range(50), P=4):
    errs = []
    for seed in seeds:
        sc = synth.make_scenario(T=T, P=P, N=2, rho=0.5, sigma=0.1, seed=seed)
        cov = classical.empirical_covariances(synth.generate_residuals(sc))
        errs.append(np.linalg.norm(classical.estimate_rho(cov, P).rho - 0.5 * np.eye(P)))
    return np.array(errs)


def test_04_classical_rho_consistency(criterion):
    t0 = time.perf_counter()
    at5000 = float(np.median(_rho_errors(5000)))
    medians = [float(np.median(_rho_errors(T))) for T in (500, 2000, 8000)]
    dt = time.perf_counter() - t0
    ok = at5000 <= 0.05 and medians[0] > medians[1] > medians[2] and dt < 30
    criterion(4, ok, f"median error at T=5000 = {at5000:.4f}; medians over "
                     f"T=500/2000/8000 = {medians[0]:.4f}/{medians[1]:.4f}/{medians[2]:.4f}", dt)
    assert ok


def _var_panel(rho, T, sigma, seed):
    rng = np.random.default_rng(seed)
    Y = np.zeros((T, rho.shape[0]))
    for t in range(1, T):
        Y[t] = rho @ Y[t - 1] + sigma * rng.standard_normal(rho.shape[0])
    return ResidualPanel.from_array(Y)


def test_05_bayesian_mode(criterion):
    t0 = time.perf_counter()
    P = 17
    rho = 0.16 * np.eye(P) + 0.04     # row sums 0.84: stationary, entries well inside (0, 1)
    res = _var_panel(rho, 20000, 0.1, 5)
    X, Y = res.values[:-1], res.values[1:]
    ls = np.linalg.solve(X.T @ X, X.T @ Y).T
    interior = bool(np.all((ls > 0) & (ls < 1)))
    flat = bayes.optimize_posterior(res, BetaPrior.shared(P, 1.0, 1.0, 1.0), seed=0, jobs=1)
    flat_err = float(np.abs(flat.rho - ls).max())
    noise = ResidualPanel.from_array(np.random.default_rng(6).standard_normal((200, P)))
    a = b = 1e4
    s = 1.0 / 3.0
    strong = bayes.optimize_posterior(noise, BetaPrior.shared(P, a, b, s), seed=0, jobs=1)
    strong_err = float(np.abs(strong.rho - (a - 1) / (a + b - 2) * s).max())
    dt = time.perf_counter() - t0
    ok = interior and flat_err <= 1e-4 and strong_err <= 1e-3 and dt < 60
    criterion(5, ok, f"flat prior vs least squares = {flat_err:.2e}; strong prior vs "
                     f"scaled Beta mode = {strong_err:.2e}; P={P}", dt)
    assert ok


def test_06_smape(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    x = rng.normal(size=20)
    hand = [evaluation.smape(x, x), evaluation.smape(x, -x),
            evaluation.smape([2.0, 4.0], [4.0, 4.0])]
    hand_ok = abs(hand[0]) <= 1e-12 and abs(hand[1] - 2) <= 1e-12 and abs(hand[2] - 1 / 3) <= 1e-12
    a = rng.standard_t(2, size=(10000, 8)) * 10.0 ** rng.uniform(-3, 3, size=(10000, 1))
    b = rng.standard_t(2, size=(10000, 8)) * 10.0 ** rng.uniform(-3, 3, size=(10000, 1))
    c = 10.0 ** rng.uniform(-3, 3, size=(10000, 1))
    ab = evaluation.smape_terms(a, b).mean(axis=1)
    ba = evaluation.smape_terms(b, a).mean(axis=1)
    scaled = evaluation.smape_terms(c * a, c * b).mean(axis=1)
    sym = float(np.abs(ab - ba).max())
    scale = float(np.abs(scaled - ab).max())
    dt = time.perf_counter() - t0
    ok = hand_ok and sym == 0.0 and scale <= 1e-12
    criterion(6, ok, f"hand cases {hand[0]:.1e}/{hand[1]:.15g}/{hand[2]:.15g}; symmetry gap "
                     f"{sym:.1e}; scale gap {scale:.1e} on 10^4 pairs", dt)
    assert ok


def test_07_bootstrap_intervals(criterion):
    t0 = time.perf_counter()
    flat = bootstrap.resample(np.full(30, 1.5), np.mean, B=1000, seed=1)
    point_ok = all(bootstrap.ci(flat, m) == (1.5, 1.5) for m in bootstrap.METHODS)

    rng = np.random.default_rng(7)
    point, sd = 2.0, 1.0
    reps = point + sd * rng.standard_normal(1_000_000)
    half = rng.normal(size=200)
    sym = np.concatenate([half, -half])         # symmetric jackknife, zero acceleration
    big = bootstrap.BootstrapResult(reps, point, reps.size, 7, sym)
    gaps = {}
    for m in bootstrap.METHODS:
        lo, hi = bootstrap.ci(big, m)
        gaps[m] = max(abs(lo - (point - 1.96 * sd)), abs(hi - (point + 1.96 * sd)))
    gauss_ok = max(gaps.values()) <= 0.02

    n, trials, B = 50, 2000, 1000
    outer = np.random.default_rng(8)
    hits = 0
    for i in range(trials):
        x = outer.normal(size=n)
        r = bootstrap.resample(x, lambda s: s.mean(axis=-1), B=B, seed=i, jackknife=False,
                               vectorized=True)
        lo, hi = bootstrap.ci(r, "I3")
        hits += lo <= 0.0 <= hi
    coverage = hits / trials
    dt = time.perf_counter() - t0
    ok = point_ok and gauss_ok and 0.92 <= coverage <= 0.975 and dt < 120
    criterion(7, ok, f"degenerate point intervals {point_ok}; max gap to point +- 1.96 sd = "
                     f"{max(gaps.values()):.4f}; I3 coverage = {coverage:.4f}", dt)
    assert ok


def test_08_ml_baselines(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    X, y = rng.normal(size=(15, 2)), rng.normal(size=15)
    gp = GaussianProcess(SquaredExponential(1.0, 1.0), noise=0.0).fit(X, y)
    gp_err = float(np.abs(gp.predict(X) - y).max())

    violations = 0
    for i in range(100):
        Xg = rng.normal(size=(int(rng.integers(1, 30)), 3))
        yg = rng.normal(scale=10, size=Xg.shape[0])
        q = rng.normal(scale=3, size=(100, 3))
        pred = GRNN(float(10 ** rng.uniform(-2, 1))).fit(Xg, yg).predict(q)
        violations += int(np.sum((pred < yg.min()) | (pred > yg.max())))

    Xr = rng.normal(size=(60, 2))
    yr = np.sin(Xr[:, 0]) + 0.1 * rng.normal(size=60)
    rss = [h[2] for h in RBFNetwork(1.0, tol=0.0).fit(Xr, yr).history_]
    rbf_ok = bool(np.all(np.diff(rss) <= 1e-9 * rss[0]))

    Xm = rng.normal(size=(30, 4))
    beta = np.array([1.0, -2.0, 0.5, 0.0])
    mlp = MLP(NH=0).fit(Xm, Xm @ beta + 3.0)
    mlp_err = max(float(np.abs(mlp.coef_ - beta).max()), abs(mlp.intercept_ - 3.0))

    svr = SVR(C=1.0, epsilon=5.0).fit(rng.normal(size=(25, 3)), rng.uniform(0, 1, 25))
    svr_norm = float(np.linalg.norm(svr.beta))

    Xb = rng.normal(size=(40, 3))
    yb = np.sin(Xb[:, 0]) + 0.3 * rng.normal(size=40)
    norms = [np.linalg.norm(BNN(NH=3, seed=1, nu=nu).fit(Xb, yb).weights_) for nu in NU_GRID]
    bnn_ok = bool(np.all(np.diff(norms) >= -1e-8))
    dt = time.perf_counter() - t0
    ok = (gp_err <= 1e-6 and violations == 0 and rbf_ok and mlp_err <= 1e-8
          and svr_norm <= 1e-6 and bnn_ok)
    criterion(8, ok, f"GP {gp_err:.1e}; GRNN violations {violations}/10^4; RBF monotone "
                     f"{rbf_ok}; MLP {mlp_err:.1e}; SVR |beta| {svr_norm:.1e}; BNN monotone "
                     f"{bnn_ok}", dt)
    assert ok


def test_09_poisson_round_trip(criterion):
    t0 = time.perf_counter()
    worst, min_rate = 0.0, np.inf
    for seed in range(20):
        sc = synth.make_scenario(T=265, P=3, N=3, rho=0.5, sigma=0.05, seed=seed,
                                 level=5.0, amplitude=0.3)
        data = synth.generate_panel(sc)
        b, means = synth.interval_means(data.panel)
        min_rate = min(min_rate, float((means / np.diff(b)[:, None]).min()))
        counts = synth.generate_counts(data.panel, seed=seed)
        hard, _, _ = panel.ingest(counts, T=265)
        model = trig.fit(hard, 6, convention=trig.SHIFTED)
        fitted = np.exp(trig.predict(model, trig.node_index(hard.T)))
        recovered = trapezoid(fitted, hard.node_times, axis=0)
        true_total = means.sum(axis=0)
        worst = max(worst, float(np.max(np.abs(recovered - true_total) / true_total)))
    dt = time.perf_counter() - t0
    ok = worst <= 0.05 and min_rate >= 50 and dt < 60
    criterion(9, ok, f"worst relative integral error = {worst:.4f} over 20 seeds; "
                     f"minimum daily mean = {min_rate:.1f}", dt)
    assert ok


def _rows(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


def test_10_report_fidelity(criterion, tmp_path):
    t0 = time.perf_counter()
    smape_layout = load_layout("smape_table_layout.json")
    ci_layout = load_layout("ci_table_layout.json")
    out = str(tmp_path / "s")
    assert cli.main(["synth", "--out", out, "--seed", "2", "--config",
                     os.path.join(DATA, "report_config.json")]) == 0
    panel_csv = os.path.join(out, "panel_hard.csv")
    cfg = os.path.join(DATA, "report_config.json")
    ok = True
    for mode in ("hard", "soft"):
        assert cli.main(["compare", "--config", cfg, "--panel", panel_csv, "--out", out,
                         "--mode", mode]) == 0
        lines = _rows(os.path.join(out, f"smape_{mode}.txt"))
        header = lines[0].split()
        corner = " ".join(header[:2])
        body = [ln.split()[0] for ln in lines[1:] if ln[:1] not in "-="]
        ok &= corner == smape_layout["corner"]
        ok &= header[2:8] == smape_layout["ml_columns"]
        ok &= header[8:] == smape_layout["pipeline_columns"]
        ok &= body == smape_layout["rows"]
        assert cli.main(["bootstrap", "--config", cfg, "--panel", panel_csv, "--out", out,
                         "--mode", mode]) == 0
        ci = _rows(os.path.join(out, f"ci_{mode}.txt"))
        ok &= ci[0].split() == [ci_layout["corner"], *ci_layout["columns"]]
        ok &= [ln.split()[0] for ln in ci[1:]] == ci_layout["rows"]
        ok &= all(len(ln.split("[")) == 1 + len(ci_layout["columns"]) for ln in ci[1:])
    dt = time.perf_counter() - t0
    criterion(10, ok, "SMAPE tables: 17 region rows + M. + T. with 6 ML and 2 pipeline "
                      "columns; interval table: 5 methods x 8 models", dt)
    assert ok


def test_11_determinism(criterion, tmp_path):
    t0 = time.perf_counter()
    cfg = os.path.join(DATA, "determinism_config.json")
    runs = {}
    for tag, jobs in (("a", 1), ("b", 1), ("c", 2), ("d", 4)):
        out = str(tmp_path / tag)
        assert cli.main(["synth", "--config", cfg, "--out", out, "--seed", "5"]) == 0
        panel_csv = os.path.join(out, "panel_hard.csv")
        for cmd in ("ingest", "fit", "residual", "bayes", "forecast", "compare", "bootstrap"):
            src = (["--counts", os.path.join(out, "counts.csv")] if cmd == "ingest"
                   else ["--panel", panel_csv])
            dest = os.path.join(out, "ingested") if cmd == "ingest" else out
            assert cli.main([cmd, "--config", cfg, *src, "--out", dest, "--seed", "5",
                             "--jobs", str(jobs)]) == 0
        files = {}
        for root, _, names in os.walk(out):
            for name in names:
                path = os.path.join(root, name)
                with open(path, "rb") as fh:
                    data = fh.read()
                if name.endswith("_config.json"):
                    # records name their own run directory; compare them relative to it
                    data = data.replace(out.encode(), b"<run>")
                files[os.path.relpath(path, out)] = data
        runs[tag] = files
    same = all(runs[t] == runs["a"] for t in "bcd")
    dt = time.perf_counter() - t0
    criterion(11, same, f"{len(runs['a'])} output files byte-identical across replays "
                        "with pool sizes 1, 1, 2, 4", dt)
    assert same
