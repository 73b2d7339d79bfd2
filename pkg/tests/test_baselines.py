import json
import warnings

import numpy as np
import pytest
from scipy import optimize

from logrisk.baselines import (BNN, GRNN, KINDS, MLP, NU_GRID, SVR, EmpiricalBlockKernel,
                               GaussianProcess, LaggedDataset, ModelSpec, RBFNetwork, build_lagged,
                               dump_model, grnn_predict, grnn_temporal_predict, make_model,
                               soft_gp_predict, write_predictions)
from logrisk.baselines.gp import SquaredExponential, block_inputs, factor
from logrisk.errors import NumericalError, ValidationError

from conftest import make_panel


# lagged samples ----------------------------------------------------------

def test_build_lagged_windows():
    ds = build_lagged(np.array([1.0, 2.0, 3.0, 4.0]), 0, 2)
    np.testing.assert_array_equal(ds.inputs, [[2, 1], [3, 2]])
    np.testing.assert_array_equal(ds.targets, [3, 4])
    assert ds.M == 2


def test_build_lagged_constant_and_panel():
    ds = build_lagged(make_panel(np.full((10, 2), 3.0)), 1, 3)
    assert np.all(ds.inputs == 3.0) and np.all(ds.targets == 3.0)
    assert ds.M == 7 and ds.region == 1


def test_build_lagged_too_short():
    with pytest.raises(ValidationError):
        build_lagged(np.arange(4.0), 0, 4)


# GRNN ------------------------------------------------------------------------

def test_grnn_symmetric_query():
    ds = LaggedDataset(np.array([[-1.0], [1.0]]), np.array([0.0, 10.0]), 1)
    assert grnn_predict(ds, np.array([[0.0]]), 0.3) == pytest.approx(5.0, abs=1e-12)


def test_grnn_limits():
    rng = np.random.default_rng(0)
    X, y = rng.normal(size=(20, 3)), rng.normal(size=20)
    g_small = GRNN(1e-4).fit(X, y)
    np.testing.assert_allclose(g_small.predict(X), y, atol=1e-12)
    g_big = GRNN(1e8).fit(X, y)
    np.testing.assert_allclose(g_big.predict(rng.normal(size=(5, 3))), y.mean(), atol=1e-9)


def test_grnn_far_query_falls_back_to_nearest():
    X = np.array([[0.0], [1.0]])
    g = GRNN(1e-3).fit(X, np.array([2.0, 7.0]))
    assert g.predict([[1e6]])[0] == 7.0


def test_grnn_temporal_form():
    Y = np.array([[1.0, 0.0], [2.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    # the current state (2, 0) matched y_{t-2}, which was followed by (1, 0)
    np.testing.assert_allclose(grnn_temporal_predict(Y, 3, 0.05), [1.0, 0.0], atol=1e-12)
    with pytest.raises(ValidationError):
        grnn_temporal_predict(Y, 1, 0.1)


def test_grnn_rejects_bad_bandwidth():
    with pytest.raises(ValidationError):
        GRNN(0.0)


# RBF -------------------------------------------------------------------------

def test_rbf_single_sample():
    net = RBFNetwork(2.0).fit(np.array([[0.3, 0.1]]), np.array([4.0]))
    assert net.n_nodes == 1
    assert net.predict([[0.3, 0.1]])[0] == pytest.approx(4.0, abs=1e-12)


def test_rbf_gaussian_bump():
    beta, c = 1.5, np.array([0.2, -0.4])
    X = np.random.default_rng(1).uniform(-2, 2, size=(40, 2))
    y = 3.0 * np.exp(-np.sum((X - c) ** 2, axis=1) / beta ** 2)
    X = np.vstack([X, c])
    y = np.append(y, 3.0)
    net = RBFNetwork(beta, tol=1e-6).fit(X, y)
    assert net.n_nodes <= 3
    assert np.max(np.abs(net.predict(X) - y)) <= 1e-6


def test_rbf_training_error_non_increasing():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(60, 2))
    y = np.sin(X[:, 0]) + 0.1 * rng.normal(size=60)
    net = RBFNetwork(1.0, tol=0.0).fit(X, y)
    rss = [h[2] for h in net.history_]
    assert net.n_nodes == 60
    assert np.all(np.diff(rss) <= 1e-9 * rss[0])


def test_rbf_duplicate_inputs_stop_growth():
    X = np.zeros((5, 1))
    net = RBFNetwork(1.0, tol=0.0).fit(X, np.arange(5.0))
    assert net.n_nodes == 1


# SVR -------------------------------------------------------------------------

def svr_qp(X, y, C, eps):
    """Constrained form of the primal, solved by SLSQP."""
    M, d = X.shape

    def obj(z):
        return 0.5 * z[:d] @ z[:d] + C * z[d + 1:].sum()

    cons = [{"type": "ineq", "fun": lambda z: eps + z[d + 1:] - (y - X @ z[:d] - z[d])},
            {"type": "ineq", "fun": lambda z: eps + z[d + 1:] + (y - X @ z[:d] - z[d])},
            {"type": "ineq", "fun": lambda z: z[d + 1:]}]
    z0 = np.zeros(d + 1 + M)
    z0[d + 1:] = np.abs(y) + 1
    res = optimize.minimize(obj, z0, constraints=cons, method="SLSQP",
                            options={"maxiter": 500, "ftol": 1e-12})
    return res.fun


def test_svr_feasible_tube():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 2))
    y = X @ np.array([1.0, -0.5]) + 0.2 + rng.uniform(-0.05, 0.05, 40)
    m = SVR(C=100.0, epsilon=0.1).fit(X, y)
    slack = np.maximum(np.abs(y - m.predict(X)) - 0.1, 0)
    assert slack.sum() <= 1e-6
    assert np.max(np.abs(y - m.predict(X))) <= 0.1 + 1e-6


def test_svr_objective_close_to_qp():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(30, 2))
    y = X @ np.array([0.7, 0.2]) + 0.3 * rng.normal(size=30)
    m = SVR(C=1.0, epsilon=0.1).fit(X, y)
    qp = svr_qp(X, y, 1.0, 0.1)
    assert m.objective_ <= qp * (1 + 1e-3) + 1e-6


def test_svr_all_slack_case():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(25, 3))
    y = rng.uniform(0, 1, 25)
    m = SVR(C=1.0, epsilon=5.0).fit(X, y)
    assert np.linalg.norm(m.beta) <= 1e-6
    assert 0.0 <= m.intercept_ <= 1.0


def test_svr_zero_penalty():
    rng = np.random.default_rng(6)
    m = SVR(C=0.0, epsilon=0.1).fit(rng.normal(size=(10, 2)), rng.normal(size=10))
    assert np.all(m.beta == 0)


def test_svr_trace_non_increasing():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(50, 3))
    y = X[:, 0] + 0.2 * rng.normal(size=50)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        m = SVR(C=2.0, epsilon=0.05, max_iter=500).fit(X, y)
    assert np.all(np.diff(m.objective_trace_) <= 0)


def test_svr_gaussian_kernel():
    X = np.linspace(-2, 2, 30)[:, None]
    y = np.sin(2 * X[:, 0])
    m = SVR(C=10.0, epsilon=0.05, kernel="gaussian", gamma=2.0).fit(X, y)
    assert np.max(np.abs(m.predict(X) - y)) < 0.2
    with pytest.raises(ValidationError):
        m.beta


def test_svr_warns_without_convergence():
    rng = np.random.default_rng(8)
    with pytest.warns(RuntimeWarning, match="objective"):
        SVR(C=5.0, epsilon=0.0, max_iter=3).fit(rng.normal(size=(20, 2)), rng.normal(size=20))


def test_svr_parameter_checks():
    with pytest.raises(ValidationError):
        SVR(C=-1)
    with pytest.raises(ValidationError):
        SVR(epsilon=-0.1)


# MLP / BNN ---------------------------------------------------------------------

def test_mlp_without_hidden_nodes_is_affine_regression():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(30, 4))
    y = X @ np.array([1.0, -2.0, 0.5, 0.0]) + 3.0
    m = MLP(NH=0).fit(X, y)
    np.testing.assert_allclose(m.coef_, [1.0, -2.0, 0.5, 0.0], atol=1e-8)
    assert m.intercept_ == pytest.approx(3.0, abs=1e-8)


def test_mlp_zero_targets():
    X = np.random.default_rng(10).normal(size=(20, 2))
    m = MLP(NH=3).fit(X, np.zeros(20))
    assert m.loss_trace_[-1] <= 1e-10
    assert np.max(np.abs(m.predict(X))) <= 1e-5


def test_mlp_loss_trace_non_increasing():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(40, 3))
    y = np.tanh(X[:, 0] - X[:, 1]) + 0.05 * rng.normal(size=40)
    m = MLP(NH=4, seed=2).fit(X, y)
    assert np.all(np.diff(m.loss_trace_) <= 0)


def test_mlp_seed_determinism():
    rng = np.random.default_rng(12)
    X, y = rng.normal(size=(30, 2)), rng.normal(size=30)
    a, b = MLP(NH=3, seed=4).fit(X, y), MLP(NH=3, seed=4).fit(X, y)
    assert a.weights_.tobytes() == b.weights_.tobytes()
    c = BNN(NH=2, seed=4).fit(X, y)
    d = BNN(NH=2, seed=4).fit(X, y)
    assert c.weights_.tobytes() == d.weights_.tobytes() and c.nu_ == d.nu_


def test_bnn_weight_norm_monotone_in_nu():
    rng = np.random.default_rng(13)
    X = rng.normal(size=(40, 3))
    y = np.sin(X[:, 0]) + 0.3 * rng.normal(size=40)
    norms = [np.linalg.norm(BNN(NH=3, seed=1, nu=nu).fit(X, y).weights_) for nu in NU_GRID]
    assert np.all(np.diff(norms) >= -1e-8)


def test_bnn_zero_targets():
    X = np.random.default_rng(14).normal(size=(20, 2))
    m = BNN(NH=3, seed=0).fit(X, np.zeros(20))
    assert np.linalg.norm(m.weights_) <= 1e-4
    assert m.J_ <= 1e-8


def test_bnn_near_unregularized_end_of_grid():
    rng = np.random.default_rng(15)
    X = rng.normal(size=(60, 2))
    y = 5.0 * rng.normal(size=60)
    m = BNN(NH=3, seed=0, nu=0.95).fit(X, y)
    assert (1 - 0.95) * m.E_W_ <= 0.05 * m.J_
    assert m.J_ == pytest.approx(0.95 * m.E_O_ + 0.05 * m.E_W_, rel=1e-12)


def test_bnn_selects_nu_from_grid():
    rng = np.random.default_rng(16)
    X = rng.normal(size=(40, 2))
    m = BNN(NH=2, seed=0).fit(X, X[:, 0] + 0.1 * rng.normal(size=40))
    assert m.nu_ in NU_GRID
    with pytest.raises(ValidationError):
        BNN(NH=0)


# GP ----------------------------------------------------------------------------

def test_gp_noiseless_interpolation():
    rng = np.random.default_rng(17)
    X, y = rng.normal(size=(15, 2)), rng.normal(size=15)
    m = GaussianProcess(SquaredExponential(1.0, 1.0), noise=0.0).fit(X, y)
    assert np.max(np.abs(m.predict(X) - y)) <= 1e-6


def test_gp_huge_noise_reverts_to_prior_mean():
    rng = np.random.default_rng(18)
    X, y = rng.normal(size=(10, 1)), rng.normal(size=10)
    m = GaussianProcess(SquaredExponential(), noise=1e12).fit(X, y)
    assert np.max(np.abs(m.predict(rng.normal(size=(4, 1))))) <= 1e-10


def test_gp_scalar_closed_form():
    k = SquaredExponential(0.7, 2.0)
    x1, y1, xs, s2 = np.array([[0.3]]), np.array([1.7]), np.array([[0.9]]), 0.25
    m = GaussianProcess(k, noise=s2).fit(x1, y1)
    expect = k(xs, x1)[0, 0] * y1[0] / (k(x1, x1)[0, 0] + s2)
    assert m.predict(xs)[0] == pytest.approx(expect, rel=1e-13)


def test_gp_grid_search_picks_finite_hyperparameters():
    X = np.linspace(0, 3, 25)[:, None]
    y = np.sin(2 * X[:, 0])
    m = GaussianProcess(center=True).fit(X, y)
    assert np.isfinite(m.log_marginal_)
    assert np.max(np.abs(m.predict(X) - y)) < 0.1


def test_gp_fixed_kernel_needs_noise():
    with pytest.raises(ValidationError):
        GaussianProcess(SquaredExponential()).fit(np.zeros((2, 1)), np.zeros(2))


def test_factor_jitter_and_failure():
    K = np.ones((3, 3))    # PSD, singular: the jitter retry succeeds
    factor(K)
    with pytest.raises(NumericalError):
        factor(-np.eye(3))


def test_empirical_block_kernel_is_psd_and_symmetric():
    X = np.random.default_rng(19).normal(size=(30, 3))
    kern = EmpiricalBlockKernel(X)
    Z = block_inputs(np.arange(30), 3)
    K = kern(Z, Z)
    np.testing.assert_allclose(K, K.T, atol=1e-14)
    assert np.linalg.eigvalsh(K).min() >= -1e-10


def test_soft_gp_identity_reduces_to_hard_gp():
    X = np.random.default_rng(20).normal(size=(25, 3))
    train, query = np.arange(0, 20), np.arange(20, 25)
    noise = np.array([0.1, 0.2, 0.05])
    soft = soft_gp_predict(X, np.eye(3), train, query, noise)
    kern = EmpiricalBlockKernel(X)
    Z = block_inputs(train, 3)
    hard = GaussianProcess(kern, noise=np.tile(noise, train.size)).fit(
        Z, (X[train] - kern.mean).ravel())
    expect = hard.predict(block_inputs(query, 3)).reshape(-1, 3) + kern.mean
    np.testing.assert_allclose(soft, expect, atol=1e-10)


def test_soft_gp_zero_noise_reproduces_training_rows():
    X = np.random.default_rng(21).normal(size=(12, 2))
    W = np.array([[0.8, 0.2], [0.3, 0.7]])
    train = np.arange(0, 6)
    pred = soft_gp_predict(X, W, train, train, np.zeros(2))
    np.testing.assert_allclose(pred, (X @ W.T)[train], atol=1e-6)


def test_soft_gp_rank_one_projection():
    # soft rows a_t v: every lag covariance is c_h v v^T, so the prediction is
    # the scalar GP on a_t times v
    a = np.random.default_rng(22).normal(size=16)
    v = np.array([1.0, 2.0])
    values = np.outer(a, v)
    train, query = np.arange(8), np.array([10, 12])
    pred = soft_gp_predict(values, np.eye(2), train, query, np.array([0.5, 0.5]))
    ac = a - a.mean()
    T = a.size
    c = np.array([ac[h:] @ ac[:T - h] / T for h in range(T)])
    Kt = c[np.abs(train[:, None] - train[None, :])]
    Kq = c[np.abs(query[:, None] - train[None, :])]
    # stacked block system: K = Kt (x) v v^T + 0.5 I
    K = np.kron(Kt, np.outer(v, v)) + 0.5 * np.eye(2 * train.size)
    ks = np.kron(Kq, np.outer(v, v))
    y = (values[train] - values.mean(axis=0)).ravel()
    expect = (ks @ np.linalg.solve(K, y)).reshape(-1, 2) + values.mean(axis=0)
    np.testing.assert_allclose(pred, expect, atol=1e-10)
    # predictions lie on the line spanned by v
    centred = pred - values.mean(axis=0)
    np.testing.assert_allclose(centred[:, 1], 2 * centred[:, 0], atol=1e-10)


# registry ------------------------------------------------------------------------

def test_model_spec_json_round_trip(tmp_path):
    spec = ModelSpec("rbf", {"spread": 5.0}, seed=3)
    spec.to_json(tmp_path / "s.json")
    assert ModelSpec.from_json(tmp_path / "s.json") == spec
    assert spec.resolved()["spread"] == 5.0 and spec.resolved()["tol"] == 0.2
    with pytest.raises(ValidationError):
        ModelSpec("knn")


@pytest.mark.parametrize("kind", KINDS)
def test_every_kind_fits_and_dumps(kind, tmp_path):
    rng = np.random.default_rng(23)
    X = rng.normal(size=(30, 3))
    y = X[:, 0] + 0.1 * rng.normal(size=30)
    model = make_model(ModelSpec(kind)).fit(X, y)
    p1, p2 = model.predict(X[:4]), model.predict(X[:4])
    assert p1.shape == (4,) and np.array_equal(p1, p2)
    dump_model(model, tmp_path / "m.json")
    assert json.loads((tmp_path / "m.json").read_text())["kind"] == kind


def test_write_predictions(tmp_path):
    write_predictions(tmp_path / "p.csv", [(3, "R1", 0.5), (4, "R1", -1.25)])
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines == ["time,region,prediction", "3.0,R1,0.5", "4.0,R1,-1.25"]
