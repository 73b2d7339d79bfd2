import numpy as np
import pytest

from logrisk import classical, synth, trig
from logrisk.classical import AutocorrEstimate, ResidualPanel
from logrisk.errors import IllConditionedError, ValidationError

from conftest import make_panel


def test_residuals_of_exact_fit_vanish():
    T = 40
    f = trig.harmonic_frequencies(2, T)
    pn = make_panel(trig.design_matrix(f, trig.node_index(T)) @ np.array([1.0, 0.5, -0.2, 0.1]))
    res = classical.residuals(pn, trig.fit(pn, N=2))
    assert np.max(np.abs(res.values)) < 1e-12


def test_residuals_shift_by_constant():
    T = 40
    pn = make_panel(np.cos(2 * np.pi * trig.node_index(T) / T))
    model = trig.fit(pn, N=1)
    res = classical.residuals(pn.with_values(pn.values + 0.7), model)
    np.testing.assert_allclose(res.values, 0.7, atol=1e-12)
    np.testing.assert_allclose(res.column_means, 0.7, atol=1e-12)


def test_residuals_recover_noise_orthogonal_to_design():
    T, N = 120, 3
    rng = np.random.default_rng(0)
    d = trig.design_matrix(trig.harmonic_frequencies(N, T), trig.node_index(T))
    raw = synth.generate_residuals(synth.Scenario(
        trig.TrigModel(trig.harmonic_frequencies(N, T), np.zeros((N, 2)), np.zeros((N, 2)), T),
        0.5 * np.eye(2), [0.3, 0.3], T, seed=1)).values
    q, _ = np.linalg.qr(d)
    noise = raw - q @ (q.T @ raw)
    mean = d @ rng.normal(size=(2 * N, 2))
    pn = make_panel(mean + noise)
    res = classical.residuals(pn, trig.fit(pn, N=N))
    assert np.max(np.abs(res.values - noise)) <= 1e-6


def test_covariances_hand_example():
    cov = classical.empirical_covariances(ResidualPanel.from_array([[1.0], [-1.0], [1.0], [-1.0]]))
    assert cov.R0[0, 0] == pytest.approx(1.0, abs=1e-15)
    assert cov.R1[0, 0] == pytest.approx(-1.0, abs=1e-15)


def test_covariances_zero_residuals():
    cov = classical.empirical_covariances(ResidualPanel.from_array(np.zeros((5, 3))))
    assert np.all(cov.R0 == 0) and np.all(cov.R1 == 0)


def test_covariances_white_noise_limit():
    Y = np.random.default_rng(1).standard_normal((100_000, 2))
    cov = classical.empirical_covariances(ResidualPanel.from_array(Y))
    assert np.max(np.abs(cov.R0 - np.eye(2))) <= 0.02
    assert np.max(np.abs(cov.R1)) <= 0.02


def test_covariances_orientation():
    # R1[p, q] pairs Y_t(q) with Y_{t+1}(p)
    Y = np.random.default_rng(2).normal(size=(30, 3))
    cov = classical.empirical_covariances(ResidualPanel.from_array(Y))
    p, q = 0, 2
    expect = np.sum(Y[:-1, q] * Y[1:, p]) / 29
    assert cov.R1[p, q] == pytest.approx(expect, rel=1e-13)


def test_covariance_pair_invariants():
    Y = np.random.default_rng(3).normal(size=(50, 4))
    cov = classical.empirical_covariances(ResidualPanel.from_array(Y))
    assert np.max(np.abs(cov.R0 - cov.R0.T)) <= 1e-12
    assert np.all(np.diff(cov.eigvals) <= 0)
    np.testing.assert_allclose(cov.eigvecs.T @ cov.eigvecs, np.eye(4), atol=1e-10)


def test_covariances_need_two_rows():
    with pytest.raises(ValidationError):
        classical.empirical_covariances(ResidualPanel.from_array(np.ones((1, 2))))


def test_full_truncation_is_R1_R0_inverse():
    Y = np.random.default_rng(4).normal(size=(60, 4))
    cov = classical.empirical_covariances(ResidualPanel.from_array(Y))
    est = classical.estimate_rho(cov, 4)
    oracle = cov.R1 @ np.linalg.inv(cov.R0)
    assert np.linalg.norm(est.rho - oracle) <= 1e-10 * np.linalg.norm(oracle)


def test_zero_R1_gives_zero_rho():
    cov = classical._pair(np.diag([3.0, 2.0, 1.0]), np.zeros((3, 3)))
    assert np.all(classical.estimate_rho(cov, 2).rho == 0)


def test_truncation_limits_rank():
    Y = np.random.default_rng(5).normal(size=(80, 5))
    cov = classical.empirical_covariances(ResidualPanel.from_array(Y))
    for k in range(1, 6):
        assert np.linalg.matrix_rank(classical.estimate_rho(cov, k).rho, tol=1e-10) <= k


def test_ill_conditioned_reports_usable_rank():
    Y = np.zeros((20, 3))
    Y[:, 0] = np.random.default_rng(6).normal(size=20)
    cov = classical.empirical_covariances(ResidualPanel.from_array(Y))
    with pytest.raises(IllConditionedError) as err:
        classical.estimate_rho(cov, 2)
    assert err.value.usable_rank == 1


def test_truncation_out_of_range():
    cov = classical._pair(np.eye(2), np.zeros((2, 2)))
    with pytest.raises(ValidationError):
        classical.estimate_rho(cov, 3)


def test_rho_recovered_on_long_synthetic_panel():
    T, P = 5000, 4
    errors = []
    for seed in range(50):
        sc = synth.make_scenario(T=T, P=P, N=2, rho=0.5, sigma=0.1, seed=seed)
        est = classical.estimate_rho(
            classical.empirical_covariances(synth.generate_residuals(sc)), P)
        errors.append(np.linalg.norm(est.rho - 0.5 * np.eye(P)))
    # each entry has asymptotic variance (1 - rho^2) / T
    assert abs(np.median(errors) / np.sqrt(P * P * 0.75 / T) - 1) <= 0.1


def test_plugin_predictor_examples():
    res = ResidualPanel.from_array([[2.0, -4.0], [1.0, 1.0]])
    half = AutocorrEstimate(0.5 * np.eye(2), 2)
    np.testing.assert_allclose(classical.plugin_predict(half, res, 2), [1.0, -2.0])
    np.testing.assert_array_equal(
        classical.plugin_predict(AutocorrEstimate(np.eye(2), 2), res, 3), [1.0, 1.0])
    assert np.all(classical.plugin_predict(AutocorrEstimate(np.zeros((2, 2)), 1), res, 2) == 0)


def test_plugin_predictor_range():
    res = ResidualPanel.from_array(np.ones((4, 1)))
    est = AutocorrEstimate(np.eye(1), 1)
    for t in (1, 6):
        with pytest.raises(ValidationError):
            classical.plugin_predict(est, res, t)


def test_predict_path_matches_pointwise():
    Y = np.random.default_rng(7).normal(size=(10, 3))
    res = ResidualPanel.from_array(Y)
    est = AutocorrEstimate(np.random.default_rng(8).normal(size=(3, 3)), 3)
    path = classical.predict_path(est.rho, res)
    for t in range(2, 12):
        np.testing.assert_allclose(path[t - 2], classical.plugin_predict(est, res, t))


def test_default_truncation():
    assert classical.default_truncation(265) == 5
    assert classical.REFERENCE_TRUNCATION == 8
    assert classical.default_truncation(2) == 1


def test_outside_support_fraction():
    assert classical.outside_support_fraction(np.array([[0.1, -0.1], [0.5, 0.2]]), 1 / 3) == 0.5
