import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from onebit_radar import estimate as est
from onebit_radar import harness, model, qpsolve, sampling
from onebit_radar.errors import DegenerateFilterError

import oracles
from conftest import random_complex, random_psd


def stationary_setup(N, beta=0.1, noise=0.1, seed=0):
    s = model.generate_unimodular_sequence(N, seed=seed)
    m = model.StationaryInterferenceModel(beta, noise * np.eye(N))
    return s, m, model.interference_covariance(s, m)


def moving_setup(N, noise=0.1, seed=0):
    s = model.generate_unimodular_sequence(N, seed=seed)
    m = model.MovingClutterModel(2, 10, 0.01, 0.0, 0.2, noise * np.eye(N))
    return s, m, model.interference_covariance(s, m)


# --- filter and full-precision estimates -------------------------------------------------

def test_mmf_identity_covariance_is_matched_filter(rng):
    x = np.exp(2j * np.pi * rng.uniform(size=6))
    w = est.mmf_filter(x, np.eye(6)).w
    np.testing.assert_allclose(w, x, atol=1e-6)


def test_mmf_diagonal_covariance():
    w = est.mmf_filter(np.array([1.0, 1.0]), np.diag([1.0, 2.0])).w
    np.testing.assert_allclose(w, [1.0, 0.5], rtol=1e-6)


def test_mmf_estimate_is_scale_invariant(rng):
    R = random_psd(rng, 5)
    x = random_complex(rng, 5)
    y = random_complex(rng, 5)
    w = est.mmf_filter(x, R)
    a = est.mmf_estimate_alpha(w, y, x)
    assert est.mmf_estimate_alpha(7.5j * w.w, y, x) == pytest.approx(a, rel=1e-12)


def test_degenerate_filter():
    with pytest.raises(DegenerateFilterError):
        est.mmf_estimate_alpha(np.array([0.0, 1.0]), np.ones(2), np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        est.ReceiveFilter(np.zeros(3))


@given(seed=st.integers(0, 2**32 - 1), N=st.integers(1, 30))
def test_mmf_estimate_equals_wls_minimizer(seed, N):
    rng = np.random.default_rng(seed)
    R = random_psd(rng, N)
    x = random_complex(rng, N)
    y = random_complex(rng, N)
    a = est.mmf_estimate_alpha(est.mmf_filter(x, R), y, x)
    ref = oracles.wls_alpha_lstsq(y, x, R)
    assert abs(a - ref) <= 1e-10 * max(1.0, abs(ref))


def test_mmf_minimizes_output_mse_over_filters():
    # E|w^H y / w^H s - alpha|^2 = w^H R w / |w^H s|^2 for unbiased linear estimators
    rng = np.random.default_rng(3)
    N = 8
    s, _, R = stationary_setup(N)
    x = s.samples
    mse = lambda w: np.vdot(w, R @ w).real / abs(np.vdot(w, x)) ** 2
    best = mse(est.mmf_filter(x, R).w)
    assert best == pytest.approx(1 / np.vdot(x, np.linalg.solve(R, x)).real, rel=1e-6)
    for _ in range(1000):
        assert mse(random_complex(rng, N)) >= best * (1 - 1e-9)


def test_full_precision_noise_free_exact():
    s, m, R = stationary_setup(16)
    y = (0.7 - 1.1j) * s.samples
    e = est.estimate_full_precision(s, y, m)
    assert abs(e.alpha_hat - (0.7 - 1.1j)) <= 1e-9
    np.testing.assert_array_equal(e.y_hat, y)
    assert e.method == "fullPrecision" and e.cycles == 0


def test_full_precision_moving_recovers_doppler():
    s, m, R = moving_setup(32)
    nu = 0.137
    y = (1 + 0.5j) * s.samples * model.steering_vector(nu, 32)
    e = est.estimate_full_precision(s, y, m, moving=True)
    assert abs(e.nu_hat - nu) < 1e-5
    assert abs(e.alpha_hat - (1 + 0.5j)) < 1e-4


# --- Doppler criterion -----------------------------------------------------------------

def test_g_form_matches_residual_identity():
    rng = np.random.default_rng(4)
    s, _, R = moving_setup(12)
    y = random_complex(rng, 12)
    Riy = np.linalg.solve(R, y)
    base = np.vdot(y, Riy).real
    for nu in np.linspace(-0.5, 0.49, 100):
        sig = s.samples * model.steering_vector(nu, 12)
        a = oracles.wls_alpha_lstsq(y, sig, R)
        g = est.doppler_objective_g(nu, y, s, R)
        assert g == pytest.approx(est.wls_objective(y, a, nu, s, R) - base, abs=1e-8)


def test_g_is_even_for_real_inputs():
    rng = np.random.default_rng(5)
    N = 9
    s = model.TransmitSequence(np.sign(rng.standard_normal(N)) + 0j)
    A = rng.standard_normal((N, N))
    R = A @ A.T / N + 0.2 * np.eye(N)
    y = rng.standard_normal(N) + 0j
    for nu in (0.05, 0.2, 0.33):
        assert est.doppler_objective_g(nu, y, s, R) == pytest.approx(est.doppler_objective_g(-nu, y, s, R), abs=1e-10)


def test_profile_matches_wls_and_g():
    rng = np.random.default_rng(6)
    s, _, R = moving_setup(10)
    y = random_complex(rng, 10)
    prof = est.DopplerProfile(y, s, est.CovarianceFactor(R))
    nus = np.linspace(-0.5, 0.5, 37)
    vals = prof(nus)
    for nu, v in zip(nus, vals):
        sig = s.samples * model.steering_vector(nu, 10)
        a = oracles.wls_alpha_lstsq(y, sig, R)
        assert v == pytest.approx(est.wls_objective(y, a, nu, s, R), rel=1e-8, abs=1e-10)


def test_golden_section_on_parabola():
    x, v = est.golden_section(lambda t: (t - 0.3) ** 2 + 1, -1, 1, 1e-8)
    assert x == pytest.approx(0.3, abs=1e-7) and v == pytest.approx(1.0)


def test_search_doppler_finds_global_minimum():
    rng = np.random.default_rng(7)
    s, _, R = moving_setup(20)
    y = 2 * s.samples * model.steering_vector(-0.3123, 20) + 0.05 * random_complex(rng, 20)
    prof = est.DopplerProfile(y, s, est.CovarianceFactor(R))
    nu, val = est.search_doppler(prof, 20)
    dense = prof(np.linspace(-0.5, 0.5, 200001))
    assert val <= dense.min() + 1e-9
    assert abs(nu + 0.3123) < 0.01
    assert -0.5 <= nu < 0.5


# --- proposed estimator ------------------------------------------------------------------

def test_stationary_tracking_threshold_beats_zero_threshold():
    N, trials = 25, 30
    s, m, R = stationary_setup(N)
    alpha = 1.2 + 0.4j
    rng = np.random.default_rng(8)
    err_track, err_zero = [], []
    cfg = est.EstimatorConfig(alpha_prior=alpha)
    for _ in range(trials):
        y = model.synthesize_scene(s, alpha, 0.0, m, rng).y
        lam = sampling.design_threshold_marginal(s, alpha, abs(alpha) ** 2, R, seed=rng)[0]
        e1 = est.estimate_stationary(s, m, sampling.quantize_one_bit(y, lam), cfg)
        e0 = est.estimate_stationary(s, m, sampling.quantize_one_bit(y, np.zeros(N)), cfg)
        err_track.append(abs(e1.alpha_hat - alpha) / abs(alpha))
        err_zero.append(abs(e0.alpha_hat - alpha) / abs(alpha))
    assert np.median(err_track) < np.median(err_zero)
    assert np.median(err_track) < 0.3


def test_stationary_estimate_fields():
    N = 10
    s, m, R = stationary_setup(N)
    rng = np.random.default_rng(9)
    y = model.synthesize_scene(s, 1.0, 0.0, m, rng).y
    obs = sampling.quantize_one_bit(y, sampling.design_threshold_marginal(s, 0, 1.25, R, seed=rng)[0])
    e = est.estimate_stationary(s, m, obs)
    assert e.status == "optimal" and e.kkt_residual <= 1e-8
    assert obs.is_consistent(e.y_hat)
    assert e.nu_hat == 0.0
    with pytest.raises(ValueError):
        est.estimate_stationary(model.generate_unimodular_sequence(N + 1), None, obs, R=np.eye(N + 1))


def test_record_and_json():
    e = est.TargetEstimate(1 - 2j, 0.1, np.zeros(2), 3.5, 4, "proposed")
    rec = e.to_record()
    assert set(rec) == {"method", "alphaHat", "nuHat", "objective", "cycles", "solverStatus"}
    assert rec["alphaHat"] == [1.0, -2.0]
    assert json.loads(e.to_json()) == rec


@given(seed=st.integers(0, 2**32 - 1), K=st.integers(1, 3))
def test_initial_guess_is_consistent(seed, K):
    rng = np.random.default_rng(seed)
    N = 10
    s, _, R = stationary_setup(N)
    y = model.complex_gaussian(rng, R + np.outer(s.samples, s.samples.conj()))
    lams = sampling.design_threshold_marginal(s, 0, 1.0, R, K=K, seed=rng)
    bank = sampling.ThresholdBank.parallel(lams) if K > 1 else sampling.ThresholdBank.single(lams[0])
    obs = sampling.quantize(y, bank)
    guess = est.initial_signal_guess(obs, R, None, 1.0)
    assert np.all(np.isfinite(guess))
    assert obs.is_consistent(guess)


def test_initial_guess_far_tail_falls_back_to_bound():
    obs = sampling.quantize_one_bit(np.array([100.0 + 100j]), np.array([80.0 - 80j]))
    g = est.initial_signal_guess(obs, np.eye(1) * 1e-4, None, 1e-4)
    assert g.real[0] == pytest.approx(80.0) and g.imag[0] >= -80.0


def test_moving_clutter_free_at_zero_doppler():
    N = 25
    s = model.generate_unimodular_sequence(N)
    R = 0.01 * np.eye(N)
    alpha = 1.0 + 0.0j
    y = alpha * s.samples
    rng = np.random.default_rng(10)
    lam = sampling.design_threshold_marginal(s, 0, 1.0, R, seed=rng)[0]
    obs = sampling.quantize_one_bit(y, lam)
    e = est.estimate_moving(s, None, obs, est.EstimatorConfig(alpha_power=1.0), R=R)
    assert abs(e.nu_hat) < 0.01


@pytest.mark.parametrize("seed", range(4))
def test_cyclic_history_nonincreasing(seed):
    N = 20
    s, m, R = moving_setup(N, seed=seed)
    rng = np.random.default_rng(seed)
    y = model.synthesize_scene(s, 1.0 - 0.3j, 0.21, m, rng).y
    prior = sampling.DopplerPrior("uniform", 0.0, 0.8)
    lam = sampling.design_threshold_marginal(s, 0, 1.25, R, nu_prior=prior, seed=rng)[0]
    e = est.estimate_moving(s, m, sampling.quantize_one_bit(y, lam), est.EstimatorConfig(alpha_power=1.25))
    h = np.array(e.history)
    assert np.all(np.diff(h) <= 1e-10)
    assert e.status == "optimal" and e.cycles <= 100
    assert -0.5 <= e.nu_hat < 0.5


def test_moving_without_extrapolation_still_monotone():
    N = 15
    s, m, R = moving_setup(N)
    rng = np.random.default_rng(11)
    y = model.synthesize_scene(s, 1.0, -0.1, m, rng).y
    lam = sampling.design_threshold_marginal(s, 0, 1.0, R, seed=rng)[0]
    e = est.estimate_moving(s, m, sampling.quantize_one_bit(y, lam),
                            est.EstimatorConfig(extrapolate=False, max_cycles=30))
    assert np.all(np.diff(e.history) <= 1e-10)


def test_fixed_initial_doppler():
    N = 12
    s, m, R = moving_setup(N)
    y = s.samples * model.steering_vector(0.1, N)
    obs = sampling.quantize_one_bit(y, np.zeros(N))
    e = est.estimate_moving(s, m, obs, est.EstimatorConfig(nu_init=0.6, max_cycles=1))
    assert e.cycles == 1 and -0.5 <= e.nu_hat < 0.5


# --- Bussgang baseline -------------------------------------------------------------------

def test_arcsine_inverse_entry():
    out = est.arcsine_inverse(np.array([[2 / 3 + 0j]]))
    assert out[0, 0].real == pytest.approx(np.sqrt(3) / 2)
    out = est.arcsine_inverse(np.array([[1 - 1j]]))
    assert out[0, 0] == pytest.approx(1 - 1j)


@given(seed=st.integers(0, 2**32 - 1))
def test_normalized_covariance_has_unit_diagonal(seed):
    rng = np.random.default_rng(seed)
    M = est.normalize_covariance(random_psd(rng, 5))
    np.testing.assert_allclose(np.diag(M), 1.0, atol=1e-12)
    assert np.abs(M).max() <= 1 + 1e-12


def test_shifted_covariance_definition(rng):
    N = 4
    x = random_complex(rng, N)
    lam = random_complex(rng, N)
    R = random_psd(rng, N)
    e = 0.5j * x - lam
    np.testing.assert_allclose(est.shifted_covariance(0.5j, x, lam, R), np.outer(e, e.conj()) + R, atol=1e-12)


def test_fast_misfit_matches_dense(rng):
    N = 7
    x = random_complex(rng, N)
    lam = random_complex(rng, N)
    R = random_psd(rng, N)
    R_bar = est.normalize_covariance(random_psd(rng, N))
    alphas = random_complex(rng, 20)
    fast = est._bussgang_misfit(alphas, x, lam, R, R_bar)
    dense = [np.linalg.norm(R_bar - est.normalize_covariance(est.shifted_covariance(a, x, lam, R))) for a in alphas]
    np.testing.assert_allclose(fast, dense, rtol=1e-9, atol=1e-12)


def test_bussgang_misfit_vanishes_at_truth():
    N = 12
    s, _, R = stationary_setup(N)
    lam = sampling.design_threshold_marginal(s, 0, 1.0, R, seed=1)[0]
    truth = 0.8 - 0.6j
    R_bar = est.normalize_covariance(est.shifted_covariance(truth, s.samples, lam, R))
    grid = est._disk_grid(3.0, 101)
    vals = est._bussgang_misfit(grid, s.samples, lam, R, R_bar)
    assert abs(grid[np.argmin(vals)] - truth) <= 6 / 100 * np.sqrt(2)
    assert est._bussgang_misfit(np.array([truth]), s.samples, lam, R, R_bar)[0] < 1e-6


def test_bussgang_estimate_runs_on_both_scenarios():
    N = 10
    s, m, R = stationary_setup(N)
    rng = np.random.default_rng(12)
    y = model.synthesize_scene(s, 1.0, 0.0, m, rng).y
    lam = sampling.design_threshold_marginal(s, 0, 1.0, R, seed=rng)[0]
    obs = sampling.quantize_one_bit(y, lam)
    e = est.estimate_bussgang(s, R, obs)
    assert e.method == "bussgang" and np.isfinite(e.alpha_hat) and abs(e.alpha_hat) <= 3.5
    e2 = est.estimate_bussgang(s, R, obs, moving=True, cfg=est.EstimatorConfig(bussgang_nu_grid=16))
    assert -0.5 <= e2.nu_hat < 0.5


# --- remaining worked examples ----------------------------------------------------------

def test_interference_orthogonal_to_filter_is_ignored(rng):
    R = random_psd(rng, 6)
    x = random_complex(rng, 6)
    w = est.mmf_filter(x, R).w
    v = random_complex(rng, 6)
    v -= w * np.vdot(w, v) / np.vdot(w, w)  # now w^H v = 0
    assert est.mmf_estimate_alpha(w, (0.3 - 2j) * x + v, x) == pytest.approx(0.3 - 2j, abs=1e-12)


def test_wls_objective_examples(rng):
    s, _, R = moving_setup(8)
    sig = s.samples * model.steering_vector(0.2, 8)
    assert est.wls_objective((1 - 1j) * sig, 1 - 1j, 0.2, s, R) == pytest.approx(0.0, abs=1e-12)
    y = random_complex(rng, 8)
    r = y - 0.5 * sig
    assert est.wls_objective(y, 0.5, 0.2, s, np.eye(8)) == pytest.approx(np.vdot(r, r).real, rel=1e-10)


def test_g_minimized_at_true_doppler_without_interference():
    N = 16
    s = model.generate_unimodular_sequence(N)
    y = (0.8 + 0.1j) * s.samples * model.steering_vector(0.23, N)
    grid = np.linspace(-0.5, 0.5, 4001)
    vals = [est.doppler_objective_g(nu, y, s, np.eye(N)) for nu in grid]
    assert grid[int(np.argmin(vals))] == pytest.approx(0.23, abs=2.5e-4)


def test_full_precision_bypass_matches_filter_estimate(rng):
    s, m, R = stationary_setup(12)
    y = random_complex(rng, 12)
    e = est.estimate_full_precision(s, y, m)
    assert e.alpha_hat == pytest.approx(est.mmf_estimate_alpha(est.mmf_filter(s.samples, R), y, s.samples), rel=1e-12)


def test_noise_free_zero_threshold_returns_regularized_point():
    # every t * s consistent with the signs has zero unridged objective; the ridge
    # centre 0 selects the consistent multiple of s nearest the origin
    N = 12
    s = model.generate_unimodular_sequence(N)
    alpha = 1.0 + 0.7j
    y = alpha * s.samples
    obs = sampling.quantize_one_bit(y, np.zeros(N))
    R = 1e-3 * np.eye(N)
    e = est.estimate_stationary(s, None, obs, R=R)
    assert obs.is_consistent(e.y_hat)
    assert abs(e.alpha_hat) < abs(alpha)
    np.testing.assert_allclose(e.y_hat, e.alpha_hat * s.samples, atol=1e-6)
    tracked = est.estimate_stationary(s, None, sampling.quantize_one_bit(y, y - 0.01 * (1 + 1j)), R=R)
    assert abs(tracked.alpha_hat - alpha) < abs(e.alpha_hat - alpha)


def test_fixed_amplitude_error_shrinks_with_length():
    cfg = harness.ExperimentConfig(Nlist=[10, 100], alphaTruth=0.5 + 0.5j, trials=100, methods=["proposed"])
    res = harness.run_campaign(cfg, workers=1)
    assert res.cell(100, 0.1, "proposed").median < res.cell(10, 0.1, "proposed").median


def test_moving_reduces_to_stationary_at_zero_doppler():
    N = 100
    s = model.generate_unimodular_sequence(N, "quadraticPhase")
    R = 0.01 * np.eye(N)
    for seed in range(4):
        lam = sampling.design_threshold_marginal(s, 0, 1.0, R, seed=seed)[0]
        obs = sampling.quantize_one_bit(s.samples, lam)
        mov = est.estimate_moving(s, None, obs, est.EstimatorConfig(alpha_power=1.0), R=R)
        sta = est.estimate_stationary(s, None, obs, R=R)
        assert abs(mov.nu_hat) <= 1 / 1024
        # a residual Doppler of a few 1e-4 turns the phase by ~0.1 rad over the sequence
        assert abs(mov.alpha_hat - 1) < 0.2 and abs(sta.alpha_hat - 1) < 0.2


def test_bussgang_noise_free_scene_within_one_grid_cell():
    N = 200
    s = model.generate_unimodular_sequence(N, "quadraticPhase")
    alpha = 0.5 + 0.5j
    cell = np.hypot(6 / 100, 6 / 100)  # 101 x 101 grid over radius 3
    for seed in range(5):
        lam = sampling.design_threshold_marginal(s, 0, 1.0, 1e-9 * np.eye(N), seed=seed)[0]
        obs = sampling.quantize_one_bit(alpha * s.samples, lam)
        e = est.estimate_bussgang(s, 1e-6 * np.eye(N), obs)
        assert abs(e.alpha_hat - alpha) <= cell
