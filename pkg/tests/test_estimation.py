from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lbmpc_lab import scenarios as S
from lbmpc_lab.dynamics import (
    History,
    RewardModel,
    example2_reward,
    mean_reward,
    rollout_learned,
    sample_reward,
    step_true,
)
from lbmpc_lab.errors import ContractError
from lbmpc_lab.estimation import (
    EstimatorConfig,
    HistoryLikelihood,
    accumulator_from_history,
    concentration_curve,
    estimate_path,
    fit_concentration,
    gaussian_nll_reference,
    loglog_slope,
    mle_fit,
    neg_log_likelihood,
    nll_batch,
    per_step_kl,
    trajectory_kl,
)
from lbmpc_lab.polytope import HPolytope


def flat_scenario(sigma=1.0):
    return S.scenario_from_dict(
        {
            "name": "flat",
            "A": [[0.5]],
            "B": [[1.0]],
            "theta_true": [0.0],
            "Theta": {"box": {"lo": [0.0], "hi": [0.0]}},
            "W": {"box": {"lo": [0.0], "hi": [0.0]}},
            "X": {"box": {"lo": [-1.0], "hi": [1.0]}},
            "U": {"box": {"lo": [-1.0], "hi": [1.0]}},
            "reward": {"name": "quadratic", "Q": [[0.0]], "R": [[0.0]], "sigma": sigma},
        }
    )


def random_history(scn, T, rng, reward_scn=None):
    reward_scn = reward_scn or scn
    lo, hi = scn.U.bounding_box()
    x = scn.x0.copy()
    hist = History.start(x)
    for t in range(T):
        u = rng.uniform(lo, hi)
        r = sample_reward(reward_scn, x, u, t, rng)
        x, _ = step_true(scn, x, u, t)
        hist.append(u, r, x, True)
    return hist


# likelihood


def test_two_sample_hand_case():
    scn = flat_scenario()
    hist = History.start([0.0])
    hist.append([0.0], 0.0, [0.0], False)
    hist.append([0.0], 1.0, [0.0], False)
    assert neg_log_likelihood(scn, hist, [0.0]) == pytest.approx(0.5 + 2 * math.log(math.sqrt(2 * math.pi)), abs=1e-12)


def test_gaussian_nll_matches_reference():
    scn = S.lti_scalar()
    rng = np.random.default_rng(1)
    hist = random_history(scn, 30, rng)
    theta = np.array([0.02, -0.05])
    xs, us, rs = hist.arrays()
    xr = rollout_learned(scn, xs[0], us, theta)
    means = [mean_reward(scn, xr[i], us[i], theta, i) for i in range(len(us))]
    ref = gaussian_nll_reference(rs, means, scn.reward.sigma)
    assert neg_log_likelihood(scn, hist, theta) == pytest.approx(ref, rel=1e-12)


def test_nll_batch_matches_single_evaluations():
    scn = S.example2()
    hist = random_history(scn, 25, np.random.default_rng(2))
    thetas = np.linspace(0, 1, 7)[:, None]
    batch = nll_batch(scn, hist, thetas)
    single = [neg_log_likelihood(scn, hist, th) for th in thetas]
    assert np.allclose(batch, single, rtol=1e-12)


def test_residual_term_vanishes_for_noiseless_true_theta():
    scn = S.lti_scalar()
    quiet = replace(scn, reward=replace(scn.reward, sigma=0.0))
    hist = random_history(scn, 40, np.random.default_rng(3), reward_scn=quiet)
    nll = neg_log_likelihood(scn, hist, scn.theta_true)
    assert nll == pytest.approx(40 * math.log(math.sqrt(2 * math.pi)), abs=1e-9)


def test_hvac_accumulator_matches_generic_likelihood():
    scn = S.hvac(check_samples=2000)
    hist = random_history(scn, 300, np.random.default_rng(4))
    acc = accumulator_from_history(scn, hist)
    generic = HistoryLikelihood(scn)
    xs, us, rs = hist.arrays()
    for i in range(len(us)):
        generic.update(i, xs[i], us[i], rs[i], xs[i + 1])
    lo, hi = scn.Theta.bounding_box()
    thetas = np.random.default_rng(5).uniform(lo, hi, size=(20, 3))
    assert np.allclose(acc.nll(thetas), generic.nll(thetas), rtol=1e-9)


def test_hvac_regenerate_mode_matches_generic():
    scn = S.hvac(check_samples=2000, mle_state_source="regenerate")
    hist = random_history(scn, 200, np.random.default_rng(6))
    acc = accumulator_from_history(scn, hist)
    lo, hi = scn.Theta.bounding_box()
    thetas = np.random.default_rng(7).uniform(lo, hi, size=(10, 3))
    assert np.allclose(acc.nll(thetas), nll_batch(scn, hist, thetas), rtol=1e-9)


# estimator


def test_noiseless_recovery():
    scn = S.lti_scalar()
    quiet = replace(scn, reward=replace(scn.reward, sigma=0.0))
    hist = random_history(scn, 60, np.random.default_rng(8), reward_scn=quiet)
    est = mle_fit(scn, hist)
    assert np.linalg.norm(est.theta_hat - scn.theta_true) < 1e-4


def test_noiseless_recovery_example2():
    scn = S.example2()
    quiet = replace(scn, reward=replace(scn.reward, sigma=0.0))
    hist = random_history(scn, 30, np.random.default_rng(9), reward_scn=quiet)
    est = mle_fit(scn, hist)
    assert est.theta_hat[0] == pytest.approx(0.0, abs=1e-4)


def test_single_point_theta():
    scn = S.example1()
    hist = random_history(scn, 10, np.random.default_rng(10))
    est = mle_fit(scn, hist)
    assert est.theta_hat.tolist() == [0.0]
    assert est.nll == pytest.approx(neg_log_likelihood(scn, hist, [0.0]), rel=1e-12)


def test_estimate_within_theta_and_deterministic():
    scn = S.hvac(check_samples=2000)
    hist = random_history(scn, 200, np.random.default_rng(11))
    a = mle_fit(scn, hist)
    b = mle_fit(scn, hist)
    assert np.array_equal(a.theta_hat, b.theta_hat) and a.nll == b.nll
    lo, hi = scn.Theta.bounding_box()
    assert np.all(a.theta_hat >= lo) and np.all(a.theta_hat <= hi)
    assert a.nll <= a.grid_nll


def test_warm_start_reaches_cold_optimum():
    scn = S.hvac(check_samples=2000)
    hist = random_history(scn, 400, np.random.default_rng(12))
    path = estimate_path(scn, hist, [200, 400])
    cold = mle_fit(scn, hist)
    assert path[400].nll == pytest.approx(cold.nll, abs=1e-4)


def test_estimator_config_from_dict():
    cfg = EstimatorConfig.from_dict({"grid_points": 5, "warm_step": 0.1, "ignored": 1})
    assert cfg.grid_points == 5 and cfg.warm_step == 0.1 and cfg.expand == 2.0


def test_hvac_consistency_trend():
    scn = S.hvac(check_samples=2000)
    e100, e1000 = [], []
    for seed in range(50):
        hist = random_history(scn, 1000, np.random.default_rng(100 + seed))
        path = estimate_path(scn, hist, [100, 1000])
        e100.append(np.linalg.norm(path[100].theta_hat - scn.theta_true))
        e1000.append(np.linalg.norm(path[1000].theta_hat - scn.theta_true))
    assert np.median(e1000) < np.median(e100)


# KL


def test_kl_identical_is_zero():
    scn = S.lti()
    U = np.random.default_rng(0).uniform(-1, 1, (8, 1))
    assert trajectory_kl(scn, scn.theta_true, scn.theta_true, scn.x0, U) == 0.0


def test_kl_single_step_closed_form():
    # mean gap of 2 at one step with sigma = 1
    scn = S.example2(Theta=HPolytope.box([-3.0], [3.0]), reward=RewardModel(example2_reward(), "gaussian", 1.0))
    x0 = [-0.5]
    u = [[1.0]]
    ha = mean_reward(scn, x0, u[0], [1.0 + math.sqrt(2.0)])
    hb = mean_reward(scn, x0, u[0], [1.0])
    assert hb - ha == pytest.approx(2.0)
    assert trajectory_kl(scn, [1.0 + math.sqrt(2.0)], [1.0], x0, u) == pytest.approx(2.0)


def test_kl_additive_over_segments():
    # theta enters only the reward here, so both rollouts share the handoff state
    scn = S.example2()
    U = np.random.default_rng(1).uniform(-1, 1, (10, 1))
    ta, tb = [0.3], [0.8]
    xs = rollout_learned(scn, scn.x0, U, ta)
    assert np.array_equal(xs, rollout_learned(scn, scn.x0, U, tb))
    total = trajectory_kl(scn, ta, tb, scn.x0, U)
    split = trajectory_kl(scn, ta, tb, scn.x0, U[:4]) + trajectory_kl(scn, ta, tb, xs[4], U[4:], t0=4)
    assert total == pytest.approx(split, rel=1e-13)
    assert total == pytest.approx(per_step_kl(scn, ta, tb, scn.x0, U).sum(), rel=1e-14)


def test_kl_rejects_theta_outside():
    scn = S.example2()
    with pytest.raises(ContractError):
        trajectory_kl(scn, [0.0], [5.0], [-0.5], [[0.0]])


# concentration diagnostics


def test_concentration_zero_for_exact_estimates():
    scn = S.lti_scalar()
    hist = random_history(scn, 50, np.random.default_rng(13))
    curve = concentration_curve(scn, hist, {t: scn.theta_true for t in (10, 20, 50)})
    assert np.all(curve.values == 0.0)


def test_fit_concentration_recovers_model():
    t = np.array([10.0, 20, 50, 100, 200, 500])
    v = 3.0 / np.sqrt(t - 1) + 0.1
    curve = fit_concentration(t, v)
    assert curve.a == pytest.approx(3.0) and curve.b == pytest.approx(0.1)
    assert isinstance(curve.a, float)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 0), st.floats(0.1, 10))
def test_loglog_slope_of_power_law(k, c):
    t = np.array([10.0, 100, 1000, 10000])
    assert loglog_slope(t, c * t**k, eps=0.0) == pytest.approx(k, abs=1e-9)
