from __future__ import annotations

import numpy as np
import pytest

from lbmpc_lab import scenarios as S
from lbmpc_lab.dynamics import (
    History,
    RewardModel,
    _fd_jacobians,
    example1_reward,
    example2_residual,
    lti_residual,
    mean_reward,
    rollout_learned,
    rollout_nominal,
    sample_reward,
    step_true,
)
from lbmpc_lab.errors import ContainmentError, ContractError
from lbmpc_lab.hvac import HvacParams, exogenous_signal
from lbmpc_lab.polytope import HPolytope, contains


def scalar_scenario(a: float, **kw):
    d = {
        "name": "scalar",
        "A": [[a]],
        "B": [[1.0]],
        "theta_true": [0.0],
        "Theta": {"box": {"lo": [0.0], "hi": [0.0]}},
        "W": {"box": {"lo": [0.0], "hi": [0.0]}},
        "X": {"box": {"lo": [-1.0], "hi": [1.0]}},
        "U": {"box": {"lo": [-1.0], "hi": [1.0]}},
        "reward": {"name": "quadratic", "Q": [[-1.0]], "R": [[-1.0]], "sigma": 0.0},
        **kw,
    }
    return S.scenario_from_dict(d)


# step_true


def test_step_example1():
    scn = S.example1()
    x, viol = step_true(scn, [1.0], [0.5])
    assert x.tolist() == [0.5] and not viol


def test_step_example2_fixed_point():
    scn = S.example2()
    x, viol = step_true(scn, [-0.5], [0.0])
    assert x.tolist() == [-0.5] and not viol


def test_step_hvac_matches_model_arithmetic():
    scn = S.hvac()
    p = HvacParams()
    for t in (0, 17, 60):
        v = exogenous_signal("v", t, p)
        q = exogenous_signal("q", t, p)
        x, _ = step_true(scn, [22.0], [0.25], t)
        assert x[0] == pytest.approx(0.64 * 22 - 2.64 * 0.25 + 0.10 * v + q, abs=1e-12)


def test_step_hvac_literal_constants_leave_x():
    # v=6.98, q=17 read literally: the sum is 31.118, far outside [20, 24]
    x = 0.64 * 22 - 2.64 * 0.25 + 0.10 * 6.98 + 17
    assert x == pytest.approx(31.118)
    assert not contains(S.hvac().X, [x])


def test_step_flags_violation_without_clamping():
    scn = S.example1()
    x, viol = step_true(scn, [0.0], [1.0])
    assert not viol
    scn2 = S.lti_scalar()
    x, viol = step_true(scn2, [2.0], [0.5])
    assert x[0] > 2.0 and viol


# rollouts


def test_rollout_learned_zero_residual_is_nominal():
    scn = S.example1()
    U = np.array([[0.3], [-0.2], [0.1]])
    assert np.array_equal(rollout_learned(scn, [1.0], U, [0.0]), rollout_nominal(scn, [1.0], U))


def test_rollout_learned_lti_closed_form():
    scn = S.lti()
    theta = np.array([0.01, 0.02, -0.03, 0.04, 0.05, -0.01])
    A = scn.A + theta[:4].reshape(2, 2)
    B = scn.B + theta[4:].reshape(2, 1)
    x0 = np.array([1.0, -2.0])
    U = np.array([[0.5], [-0.3], [0.2]])
    xs = rollout_learned(scn, x0, U, theta)
    for k in range(len(U) + 1):
        ref = np.linalg.matrix_power(A, k) @ x0
        for j in range(k):
            ref = ref + np.linalg.matrix_power(A, k - j - 1) @ B @ U[j]
        assert np.allclose(xs[k], ref, atol=1e-12)


def test_rollout_learned_true_theta_reproduces_plant():
    for scn in (S.example2(), S.lti_scalar(), S.hvac()):
        rng = np.random.default_rng(0)
        lo, hi = scn.U.bounding_box()
        U = rng.uniform(lo, hi, size=(5, scn.q))
        x = scn.x0.copy()
        xs = rollout_learned(scn, x, U, scn.theta_true, t=3)
        for k in range(5):
            x, _ = step_true(scn, x, U[k], 3 + k)
            assert np.array_equal(x, xs[k + 1])


def test_rollout_nominal_examples():
    assert rollout_nominal(S.example1(), [1.0], [[0.3]]).ravel().tolist() == [1.0, 0.3]
    half = scalar_scenario(0.5)
    assert rollout_nominal(half, [1.0], [[0.0], [0.0]]).ravel().tolist() == [1.0, 0.5, 0.25]
    hv = S.hvac()
    xs = rollout_nominal(hv, [22.0], [[0.0], [0.0]], drift=False).ravel()
    assert xs == pytest.approx([22.0, 14.08, 9.0112], abs=1e-12)


def test_rollout_nominal_with_drift_adds_w_centre():
    hv = S.hvac()
    xs = rollout_nominal(hv, [22.0], [[0.0]]).ravel()
    assert xs[1] == pytest.approx(14.08 + hv.nominal_offset[0])


# rewards


def test_sample_reward_sigma_zero_is_mean():
    scn = S.example1(reward=RewardModel(example1_reward(), "gaussian", 0.0))
    rng = np.random.default_rng(0)
    assert sample_reward(scn, [1.0], [0.5], 0, rng) == mean_reward(scn, [1.0], [0.5])


def test_hvac_reward_vanishes_at_setpoint_off_peak():
    scn = S.hvac()
    p = HvacParams()
    t = 10  # off-peak
    v = exogenous_signal("v", t, p)
    x = p.gamma2 + v
    assert mean_reward(scn, [x], [0.0], None, t) == pytest.approx(0.0, abs=1e-12)


def test_reward_clt():
    scn = S.example1()
    rng = np.random.default_rng(7)
    h = mean_reward(scn, [0.2], [0.1])
    draws = np.array([sample_reward(scn, [0.2], [0.1], 0, rng) for _ in range(100_000)])
    assert abs(draws.mean() - h) < 4 / np.sqrt(100_000)


def test_gaussian_kl_closed_form():
    rm = S.example1().reward
    assert rm.kl(0.0, 2.0) == pytest.approx(2.0)


# derivatives


def test_analytic_jacobians_match_finite_differences():
    for res, x, u, th in (
        (example2_residual(-1.0), np.array([-0.3]), np.array([0.4]), np.array([0.5])),
        (lti_residual(2, 1), np.array([0.3, -0.7]), np.array([0.2]), np.arange(6) / 10),
    ):
        jx, ju = res.jacobians(x, u, th, 0)
        fx, fu = _fd_jacobians(res.fn, x, u, th, 0)
        assert np.allclose(jx, fx, atol=1e-6) and np.allclose(ju, fu, atol=1e-6)


# scenario contracts


def test_containment_checked_at_construction():
    with pytest.raises(ContainmentError):
        S.example2(residual=example2_residual(+1.0))


def test_theta_true_must_lie_in_theta():
    with pytest.raises(ContractError):
        S.example2(theta_true=np.array([2.0]))


def test_preset_hvac_passes_containment():
    scn = S.hvac(check_samples=10_000)
    assert scn.W.is_box


# history


def test_history_invariants_and_csv_roundtrip():
    scn = S.lti()
    rng = np.random.default_rng(3)
    hist = History.start(scn.x0)
    x = scn.x0
    for t in range(20):
        u = rng.uniform(-1, 1, 1)
        r = sample_reward(scn, x, u, t, rng)
        x, _ = step_true(scn, x, u, t)
        hist.append(u, r, x, bool(t % 2), rng.normal(size=6) if t % 3 else None, float(t) / 3, "optimal")
    hist.check(scn)
    back = History.from_csv(hist.to_csv())
    assert len(back) == len(hist)
    for a, b in zip(hist.states, back.states):
        assert np.array_equal(a, b)
    assert back.rewards == hist.rewards
    assert back.explored == hist.explored
    assert back.mpc_value == hist.mpc_value
    for a, b in zip(hist.theta_used, back.theta_used):
        assert (a is None and b is None) or np.array_equal(a, b)


def test_history_single_state():
    hist = History.start([0.0])
    hist.check()
    assert len(hist) == 0 and len(hist.states) == 1
    assert History.from_csv(hist.to_csv()).states[0].tolist() == [0.0]


def test_history_length_violation_detected():
    hist = History.start([0.0])
    hist.inputs.append(np.zeros(1))
    with pytest.raises(ContractError):
        hist.check()


def test_scenario_json_polytope_forms():
    scn = scalar_scenario(0.5, W={"normals": [[1.0], [-1.0]], "offsets": [0.0, 0.0]})
    assert isinstance(scn.W, HPolytope)
    assert scn.W.bounding_box()[1][0] == 0.0
