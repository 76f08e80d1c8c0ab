from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from lbmpc_lab import scenarios as S
from lbmpc_lab.dynamics import History, mean_reward
from lbmpc_lab.errors import ContractError, PolicyFailure
from lbmpc_lab.polytope import HPolytope, InvariantSetCertificate, contains
from lbmpc_lab.policy import (
    EstimatorState,
    PolicyConfig,
    decide,
    epsilon_schedule,
    run,
    stream,
)


def total_mean_reward(scn, hist):
    xs, us, _ = hist.arrays()
    return sum(mean_reward(scn, xs[i], us[i], None, i) for i in range(len(us)))


# schedule


@pytest.mark.parametrize("t,eps", [(0, 1.0), (1, 1.0), (5, 1.0), (10, 0.5), (50, 0.1)])
def test_epsilon_schedule(t, eps):
    assert epsilon_schedule(t, 5.0) == pytest.approx(eps)


def test_epsilon_schedule_rejects_negative_t():
    with pytest.raises(ContractError):
        epsilon_schedule(-1, 5.0)


def test_config_validation():
    with pytest.raises(ContractError):
        PolicyConfig(N=-1)
    with pytest.raises(ContractError):
        PolicyConfig(c=0.0)
    with pytest.raises(ContractError):
        PolicyConfig(mode="greedy-ish")


def test_config_from_dict():
    cfg = PolicyConfig.from_dict(
        {"N": 3, "c": 2.0, "mode": "oracle", "theta_schedule": [[0, 0.5], [10, [0.0]]], "x0": 0.2, "estimator": {"grid_points": 7}}
    )
    assert cfg.N == 3 and cfg.mode == "oracle"
    assert cfg.theta_schedule == ((0, (0.5,)), (10, (0.0,)))
    assert cfg.x0 == (0.2,) and cfg.estimator.grid_points == 7


# single decisions


def test_oracle_example1_decision():
    scn = S.example1()
    d = decide(scn, S.certificate_for(scn), History.start([1.0]), [1.0], 0, PolicyConfig(N=1, mode="oracle"), None, stream(0, 0, 1))
    assert d.input[0] == pytest.approx(0.5, abs=1e-8) and not d.explored


def test_oracle_example2_decision():
    scn = S.example2()
    d = decide(scn, S.certificate_for(scn), History.start([-0.5]), [-0.5], 7, PolicyConfig(mode="oracle"), None, stream(0, 0, 1))
    assert d.input[0] == pytest.approx(0.0, abs=1e-7)


@pytest.mark.parametrize("seed", range(20))
def test_first_step_always_explores(seed):
    scn = S.lti_scalar()
    cert = S.certificate_for(scn)
    est = EstimatorState(scn)
    d = decide(scn, cert, History.start(scn.x0), scn.x0, 0, PolicyConfig(), est, stream(seed, 0, 1))
    assert d.explored and d.theta_used is None and d.mpc_value is None
    assert contains(scn.U, d.input)


def test_oracle_ignores_rewards():
    scn = S.lti()
    cert = S.certificate_for(scn)
    hist, _ = run(scn, cert, PolicyConfig(mode="oracle", N=2), 5)
    cfg = PolicyConfig(mode="oracle", N=2)
    x = hist.states[-1]
    a = decide(scn, cert, hist, x, 6, cfg, None, stream(0, 0, 1))
    hist.rewards[:] = [1e6 * (i + 1) for i in range(len(hist.rewards))]
    b = decide(scn, cert, hist, x, 6, cfg, None, stream(0, 0, 1))
    assert np.array_equal(a.input, b.input)


# closed loop


def test_run_horizon_convention():
    scn = S.example1()
    hist, diag = run(scn, S.certificate_for(scn), PolicyConfig(mode="oracle"), 0)
    # decisions at t = 0..T
    assert len(hist) == 1 and len(hist.states) == 2


def test_run_rejects_negative_t():
    scn = S.example1()
    with pytest.raises(ContractError):
        run(scn, S.certificate_for(scn), PolicyConfig(), -1)


@pytest.mark.parametrize("N,total", [(0, -1.0), (1, -0.75)])
def test_example1_oracle_totals(N, total):
    scn = S.example1()
    hist, _ = run(scn, S.certificate_for(scn), PolicyConfig(N=N, mode="oracle"), 1)
    assert total_mean_reward(scn, hist) == pytest.approx(total, abs=1e-9)


def test_example2_oracle_stays_put():
    scn = S.example2()
    hist, _ = run(scn, S.certificate_for(scn), PolicyConfig(mode="oracle"), 20)
    assert np.allclose(np.array(hist.states).ravel(), -0.5, atol=1e-7)
    assert np.allclose(np.array(hist.inputs).ravel(), 0.0, atol=1e-7)


def test_scripted_theta_schedule():
    scn = S.example2()
    cfg = PolicyConfig(c=1e-9, theta_schedule=((0, (1.0,)),))
    hist, diag = run(scn, S.certificate_for(scn), cfg, 10, rng=stream(3, 0, 1))
    exploit = [u for u, e in zip(hist.inputs, hist.explored) if not e]
    assert exploit and all(th.tolist() == [1.0] for th, e in zip(hist.theta_used, hist.explored) if not e)


def test_run_deterministic():
    scn = S.hvac(check_samples=2000)
    cert = S.certificate_for(scn)
    cfg = PolicyConfig(seed=21)
    a, _ = run(scn, cert, cfg, 60)
    b, _ = run(scn, cert, cfg, 60)
    assert a.to_csv() == b.to_csv()


def test_run_safety_and_diagnostics():
    scn = S.lti()
    cert = S.certificate_for(scn)
    for seed in range(5):
        hist, diag = run(scn, cert, PolicyConfig(seed=seed, refit_stride=10), 80)
        assert all(contains(scn.X, x) for x in hist.states)
        assert all(contains(scn.U, u, tol=1e-9) for u in hist.inputs)
        assert diag.violations == 0
        assert diag.explorations == sum(hist.explored)
        assert sum(diag.statuses.values()) == len(hist)
        hist.check(scn)


def test_x0_outside_x_rejected():
    scn = S.example1()
    with pytest.raises(ContractError):
        run(scn, S.certificate_for(scn), PolicyConfig(x0=(5.0,)), 3)


def test_empty_safe_set_raises_policy_failure():
    scn = S.example1()
    cert = S.certificate_for(scn)
    # a certificate whose Omega is tiny leaves no input able to reach it from x = 1 when U shrinks
    tiny = replace(scn, U=HPolytope.box([0.5], [1.0]))
    bad = InvariantSetCertificate(HPolytope.box([-0.1], [0.1]), cert.gain_K, 0.0, 0.0, cert.offset)
    with pytest.raises(PolicyFailure):
        decide(tiny, bad, History.start([1.0]), [1.0], 0, PolicyConfig(), EstimatorState(tiny), stream(0, 0, 1))


def test_exploration_count_bound():
    # Bernoulli(min(1, c/t)) draws of the learner stream, 200 seeds at T=2000
    c, T = 5.0, 2000
    bound = 2 * c * math.log(T) + c
    counts = []
    for seed in range(200):
        rng = stream(seed, 0, 1)
        counts.append(sum(rng.random() < epsilon_schedule(t, c) for t in range(T + 1)))
    assert np.mean(counts) <= bound


def test_exploration_count_closed_loop():
    scn = S.example1()
    cert = S.certificate_for(scn)
    c, T = 5.0, 300
    counts = [run(scn, cert, PolicyConfig(seed=s, c=c), T)[1].explorations for s in range(10)]
    assert np.mean(counts) <= 2 * c * math.log(T) + c


def test_streams_are_independent_by_role():
    a = stream(1, 0, 0).random(4)
    b = stream(1, 0, 1).random(4)
    c = stream(1, 1, 0).random(4)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)
    assert np.array_equal(a, stream(1, 0, 0).random(4))
