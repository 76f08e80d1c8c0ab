from __future__ import annotations

import numpy as np
import pytest

from lbmpc_lab import scenarios as S
from lbmpc_lab.dynamics import History
from lbmpc_lab.errors import ContractError
from lbmpc_lab.policy import PolicyConfig
from lbmpc_lab.regret import (
    RegretCurve,
    TrajectoryPair,
    bound_shape,
    cost_gap,
    dynamic_regret,
    geometric_grid,
    replicate,
    run_pair,
    scaling_fit,
)


def synthetic(t, rows):
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    return RegretCurve(np.asarray(t), rows, rows.mean(axis=0), np.zeros(rows.shape[1]), learner_cost=rows)


def test_geometric_grid():
    assert geometric_grid(0).tolist() == [0]
    assert geometric_grid(10).tolist() == [1, 2, 4, 8, 10]
    assert geometric_grid(16).tolist() == [1, 2, 4, 8, 16]
    with pytest.raises(ContractError):
        geometric_grid(-1)


def test_pinned_learner_matches_oracle():
    scn = S.lti_scalar()
    cert = S.certificate_for(scn)
    cfg = PolicyConfig(mode="pure_exploit", theta_schedule=((0, tuple(scn.theta_true)),))
    pair = run_pair(scn, cert, cfg, 30, master_seed=4)
    curve = dynamic_regret(pair, scn)
    assert np.allclose(curve.mean, 0.0, atol=1e-12)


def test_identical_histories_give_zero_curve():
    scn = S.example1()
    h = History.start([1.0])
    h.append([0.5], 0.1, [0.5], False)
    h.append([0.0], -0.2, [0.0], False)
    c = dynamic_regret(TrajectoryPair(h, h, {}), scn)
    assert c.mean.tolist() == [0.0, 0.0]


def test_single_step_gap():
    scn = S.example1()
    a = History.start([1.0])
    a.append([0.0], 0.0, [0.0], False)
    b = History.start([1.0])
    b.append([np.sqrt(0.3)], 0.0, [np.sqrt(0.3)], False)
    c = dynamic_regret(TrajectoryPair(a, b, {}), scn)
    assert c.mean[0] == pytest.approx(0.3)


def test_length_mismatch_rejected():
    scn = S.example1()
    a = History.start([1.0])
    a.append([0.0], 0.0, [0.0], False)
    with pytest.raises(ContractError):
        dynamic_regret(TrajectoryPair(a, History.start([1.0]), {}), scn)


def test_example1_oracle_totals_through_harness():
    scn = S.example1()
    cert = S.certificate_for(scn)
    p1 = run_pair(scn, cert, PolicyConfig(N=1, mode="oracle"), 1, 0)
    p0 = run_pair(scn, cert, PolicyConfig(N=0, mode="oracle"), 1, 0)
    c = cost_gap(dynamic_regret(p0, scn), dynamic_regret(p1, scn))
    assert dynamic_regret(p1, scn).oracle_cost[0, -1] == pytest.approx(0.75)
    assert dynamic_regret(p0, scn).oracle_cost[0, -1] == pytest.approx(1.0)
    assert c.mean[-1] == pytest.approx(0.25)


def test_example2_scripted_regret_is_linear():
    scn = S.example2()
    cert = S.certificate_for(scn)
    cfg = PolicyConfig(mode="pure_exploit", theta_schedule=((0, (1.0,)), (1, (0.0,))))
    pair = run_pair(scn, cert, cfg, 200, 0)
    c = dynamic_regret(pair, scn)
    inc = np.diff(c.mean[50:])
    assert np.all(inc > 0)
    assert np.allclose(inc, inc[0], rtol=1e-6)


def test_replicate_r1_zero_std_error():
    scn = S.example1()
    cert = S.certificate_for(scn)
    c = replicate(scn, cert, PolicyConfig(), 16, 1, 3)
    assert c.replicates == 1 and np.all(c.std_error == 0)


def test_replicate_bookkeeping_and_jobs_independence():
    scn = S.hvac(check_samples=2000)
    cert = S.certificate_for(scn)
    cfg = PolicyConfig(refit_stride=8)
    a = replicate(scn, cert, cfg, 40, 4, 9)
    b = replicate(scn, cert, cfg, 40, 4, 9, jobs=2)
    assert np.array_equal(a.per_replicate, b.per_replicate)
    assert np.allclose(a.mean, a.per_replicate.mean(axis=0))
    assert np.allclose(a.std_error, a.per_replicate.std(axis=0, ddof=1) / 2)
    assert not np.array_equal(a.per_replicate[0], a.per_replicate[1])
    assert a.t_grid.tolist() == [1, 2, 4, 8, 16, 32, 40]
    assert np.allclose(a.mean, (a.learner_cost - a.oracle_cost).mean(axis=0))


def test_std_error_follows_inverse_sqrt_r():
    # pure exploration keeps the per-replicate regret light-tailed; 4x replicates halve the error
    scn = S.example1()
    cert = S.certificate_for(scn)
    cfg = PolicyConfig(c=1e9)
    small = replicate(scn, cert, cfg, 32, 100, 10)
    large = replicate(scn, cert, cfg, 32, 400, 10)
    ratio = large.std_error[-1] / small.std_error[-1]
    assert 0.5 * 0.8 <= ratio <= 0.5 * 1.2


def test_grid_outside_range_rejected():
    scn = S.example1()
    with pytest.raises(ContractError):
        replicate(scn, S.certificate_for(scn), PolicyConfig(), 8, 1, 0, t_grid=[1, 9])
    with pytest.raises(ContractError):
        replicate(scn, S.certificate_for(scn), PolicyConfig(), 8, 0, 0)


# scaling


def test_rho_constant_for_bound_shape():
    t = geometric_grid(2**14)[2:]
    rep = scaling_fit(synthetic(t, bound_shape(t)))
    assert np.allclose(rep.rho, 1.0, atol=1e-12)
    assert rep.rho_nonincreasing()


def test_linear_curve_slope_one():
    t = geometric_grid(2**14)[2:]
    rep = scaling_fit(synthetic(t, t.astype(float)))
    assert rep.slope == pytest.approx(1.0, abs=0.01)
    assert np.all(np.diff(rep.rho[t >= 100]) > 0)


def test_negative_regret_reported_as_is():
    t = geometric_grid(2**12)[2:]
    rep = scaling_fit(synthetic(t, -np.sqrt(t)))
    assert np.all(rep.rho < 0) and np.isfinite(rep.slope)


def test_scaling_fit_needs_points():
    with pytest.raises(ContractError):
        scaling_fit(synthetic([1, 2, 4, 8], [1, 2, 3, 4]))


# cost gap


def test_cost_gap_identical_is_zero():
    t = [1, 2, 4]
    c = synthetic(t, [[1, 2, 3], [2, 3, 4]])
    g = cost_gap(c, c)
    assert np.all(g.mean == 0) and np.all(g.std_error == 0)


def test_cost_gap_grid_mismatch():
    with pytest.raises(ContractError):
        cost_gap(synthetic([1, 2], [1, 2]), synthetic([1, 3], [1, 2]))


def test_cost_gap_unpaired_combines_errors():
    a = synthetic([1, 2], [[1, 2], [3, 4]])
    b = synthetic([1, 2], [[0, 0], [0, 0], [0, 0]])
    g = cost_gap(a, b)
    assert g.per_replicate is None
    assert g.mean.tolist() == [2.0, 3.0]


def test_null_comparison_within_two_se():
    scn = S.hvac(check_samples=2000)
    cert = S.certificate_for(scn)
    cfg = PolicyConfig(refit_stride=16)
    a = replicate(scn, cert, cfg, 64, 12, 1)
    b = replicate(scn, cert, cfg, 64, 12, 2)
    g = cost_gap(a, b)
    assert abs(g.mean[-1]) <= 2 * g.std_error[-1] + 1e-12
