"""N-step dynamic regret: paired oracle/learner runs, replicates and scaling fits.

Regret is measured in expected reward: both trajectories are scored with the
mean reward h(x, u, theta_true), never with the realized noisy rewards. The
cumulative value at horizon T sums the gaps over decisions t = 0..T.
"""

from __future__ import annotations

import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import History, Scenario, mean_reward, sample_reward
from .errors import ContractError
from .estimation import loglog_slope
from .policy import ROLE_LEARNER, ROLE_ORACLE, ROLE_REWARD, PolicyConfig, run, stream
from .polytope import InvariantSetCertificate, sample_uniform

SLOPE_EPS = 1e-9


@dataclass
class TrajectoryPair:
    """Oracle and learner histories started from the same state."""

    oracle_hist: History
    learner_hist: History
    seed_record: dict


@dataclass
class RegretCurve:
    """Cumulative regret on a grid of horizons.

    ``per_replicate`` has one row per replicate. ``learner_cost`` and
    ``oracle_cost`` hold cumulative expected costs (negated mean rewards) on
    the same grid, and ``realized`` the regret computed from noisy rewards.
    """

    t_grid: np.ndarray
    per_replicate: np.ndarray
    mean: np.ndarray
    std_error: np.ndarray
    learner_cost: np.ndarray | None = None
    oracle_cost: np.ndarray | None = None
    realized: np.ndarray | None = None

    @property
    def cumulative_regret(self) -> np.ndarray:
        return self.mean

    @property
    def replicates(self) -> int:
        return self.per_replicate.shape[0]


@dataclass(frozen=True)
class ScalingReport:
    t_grid: np.ndarray
    mean: np.ndarray
    rho: np.ndarray
    rho_median: np.ndarray
    slope: float
    fit_points: int

    def rho_nonincreasing(self, top: int = 3, median: bool = True) -> bool:
        r = (self.rho_median if median else self.rho)[-top:]
        return bool(np.all(np.diff(r) <= 0))


def geometric_grid(T: int) -> np.ndarray:
    """Powers of two up to T, plus T itself."""
    if T < 0:
        raise ContractError("T must be >= 0")
    pts = {T}
    k = 1
    while k <= T:
        pts.add(k)
        k *= 2
    return np.array(sorted(pts), dtype=int)


def _stats(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = M.mean(axis=0)
    if M.shape[0] < 2:
        return mean, np.zeros_like(mean)
    return mean, M.std(axis=0, ddof=1) / np.sqrt(M.shape[0])


# paired runs -------------------------------------------------------------------------


_ORACLE_CACHE: dict = {}


def _oracle_key(scn, cfg: PolicyConfig, x0: np.ndarray, T: int):
    return (id(scn), cfg.N, cfg.solver, x0.tobytes(), T)


def _oracle_history(scn, cert, cfg: PolicyConfig, x0, T: int, reward_rng, use_cache: bool) -> History:
    """Oracle closed loop from x0.

    With deterministic dynamics the oracle trajectory does not depend on any
    random stream, so states and inputs are reused across replicates and only
    the reward noise is redrawn.
    """
    ocfg = replace(cfg, mode="oracle", theta_schedule=None, x0=tuple(np.atleast_1d(x0).tolist()))
    key = _oracle_key(scn, cfg, np.asarray(x0, dtype=float), T)
    hit = _ORACLE_CACHE.get(key) if use_cache else None
    if hit is None or hit[0] is not scn:
        hist, _ = run(scn, cert, ocfg, T, rng=stream(cfg.seed, 0, ROLE_ORACLE), reward_rng=reward_rng)
        if use_cache:
            _ORACLE_CACHE[key] = (scn, hist)
        return hist
    base = hit[1]
    hist = History.start(base.states[0])
    for t, u in enumerate(base.inputs):
        r = sample_reward(scn, base.states[t], u, t, reward_rng)
        hist.append(u, r, base.states[t + 1], False, base.theta_used[t], base.mpc_value[t], base.status[t])
    return hist


def run_pair(
    scn: Scenario,
    cert: InvariantSetCertificate,
    cfg: PolicyConfig,
    T: int,
    master_seed: int,
    replicate: int = 0,
    *,
    cache_oracle: bool = True,
) -> TrajectoryPair:
    """Oracle and learner runs with the same horizon N from a shared x0.

    Streams come from ``SeedSequence(master_seed, spawn_key=(replicate, role))``:
    the oracle role draws x0 (when the scenario has none) and the oracle's
    reward noise, the learner role drives exploration and the reward role
    the learner's reward noise.
    """
    oracle_rng = stream(master_seed, replicate, ROLE_ORACLE)
    if cfg.x0 is not None:
        x0 = np.asarray(cfg.x0, dtype=float)
    elif scn.x0 is not None:
        x0 = scn.x0.copy()
    else:
        x0 = sample_uniform(cert.omega, oracle_rng)
    oracle_hist = _oracle_history(scn, cert, cfg, x0, T, oracle_rng, cache_oracle)
    lcfg = replace(cfg, x0=tuple(x0.tolist()))
    learner_hist, _ = run(
        scn,
        cert,
        lcfg,
        T,
        rng=stream(master_seed, replicate, ROLE_LEARNER),
        reward_rng=stream(master_seed, replicate, ROLE_REWARD),
    )
    seeds = {
        "master": int(master_seed),
        "replicate": int(replicate),
        "oracle": [replicate, ROLE_ORACLE],
        "learner": [replicate, ROLE_LEARNER],
        "reward": [replicate, ROLE_REWARD],
    }
    return TrajectoryPair(oracle_hist, learner_hist, seeds)


def mean_rewards(scn: Scenario, hist: History) -> np.ndarray:
    """h(x_t, u_t, theta_true, t) along a history."""
    return np.array([mean_reward(scn, hist.states[t], u, None, t) for t, u in enumerate(hist.inputs)])


def dynamic_regret(pair: TrajectoryPair, scn: Scenario, t_grid=None) -> RegretCurve:
    """Single-replicate cumulative regret; full resolution unless a grid is given."""
    ho = mean_rewards(scn, pair.oracle_hist)
    hl = mean_rewards(scn, pair.learner_hist)
    if len(ho) != len(hl):
        raise ContractError("oracle and learner histories differ in length")
    if len(ho) == 0:
        raise ContractError("empty histories")
    cum = np.cumsum(ho - hl)
    grid = np.arange(len(cum)) if t_grid is None else np.asarray(t_grid, dtype=int)
    row = cum[grid][None, :]
    realized = np.cumsum(np.array(pair.oracle_hist.rewards) - np.array(pair.learner_hist.rewards))[grid][None, :]
    return RegretCurve(
        t_grid=grid,
        per_replicate=row,
        mean=row[0].copy(),
        std_error=np.zeros(row.shape[1]),
        learner_cost=-np.cumsum(hl)[grid][None, :],
        oracle_cost=-np.cumsum(ho)[grid][None, :],
        realized=realized,
    )


# replicates ---------------------------------------------------------------------------


_WORK: tuple | None = None


def _one(i: int) -> tuple[np.ndarray, ...]:
    scn, cert, cfg, T, master, grid = _WORK
    c = dynamic_regret(run_pair(scn, cert, cfg, T, master, i), scn, grid)
    return c.per_replicate[0], c.learner_cost[0], c.oracle_cost[0], c.realized[0]


def replicate(
    scn: Scenario,
    cert: InvariantSetCertificate,
    cfg: PolicyConfig,
    T: int,
    R: int,
    master_seed: int,
    *,
    jobs: int = 1,
    t_grid=None,
) -> RegretCurve:
    """R independent pairs aggregated on a geometric grid.

    Replicate i uses spawn key (i, role) under ``master_seed``. Results are
    reduced in replicate order, so the output does not depend on ``jobs``.
    """
    global _WORK
    if R < 1:
        raise ContractError("R must be >= 1")
    grid = geometric_grid(T) if t_grid is None else np.asarray(t_grid, dtype=int)
    if grid.min() < 0 or grid.max() > T:
        raise ContractError("grid points must lie in [0, T]")
    _WORK = (scn, cert, cfg, T, master_seed, grid)
    try:
        if jobs > 1 and R > 1:
            # fork keeps the scenario's callables without pickling them
            with ProcessPoolExecutor(jobs, mp_context=mp.get_context("fork")) as ex:
                rows = list(ex.map(_one, range(R)))
        else:
            rows = [_one(i) for i in range(R)]
    finally:
        _WORK = None
    M, LC, OC, RZ = (np.array(x) for x in zip(*rows))
    mean, se = _stats(M)
    return RegretCurve(grid, M, mean, se, learner_cost=LC, oracle_cost=OC, realized=RZ)


# analysis ---------------------------------------------------------------------------------


def bound_shape(t) -> np.ndarray:
    """sqrt(T) (log T)^2 with the natural log."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sqrt(t) * np.log(t) ** 2


def scaling_fit(curve: RegretCurve, min_t: int = 100) -> ScalingReport:
    """rho(T) = regret / (sqrt(T) (log T)^2) and the log-log slope of mean regret.

    The slope is fitted on grid points with T >= ``min_t``, using
    ``|regret| + 1e-9`` so that zero or negative values stay finite.
    """
    t = np.asarray(curve.t_grid, dtype=float)
    sel = t >= min_t
    if sel.sum() < 4:
        raise ContractError("need at least 4 grid points with T >= 100")
    denom = bound_shape(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(t > 1, curve.mean / denom, np.nan)
        rho_med = np.where(t > 1, np.median(curve.per_replicate, axis=0) / denom, np.nan)
    slope = loglog_slope(t[sel], curve.mean[sel], eps=SLOPE_EPS)
    return ScalingReport(t, np.asarray(curve.mean), rho, rho_med, slope, int(sel.sum()))


@dataclass(frozen=True)
class CostGap:
    t_grid: np.ndarray
    mean: np.ndarray
    std_error: np.ndarray
    per_replicate: np.ndarray | None


def cost_gap(curve_a: RegretCurve, curve_b: RegretCurve) -> CostGap:
    """Cumulative expected cost of a minus that of b on a shared grid.

    Replicates are paired by index when both curves have the same count,
    otherwise the standard errors are combined as for independent samples.
    """
    if curve_a.learner_cost is None or curve_b.learner_cost is None:
        raise ContractError("curves carry no cost series")
    if not np.array_equal(curve_a.t_grid, curve_b.t_grid):
        raise ContractError("cost series are on different grids")
    A, B = curve_a.learner_cost, curve_b.learner_cost
    if A.shape == B.shape:
        D = A - B
        mean, se = _stats(D)
        return CostGap(np.asarray(curve_a.t_grid), mean, se, D)
    ma, sa = _stats(A)
    mb, sb = _stats(B)
    return CostGap(np.asarray(curve_a.t_grid), ma - mb, np.sqrt(sa**2 + sb**2), None)
