"""Closed-loop controllers: oracle, pure exploitation and non-myopic epsilon-greedy.

A run makes decisions at t = 0..T, so it records T+1 inputs and rewards and
T+2 states; totals over "T" therefore sum T+1 rewards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import History, Scenario, mean_reward, sample_reward, step_true
from .errors import ContractError, EmptySafeSetError, PolicyFailure
from .estimation import EstimatorConfig, ParameterEstimate, make_accumulator, mle_fit
from .mpc import SolverConfig, solve_vn
from .polytope import InvariantSetCertificate, contains, safe_input_set, sample_uniform

MODES = ("epsilon_greedy", "oracle", "pure_exploit")
ROLE_ORACLE, ROLE_LEARNER, ROLE_REWARD = 0, 1, 2
STATE_TOL = 1e-9


@dataclass(frozen=True)
class PolicyConfig:
    """Controller settings.

    ``theta_schedule`` optionally replaces the estimator by a scripted,
    piecewise-constant sequence ``[(t_start, theta), ...]``.
    """

    N: int = 1
    c: float = 5.0
    seed: int = 0
    refit_stride: int = 1
    mode: str = "epsilon_greedy"
    theta_schedule: tuple | None = None
    x0: tuple | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)

    def __post_init__(self):
        if self.N < 0:
            raise ContractError("N must be >= 0")
        if not self.c > 0:
            raise ContractError("c must be > 0")
        if self.refit_stride < 1:
            raise ContractError("refit_stride must be positive")
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}")

    @classmethod
    def from_dict(cls, d: dict | None) -> PolicyConfig:
        d = dict(d or {})
        kw = {k: d[k] for k in ("N", "c", "seed", "refit_stride", "mode") if k in d}
        if d.get("theta_schedule") is not None:
            kw["theta_schedule"] = tuple((int(t), tuple(np.atleast_1d(th).tolist())) for t, th in d["theta_schedule"])
        if d.get("x0") is not None:
            kw["x0"] = tuple(np.atleast_1d(d["x0"]).tolist())
        kw["solver"] = SolverConfig.from_dict(d.get("solver"))
        kw["estimator"] = EstimatorConfig.from_dict(d.get("estimator"))
        return cls(**kw)


@dataclass(frozen=True)
class StepDecision:
    input: np.ndarray
    explored: bool
    theta_used: np.ndarray | None
    mpc_value: float | None
    status: str = ""


def epsilon_schedule(t: int, c: float) -> float:
    """``min(1, c / t)``, equal to 1 at t = 0."""
    if t < 0:
        raise ContractError("t must be >= 0")
    if t == 0:
        return 1.0
    return min(1.0, c / t)


def scheduled_theta(schedule, t: int) -> np.ndarray:
    current = None
    for t_start, th in schedule:
        if t_start <= t:
            current = th
    if current is None:
        raise ContractError(f"theta schedule does not cover t={t}")
    return np.atleast_1d(np.asarray(current, dtype=float))


class EstimatorState:
    """Likelihood accumulator plus the warm-start chain of estimates."""

    def __init__(self, scn: Scenario, cfg: EstimatorConfig | None = None, stride: int = 1):
        self.scn = scn
        self.cfg = cfg or EstimatorConfig()
        self.stride = stride
        self.acc = make_accumulator(scn)
        self.estimate: ParameterEstimate | None = None
        self.last_fit: int | None = None
        self.refits = 0
        lo, hi = scn.Theta.bounding_box()
        # a single-point Theta leaves nothing to estimate
        self.fixed = lo if np.array_equal(lo, hi) else None

    def observe(self, t: int, x, u, r: float, x_next) -> None:
        self.acc.update(t, x, u, r, x_next)

    def current(self, t: int) -> np.ndarray:
        if self.fixed is not None:
            return self.fixed
        if self.acc.count < 2:
            if self.estimate is not None:
                return self.estimate.theta_hat
            return self.scn.Theta.chebyshev()[0]
        if self.estimate is None or self.last_fit is None or t - self.last_fit >= self.stride:
            self.estimate = mle_fit(self.scn, prev=self.estimate, cfg=self.cfg, acc=self.acc)
            self.last_fit = t
            self.refits += 1
        return self.estimate.theta_hat


def _exploit(scn, cert, x, t, theta, cfg: PolicyConfig) -> StepDecision:
    sol = solve_vn(scn, x, theta, cfg.N, cert, t, cfg.solver)
    if not sol.feasible:
        raise PolicyFailure(f"MPC infeasible at t={t}, x={x.tolist()}", state=x, t=t)
    return StepDecision(sol.inputs[0].copy(), False, np.asarray(theta, dtype=float), sol.value, sol.status)


def decide(
    scn: Scenario,
    cert: InvariantSetCertificate,
    hist: History,
    x,
    t: int,
    cfg: PolicyConfig,
    est_cache: EstimatorState | None,
    rng: np.random.Generator,
) -> StepDecision:
    """One step of the selected controller at state x and time t."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if cfg.mode == "oracle":
        return _exploit(scn, cert, x, t, scn.theta_true, cfg)
    if cfg.mode == "epsilon_greedy" and rng.random() < epsilon_schedule(t, cfg.c):
        try:
            safe = safe_input_set(
                x, scn.A, scn.B, cert.omega, scn.W, scn.U, tightened=cert.tightened(scn.W)
            )
        except EmptySafeSetError as exc:
            raise PolicyFailure(f"empty safe input set at t={t}", state=x, t=t) from exc
        return StepDecision(sample_uniform(safe, rng), True, None, None, "explore")
    if cfg.theta_schedule is not None:
        theta = scheduled_theta(cfg.theta_schedule, t)
    else:
        if est_cache is None:
            raise ContractError("estimator state required without a theta schedule")
        theta = est_cache.current(t)
    return _exploit(scn, cert, x, t, theta, cfg)


@dataclass
class RunDiagnostics:
    explorations: int = 0
    refits: int = 0
    statuses: dict = field(default_factory=dict)
    mean_rewards: list = field(default_factory=list)
    violations: int = 0


def stream(master_seed: int, replicate: int, role: int) -> np.random.Generator:
    """Private random stream for (master seed, replicate index, role)."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(replicate, role)))


def run(
    scn: Scenario,
    cert: InvariantSetCertificate,
    cfg: PolicyConfig,
    T: int,
    rng: np.random.Generator | None = None,
    reward_rng: np.random.Generator | None = None,
) -> tuple[History, RunDiagnostics]:
    """Closed loop with decisions at t = 0..T.

    ``rng`` drives exploration draws and ``reward_rng`` the reward noise;
    both default to streams derived from ``cfg.seed``.

    Raises:
        PolicyFailure: when no safe or feasible input exists, or a visited
            state leaves X.
    """
    if T < 0:
        raise ContractError("T must be >= 0")
    rng = rng if rng is not None else stream(cfg.seed, 0, ROLE_LEARNER)
    reward_rng = reward_rng if reward_rng is not None else stream(cfg.seed, 0, ROLE_REWARD)
    if cfg.x0 is not None:
        x = np.asarray(cfg.x0, dtype=float)
    elif scn.x0 is not None:
        x = scn.x0.copy()
    else:
        x = sample_uniform(cert.omega, rng)
    if not contains(scn.X, x, tol=STATE_TOL):
        raise ContractError("x0 must lie in X")
    hist = History.start(x)
    diag = RunDiagnostics()
    est = None
    if cfg.mode != "oracle" and cfg.theta_schedule is None:
        est = EstimatorState(scn, cfg.estimator, cfg.refit_stride)
    for t in range(T + 1):
        d = decide(scn, cert, hist, x, t, cfg, est, rng)
        r = sample_reward(scn, x, d.input, t, reward_rng)
        diag.mean_rewards.append(mean_reward(scn, x, d.input, None, t))
        x_next, violated = step_true(scn, x, d.input, t)
        if violated:
            diag.violations += 1
            raise PolicyFailure(f"state left X at t={t + 1}", state=x_next, t=t + 1)
        hist.append(d.input, r, x_next, d.explored, d.theta_used, d.mpc_value, d.status)
        if est is not None:
            est.observe(t, x, d.input, r, x_next)
        diag.explorations += int(d.explored)
        diag.statuses[d.status] = diag.statuses.get(d.status, 0) + 1
        x = x_next
    if est is not None:
        diag.refits = est.refits
    return hist, diag
