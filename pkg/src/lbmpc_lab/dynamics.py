"""Plant, nominal and learned models, and reward simulation.

Residuals ``g(x, u, theta, t)`` and reward means ``h(x, u, theta, t)`` are
small objects carrying the function, optional analytic Jacobians and shape
flags the solver uses to pick a fast path.  Built-ins broadcast over leading
axes so likelihood evaluation can batch many parameter vectors at once.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np

from .errors import ContainmentError, ContractError, UnsupportedOperationError
from .polytope import HPolytope, contains, sample_uniform

FD_STEP = 1e-6
CONTAINMENT_SAMPLES = 10_000
STATE_TOL = 1e-9


# residuals ---------------------------------------------------------------


@dataclass(frozen=True)
class Residual:
    """Residual ``g(x, u, theta, t)`` of the true dynamics.

    Attributes:
        name: registry name (used in scenario JSON).
        fn: the residual, broadcasting over leading axes of x, u, theta.
        jac: optional ``(x, u, theta, t) -> (dg/dx, dg/du)`` for single points.
        affine: True when g is affine in (x, u) for fixed theta and t.
        params: JSON-serializable construction parameters.
    """

    name: str
    fn: Callable[..., np.ndarray]
    jac: Callable[..., tuple[np.ndarray, np.ndarray]] | None = None
    affine: bool = False
    params: dict = field(default_factory=dict)

    def __call__(self, x, u, theta, t: int = 0) -> np.ndarray:
        return self.fn(x, u, theta, t)

    def jacobians(self, x, u, theta, t: int = 0) -> tuple[np.ndarray, np.ndarray]:
        if self.jac is not None:
            return self.jac(x, u, theta, t)
        return _fd_jacobians(self.fn, x, u, theta, t)


@dataclass(frozen=True)
class RewardMean:
    """Expected reward ``h(x, u, theta, t)``.

    ``quadratic`` marks h as a (possibly indefinite) quadratic in (x, u) for
    fixed theta and t; together with an affine residual this makes the MPC
    objective quadratic in the inputs.
    """

    name: str
    fn: Callable[..., np.ndarray]
    grad: Callable[..., tuple[np.ndarray, np.ndarray]] | None = None
    quadratic: bool = False
    params: dict = field(default_factory=dict)
    hess: Callable[..., tuple[np.ndarray, np.ndarray, np.ndarray]] | None = None

    def __call__(self, x, u, theta, t: int = 0):
        return self.fn(x, u, theta, t)

    def hessians(self, x, u, theta, t: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(h_xx, h_xu, h_uu)``; differences of gradients when no analytic form is given."""
        if self.hess is not None:
            return self.hess(x, u, theta, t)
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        step = 1.0 if self.quadratic else FD_STEP
        n, q = x.size, u.size
        H = np.empty((n + q, n + q))
        for i in range(n + q):
            e = np.zeros(n + q)
            e[i] = step
            gp = np.concatenate(self.gradients(x + e[:n], u + e[n:], theta, t))
            gm = np.concatenate(self.gradients(x - e[:n], u - e[n:], theta, t))
            H[:, i] = (gp - gm) / (2 * step)
        H = 0.5 * (H + H.T)
        return H[:n, :n], H[:n, n:], H[n:, n:]

    def gradients(self, x, u, theta, t: int = 0) -> tuple[np.ndarray, np.ndarray]:
        if self.grad is not None:
            return self.grad(x, u, theta, t)
        gx, gu = _fd_jacobians(lambda *a: np.atleast_1d(self.fn(*a)), x, u, theta, t)
        return gx[0], gu[0]


def _fd_jacobians(fn, x, u, theta, t, step: float = FD_STEP):
    """Central-difference Jacobians of ``fn`` in x and u."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    f0 = np.atleast_1d(fn(x, u, theta, t))
    jx = np.empty((f0.size, x.size))
    ju = np.empty((f0.size, u.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        jx[:, i] = (np.atleast_1d(fn(x + e, u, theta, t)) - np.atleast_1d(fn(x - e, u, theta, t))) / (2 * step)
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = step
        ju[:, i] = (np.atleast_1d(fn(x, u + e, theta, t)) - np.atleast_1d(fn(x, u - e, theta, t))) / (2 * step)
    return jx, ju


def zero_residual(n: int = 1, q: int = 1) -> Residual:
    def fn(x, u, theta, t):
        return np.zeros_like(np.asarray(x, dtype=float))

    def jac(x, u, theta, t):
        return np.zeros((n, n)), np.zeros((n, q))

    return Residual("zero", fn, jac, affine=True, params={"n": n, "q": q})


def example2_residual(sign: float = -1.0) -> Residual:
    """``g = -(2 + sign*u) x^2`` (scalar); the built-in uses sign = -1.

    ``sign = +1`` gives the literal published form, whose range leaves W.
    """

    def fn(x, u, theta, t):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return -(2.0 + sign * u) * x**2

    def jac(x, u, theta, t):
        x0 = float(np.asarray(x).reshape(-1)[0])
        u0 = float(np.asarray(u).reshape(-1)[0])
        return np.array([[-2.0 * (2.0 + sign * u0) * x0]]), np.array([[-sign * x0**2]])

    return Residual("example2", fn, jac, affine=False, params={"sign": sign})


def lti_residual(n: int, q: int) -> Residual:
    """``g = Theta_A x + Theta_B u`` with theta = [vec(Theta_A), vec(Theta_B)] row-major."""

    def split(theta):
        theta = np.asarray(theta, dtype=float)
        TA = theta[..., : n * n].reshape(theta.shape[:-1] + (n, n))
        TB = theta[..., n * n : n * n + n * q].reshape(theta.shape[:-1] + (n, q))
        return TA, TB

    def fn(x, u, theta, t):
        TA, TB = split(theta)
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return np.einsum("...ij,...j->...i", TA, x) + np.einsum("...ij,...j->...i", TB, u)

    def jac(x, u, theta, t):
        TA, TB = split(theta)
        return TA.copy(), TB.copy()

    return Residual("lti", fn, jac, affine=True, params={"n": n, "q": q})


# reward means --------------------------------------------------------------


def _const_hess(hxx, hxu, huu):
    hxx, hxu, huu = (np.asarray(a, dtype=float) for a in (hxx, hxu, huu))

    def hess(x, u, theta, t):
        return hxx, hxu, huu

    return hess


def example1_reward() -> RewardMean:
    """``h = -(u^2 + (x - 1)^2)``."""

    def fn(x, u, theta, t):
        x = np.asarray(x, dtype=float)[..., 0]
        u = np.asarray(u, dtype=float)[..., 0]
        return -(u**2 + (x - 1.0) ** 2)

    def grad(x, u, theta, t):
        return np.array([-2.0 * (float(x[0]) - 1.0)]), np.array([-2.0 * float(u[0])])

    return RewardMean("example1", fn, grad, quadratic=True, hess=_const_hess([[-2.0]], [[0.0]], [[-2.0]]))


def example2_reward() -> RewardMean:
    """``h = -((u - theta)^2 + (x + 1/2)^2)``."""

    def fn(x, u, theta, t):
        x = np.asarray(x, dtype=float)[..., 0]
        u = np.asarray(u, dtype=float)[..., 0]
        th = np.asarray(theta, dtype=float)[..., 0]
        return -((u - th) ** 2 + (x + 0.5) ** 2)

    def grad(x, u, theta, t):
        th = float(np.asarray(theta).reshape(-1)[0])
        return np.array([-2.0 * (float(x[0]) + 0.5)]), np.array([-2.0 * (float(u[0]) - th)])

    return RewardMean("example2", fn, grad, quadratic=True, hess=_const_hess([[-2.0]], [[0.0]], [[-2.0]]))


def quadratic_reward(Q: Any, R: Any) -> RewardMean:
    """``h = x^T Q x + u^T R u`` with fixed Q and R."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))

    def fn(x, u, theta, t):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return np.einsum("...i,ij,...j->...", x, Q, x) + np.einsum("...i,ij,...j->...", u, R, u)

    def grad(x, u, theta, t):
        return (Q + Q.T) @ x, (R + R.T) @ u

    return RewardMean(
        "quadratic",
        fn,
        grad,
        quadratic=True,
        params={"Q": Q.tolist(), "R": R.tolist()},
        hess=_const_hess(Q + Q.T, np.zeros((Q.shape[0], R.shape[0])), R + R.T),
    )


# reward model ----------------------------------------------------------------


@dataclass(frozen=True)
class RewardModel:
    """Reward distribution with mean ``mean_h``.

    Families: ``gaussian`` (standard deviation ``sigma``), ``bernoulli``
    (mean must lie in [0, 1]) and ``custom`` (``density(r, x, u, theta, t)``
    plus a ``sampler(mean, rng)``).
    """

    mean_h: RewardMean
    family: str = "gaussian"
    sigma: float = 1.0
    density: Callable[..., float] | None = None
    sampler: Callable[..., float] | None = None

    def __post_init__(self):
        if self.family not in ("gaussian", "bernoulli", "custom"):
            raise ContractError(f"unknown reward family {self.family!r}")
        if self.family == "gaussian" and not self.sigma >= 0:
            raise ContractError("sigma must be nonnegative")
        if self.family == "custom" and (self.density is None or self.sampler is None):
            raise ContractError("custom family needs density and sampler")

    def log_density(self, r, mean, x=None, u=None, theta=None, t: int = 0):
        """Log density of r given the mean; broadcasts over r and mean for the built-in families."""
        r = np.asarray(r, dtype=float)
        mean = np.asarray(mean, dtype=float)
        if self.family == "gaussian":
            if self.sigma == 0:
                raise ContractError("log density undefined for sigma = 0")
            s = self.sigma
            return -((r - mean) ** 2) / (2 * s * s) - math.log(s * math.sqrt(2 * math.pi))
        if self.family == "bernoulli":
            with np.errstate(divide="ignore"):
                return np.where(r > 0.5, np.log(mean), np.log1p(-mean))
        return np.log(self.density(r, x, u, theta, t))

    def sample(self, mean: float, rng: np.random.Generator) -> float:
        if self.family == "gaussian":
            if self.sigma == 0:
                return float(mean)
            return float(mean + self.sigma * rng.standard_normal())
        if self.family == "bernoulli":
            return float(rng.random() < mean)
        return float(self.sampler(mean, rng))

    def kl(self, mean_a, mean_b):
        """Per-step KL between the distributions with the given means."""
        mean_a = np.asarray(mean_a, dtype=float)
        mean_b = np.asarray(mean_b, dtype=float)
        if self.family == "gaussian":
            if self.sigma == 0:
                raise ContractError("KL undefined for sigma = 0")
            return (mean_a - mean_b) ** 2 / (2 * self.sigma**2)
        if self.family == "bernoulli":
            a, b = mean_a, mean_b
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = np.where(a > 0, a * np.log(a / b), 0.0)
                t2 = np.where(a < 1, (1 - a) * np.log((1 - a) / (1 - b)), 0.0)
            return t1 + t2
        raise UnsupportedOperationError("no closed-form KL registered for a custom reward family")


# scenario ---------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    """Complete problem instance.

    ``nominal_offset`` is a known constant drift added to the nominal model
    (the center of W for scenarios whose residual has a nonzero mean); it is
    zero for the worked examples.  ``gain_K``/``feedback_offset`` define the
    feedback law used for the invariant set.  ``mle_state_source`` selects how
    the likelihood treats states: ``"regenerate"`` rolls states forward from
    x0 under each candidate theta, ``"recorded"`` uses the recorded states and
    enforces the recorded transitions through a narrow penalty.
    """

    name: str
    A: np.ndarray
    B: np.ndarray
    residual: Residual
    theta_true: np.ndarray
    Theta: HPolytope
    W: HPolytope
    X: HPolytope
    U: HPolytope
    reward: RewardModel
    gain_K: np.ndarray
    feedback_offset: np.ndarray
    nominal_offset: np.ndarray
    x0: np.ndarray | None = None
    mle_state_source: str = "regenerate"
    transition_sigma: float = 1e-3
    lipschitz_metadata: dict | None = None
    exogenous: Any = None
    check_samples: int = CONTAINMENT_SAMPLES

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        B = np.asarray(self.B, dtype=float).reshape(n, -1)
        q = B.shape[1]
        K = np.asarray(self.gain_K, dtype=float).reshape(q, n)
        obj = object.__setattr__
        obj(self, "A", A)
        obj(self, "B", B)
        obj(self, "gain_K", K)
        obj(self, "theta_true", np.atleast_1d(np.asarray(self.theta_true, dtype=float)))
        obj(self, "feedback_offset", np.asarray(self.feedback_offset, dtype=float).reshape(q))
        obj(self, "nominal_offset", np.asarray(self.nominal_offset, dtype=float).reshape(n))
        if self.x0 is not None:
            obj(self, "x0", np.atleast_1d(np.asarray(self.x0, dtype=float)))
        for arr in (self.A, self.B, self.gain_K, self.theta_true, self.feedback_offset, self.nominal_offset):
            arr.setflags(write=False)
        if self.X.dim != n or self.W.dim != n or self.U.dim != q:
            raise ContractError("set dimensions inconsistent with A and B")
        if self.Theta.dim != self.theta_true.size:
            raise ContractError("Theta dimension does not match theta_true")
        if not contains(self.Theta, self.theta_true, tol=STATE_TOL):
            raise ContractError("theta_true is outside Theta")
        if self.mle_state_source not in ("regenerate", "recorded"):
            raise ContractError("mle_state_source must be 'regenerate' or 'recorded'")
        if self.check_samples:
            check_containment(self, self.check_samples)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def q(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.theta_true.size

    def with_overrides(self, **kw) -> Scenario:
        return replace(self, **kw)


def check_containment(scn: Scenario, n_samples: int = CONTAINMENT_SAMPLES, seed: int = 0) -> float:
    """Check g(x, u, theta_true, t) in W on sampled (x, u, t); returns the worst violation.

    Samples cover X x U uniformly plus all vertex pairs when both sets have few
    vertices.  Time indices are drawn from one day of 96 steps for
    time-varying residuals.

    Raises:
        ContainmentError: if any sample leaves W by more than 1e-9.
    """
    rng = np.random.default_rng(seed)
    xs = _sample_many(scn.X, rng, n_samples)
    us = _sample_many(scn.U, rng, n_samples)
    ts = rng.integers(0, 96, size=n_samples)
    if scn.X.dim <= 3 and scn.U.dim <= 3:
        vx, vu = scn.X.vertices(), scn.U.vertices()
        pairs_x = np.repeat(vx, len(vu), axis=0)
        pairs_u = np.tile(vu, (len(vx), 1))
        xs = np.vstack([xs, pairs_x])
        us = np.vstack([us, pairs_u])
        ts = np.concatenate([ts, np.zeros(len(pairs_x), dtype=int)])
    worst = 0.0
    H, h = scn.W.normals, scn.W.offsets
    for t in np.unique(ts):
        sel = ts == t
        g = scn.residual(xs[sel], us[sel], scn.theta_true, int(t))
        g = np.asarray(g, dtype=float).reshape(-1, scn.n)
        worst = max(worst, float(np.max(g @ H.T - h)))
    if worst > STATE_TOL:
        raise ContainmentError(
            f"residual leaves W by {worst:.3g} on sampled (x, u) in scenario {scn.name!r}"
        )
    return max(0.0, worst)


def _sample_many(P: HPolytope, rng: np.random.Generator, k: int) -> np.ndarray:
    bounds = P.box_bounds()
    if bounds is not None:
        return rng.uniform(bounds[0], bounds[1], size=(k, P.dim))
    return np.array([sample_uniform(P, rng) for _ in range(k)])


# simulation -------------------------------------------------------------------


def step_true(scn: Scenario, x, u, t: int = 0) -> tuple[np.ndarray, bool]:
    """True transition ``A x + B u + g(x, u, theta_true, t)``.

    Returns:
        ``(x_next, violation)`` where ``violation`` flags x_next outside X.
        The state is never clamped.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    nxt = scn.A @ x + scn.B @ u + np.asarray(scn.residual(x, u, scn.theta_true, t)).reshape(scn.n)
    return nxt, not contains(scn.X, nxt, tol=STATE_TOL)


def rollout_learned(scn: Scenario, x, inputs, theta, t: int = 0) -> np.ndarray:
    """States ``x~_0..x~_k`` of the learned model under ``inputs``; shape (k+1, n)."""
    U = _as_inputs(scn, inputs)
    theta = np.asarray(theta, dtype=float)
    out = np.empty((len(U) + 1, scn.n))
    out[0] = np.atleast_1d(np.asarray(x, dtype=float))
    for k, u in enumerate(U):
        g = np.asarray(scn.residual(out[k], u, theta, t + k)).reshape(scn.n)
        out[k + 1] = scn.A @ out[k] + scn.B @ u + g
    return out


def rollout_nominal(scn: Scenario, x, inputs, *, drift: bool = True) -> np.ndarray:
    """States of the nominal linear model; ``drift=False`` drops the known offset."""
    U = _as_inputs(scn, inputs)
    d = scn.nominal_offset if drift else np.zeros(scn.n)
    out = np.empty((len(U) + 1, scn.n))
    out[0] = np.atleast_1d(np.asarray(x, dtype=float))
    for k, u in enumerate(U):
        out[k + 1] = scn.A @ out[k] + scn.B @ u + d
    return out


def _as_inputs(scn: Scenario, inputs) -> np.ndarray:
    U = np.asarray(inputs, dtype=float)
    if U.ndim == 0:
        U = U.reshape(1, 1)
    if U.ndim == 1:
        U = U.reshape(-1, scn.q)
    if U.shape[0] == 0:
        raise ContractError("input sequence must be nonempty")
    return U


def mean_reward(scn: Scenario, x, u, theta=None, t: int = 0) -> float:
    theta = scn.theta_true if theta is None else theta
    return float(scn.reward.mean_h(np.atleast_1d(x), np.atleast_1d(u), theta, t))


def sample_reward(scn: Scenario, x, u, t: int, rng: np.random.Generator) -> float:
    """Draw r_t with mean h(x, u, theta_true, t)."""
    return scn.reward.sample(mean_reward(scn, x, u, None, t), rng)


# history -------------------------------------------------------------------------


@dataclass
class History:
    """Information set: states x_0..x_t, inputs, rewards and exploration flags.

    Optional per-step diagnostics (``theta_used``, ``mpc_value``, ``status``)
    travel with the history so the CSV export is self-contained.
    """

    states: list = field(default_factory=list)
    inputs: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    explored: list = field(default_factory=list)
    theta_used: list = field(default_factory=list)
    mpc_value: list = field(default_factory=list)
    status: list = field(default_factory=list)

    @classmethod
    def start(cls, x0) -> History:
        return cls(states=[np.atleast_1d(np.asarray(x0, dtype=float)).copy()])

    def __len__(self) -> int:
        return len(self.inputs)

    def append(self, u, r, x_next, explored: bool, theta=None, value=None, status: str = "") -> None:
        self.inputs.append(np.atleast_1d(np.asarray(u, dtype=float)).copy())
        self.rewards.append(float(r))
        self.states.append(np.atleast_1d(np.asarray(x_next, dtype=float)).copy())
        self.explored.append(bool(explored))
        self.theta_used.append(None if theta is None else np.atleast_1d(np.asarray(theta, dtype=float)).copy())
        self.mpc_value.append(None if value is None else float(value))
        self.status.append(status)

    def check(self, scn: Scenario | None = None, tol: float = STATE_TOL) -> None:
        if not (len(self.states) == len(self.inputs) + 1 == len(self.rewards) + 1 == len(self.explored) + 1):
            raise ContractError("history length invariant violated")
        if scn is not None:
            if len(self.states) and not np.all(contains(scn.X, np.array(self.states), tol=tol)):
                raise ContractError("recorded state outside X")
            if len(self.inputs) and not np.all(contains(scn.U, np.array(self.inputs), tol=tol)):
                raise ContractError("recorded input outside U")

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = self.states[0].size
        q = self.inputs[0].size if self.inputs else 0
        return (
            np.array(self.states).reshape(-1, n),
            np.array(self.inputs).reshape(-1, q),
            np.array(self.rewards, dtype=float),
        )

    # CSV -----------------------------------------------------------------

    def to_csv(self, p: int | None = None) -> str:
        """Serialize with ``repr`` floats so reading back is bit-exact.

        Columns: t, s_t, x1..xn, u1..uq, r, theta_hat1..p, mpc_value, solve_status.
        Row t holds x_t and, for t < T, the decision taken at x_t; the final
        row carries only the terminal state.
        """
        n = self.states[0].size
        q = self.inputs[0].size if self.inputs else 0
        if p is None:
            p = next((th.size for th in self.theta_used if th is not None), 0)
        header = ["t", "s_t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(q)]
        header += ["r"] + [f"theta_hat{i + 1}" for i in range(p)] + ["mpc_value", "solve_status"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for t, x in enumerate(self.states):
            row = [str(t)]
            if t < len(self.inputs):
                th = self.theta_used[t] if t < len(self.theta_used) else None
                val = self.mpc_value[t] if t < len(self.mpc_value) else None
                row.append("1" if self.explored[t] else "0")
                row += [repr(float(v)) for v in x]
                row += [repr(float(v)) for v in self.inputs[t]]
                row.append(repr(self.rewards[t]))
                row += [repr(float(v)) for v in th] if th is not None else [""] * p
                row.append("" if val is None else repr(val))
                row.append(self.status[t] if t < len(self.status) else "")
            else:
                row.append("")
                row += [repr(float(v)) for v in x]
                row += [""] * (q + 1 + p + 2)
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> History:
        """Inverse of ``to_csv``; lines starting with ``#`` are skipped."""
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        rows = list(csv.reader(lines))
        header, body = rows[0], rows[1:]
        xi = [i for i, h in enumerate(header) if h.startswith("x")]
        ui = [i for i, h in enumerate(header) if h.startswith("u")]
        ti = [i for i, h in enumerate(header) if h.startswith("theta_hat")]
        ri = header.index("r")
        si = header.index("s_t")
        vi = header.index("mpc_value") if "mpc_value" in header else None
        st = header.index("solve_status") if "solve_status" in header else None
        hist = cls()
        for row in body:
            hist.states.append(np.array([float(row[i]) for i in xi]))
            if row[si] == "":
                continue
            hist.inputs.append(np.array([float(row[i]) for i in ui]))
            hist.rewards.append(float(row[ri]))
            hist.explored.append(row[si] == "1")
            hist.theta_used.append(np.array([float(row[i]) for i in ti]) if ti and row[ti[0]] != "" else None)
            hist.mpc_value.append(float(row[vi]) if vi is not None and row[vi] != "" else None)
            hist.status.append(row[st] if st is not None else "")
        hist.check()
        return hist


def inputs_grid(U: HPolytope, per_dim: int) -> np.ndarray:
    """Regular grid over the bounding box of U, filtered to U."""
    lo, hi = U.bounding_box()
    axes = [np.linspace(a, b, per_dim) for a, b in zip(lo, hi)]
    pts = np.array(np.meshgrid(*axes, indexing="ij")).reshape(len(axes), -1).T
    return pts[contains(U, pts, tol=1e-12)]


def as_sequence(values: Sequence) -> np.ndarray:
    return np.asarray(values, dtype=float)
