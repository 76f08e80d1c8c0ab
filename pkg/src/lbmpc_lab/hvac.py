"""HVAC benchmark: single-zone temperature with peak pricing.

State x is the zone temperature (°C), input u the cooling duty cycle.  The
plant is ``x+ = k_r x - k_c u + k_v v_t + q_t`` with outdoor temperature v_t
and internal load q_t both sinusoidal over a 96-step day, and cost
``gamma1 p_t u + (x - gamma2 - v_t)^2``.  The unknown parameter vector is
``theta = [q_mean, gamma1, gamma2]``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .dynamics import Residual, RewardMean, RewardModel, Scenario
from .errors import ContractError
from .polytope import HPolytope

PERIOD = 96
_HXX = np.array([[-2.0]])
_ZERO11 = np.zeros((1, 1))


def _phase_for_peak(step: float, period: int = PERIOD) -> float:
    """Phase putting the sine maximum at ``step``."""
    return math.pi / 2 - 2 * math.pi * step / period


@dataclass(frozen=True)
class HvacParams:
    """Constants of the HVAC scenario.

    The signal means are assigned so the plant can be held inside
    [20, 24]: with an outdoor mean of 17 °C and a load mean of 6.98 °C the
    equilibrium band over u in [0, 0.5] is about [20.4, 24.1] °C.
    """

    k_r: float = 0.64
    k_c: float = 2.64
    k_v: float = 0.10
    sigma: float = 1.0
    gamma1: float = 1.0
    gamma2: float = 5.0
    v_mean: float = 17.0
    q_mean: float = 6.98
    v_amp: float = 1.5
    q_amp: float = 0.5
    v_phase: float = _phase_for_peak(60)
    q_phase: float = _phase_for_peak(52)
    price_offpeak: float = 1.0
    price_peak: float = 3.0
    peak_window: tuple = (48, 72)
    period: int = PERIOD
    x_bounds: tuple = (20.0, 24.0)
    u_bounds: tuple = (0.0, 0.5)
    theta_lo: tuple = (5.0, 0.0, 3.0)
    theta_hi: tuple = (9.0, 3.0, 7.0)
    closed_loop_pole: float = 0.5
    x0: float | None = None

    def __post_init__(self):
        if self.period != 24 * 60 // 15:
            raise ContractError("period must be 96 steps of 15 minutes")
        if not self.x_bounds[0] < self.x_bounds[1] or not self.u_bounds[0] < self.u_bounds[1]:
            raise ContractError("bounds must be ordered")
        if any(lo > hi for lo, hi in zip(self.theta_lo, self.theta_hi)):
            raise ContractError("Theta bounds must be ordered")

    @classmethod
    def from_dict(cls, d: dict) -> HvacParams:
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ContractError(f"unknown HVAC parameters: {sorted(unknown)}")
        d = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @property
    def theta_true(self) -> np.ndarray:
        return np.array([self.q_mean, self.gamma1, self.gamma2])


def exogenous_signal(kind: str, t, params: HvacParams):
    """Value of v (outdoor temperature), q (internal load) or p (price) at step t.

    ``t`` may be an integer or an integer array.
    """
    t = np.asarray(t)
    if np.any(t < 0):
        raise ContractError("time index must be nonnegative")
    phase_t = 2 * np.pi * ((t % params.period) / params.period)
    if kind == "v":
        out = params.v_mean + params.v_amp * np.sin(phase_t + params.v_phase)
    elif kind == "q":
        out = params.q_mean + params.q_amp * np.sin(phase_t + params.q_phase)
    elif kind == "p":
        tod = t % params.period
        lo, hi = params.peak_window
        out = np.where((tod >= lo) & (tod < hi), params.price_peak, params.price_offpeak)
    else:
        raise ContractError(f"unknown signal kind {kind!r}")
    return float(out) if out.ndim == 0 else out


class HvacSignals:
    """Precomputed one-period tables of v, q-shape (load minus its mean) and p."""

    def __init__(self, params: HvacParams):
        self.params = params
        steps = np.arange(params.period)
        self.v = exogenous_signal("v", steps, params)
        self.q_shape = exogenous_signal("q", steps, params) - params.q_mean
        self.p = exogenous_signal("p", steps, params)

    def at(self, t: int) -> tuple[float, float, float]:
        i = int(t) % self.params.period
        return float(self.v[i]), float(self.q_shape[i]), float(self.p[i])

    def make_accumulator(self, scn: Scenario):
        return HvacLikelihood(self, scn.mle_state_source, scn.transition_sigma, scn.reward.sigma, scn.x0)


def build_hvac_scenario(
    params: HvacParams | None = None, *, check_samples: int = 10_000, mle_state_source: str = "recorded"
) -> Scenario:
    """Construct the HVAC scenario with an affine feedback law for its invariant set.

    W is the exact one-period range of ``k_v v_t + q_t`` at the true load
    mean; the nominal model carries W's center as a known drift, and the
    feedback ``u = K x + k0`` places the closed-loop pole at
    ``closed_loop_pole`` with equilibrium at the middle of the state band.
    """
    P = params or HvacParams()
    sig = HvacSignals(P)
    kr, kc, kv = P.k_r, P.k_c, P.k_v

    def g_fn(x, u, theta, t):
        v, qs, _ = sig.at(t)
        theta = np.asarray(theta, dtype=float)
        x = np.asarray(x, dtype=float)
        val = kv * v + qs + theta[..., 0:1]
        return np.broadcast_to(val, np.broadcast_shapes(x.shape, val.shape)).copy()

    def g_jac(x, u, theta, t):
        return np.zeros((1, 1)), np.zeros((1, 1))

    def h_fn(x, u, theta, t):
        v, _, p = sig.at(t)
        theta = np.asarray(theta, dtype=float)
        x = np.asarray(x, dtype=float)[..., 0]
        u = np.asarray(u, dtype=float)[..., 0]
        return -(theta[..., 1] * p * u + (x - theta[..., 2] - v) ** 2)

    def h_grad(x, u, theta, t):
        v, _, p = sig.at(t)
        dev = float(x[0]) - float(theta[2]) - v
        return np.array([-2.0 * dev]), np.array([-float(theta[1]) * p])

    residual = Residual("hvac", g_fn, g_jac, affine=True, params=P.to_dict())

    def h_hess(x, u, theta, t):
        return _HXX, _ZERO11, _ZERO11

    mean_h = RewardMean("hvac", h_fn, h_grad, quadratic=True, params=P.to_dict(), hess=h_hess)

    g_range = kv * sig.v + P.q_mean + sig.q_shape
    w_lo, w_hi = float(g_range.min()), float(g_range.max())
    if not (np.isfinite(w_lo) and np.isfinite(w_hi)):
        raise ContractError("residual range is not finite")
    w_mid = 0.5 * (w_lo + w_hi)
    K = (kr - P.closed_loop_pole) / kc
    x_mid = 0.5 * (P.x_bounds[0] + P.x_bounds[1])
    # equilibrium x_mid = pole * x_mid - k_c k0 + w_mid
    k0 = (w_mid - (1 - P.closed_loop_pole) * x_mid) / kc
    x0 = x_mid if P.x0 is None else P.x0

    return Scenario(
        name="hvac",
        A=np.array([[kr]]),
        B=np.array([[-kc]]),
        residual=residual,
        theta_true=P.theta_true,
        Theta=HPolytope.box(P.theta_lo, P.theta_hi),
        W=HPolytope.box([w_lo], [w_hi]),
        X=HPolytope.box([P.x_bounds[0]], [P.x_bounds[1]]),
        U=HPolytope.box([P.u_bounds[0]], [P.u_bounds[1]]),
        reward=RewardModel(mean_h, "gaussian", P.sigma),
        gain_K=np.array([[K]]),
        feedback_offset=np.array([k0]),
        nominal_offset=np.array([w_mid]),
        x0=np.array([x0]),
        mle_state_source=mle_state_source,
        exogenous=sig,
        check_samples=check_samples,
    )


@dataclass
class HvacLikelihood:
    """Exact incremental Gaussian NLL for the HVAC scenario.

    The reward residual ``r_i - h_i(theta)`` is linear in a fixed feature
    vector ``phi_i`` with coefficients polynomial in theta, so
    ``sum_i (r_i - h_i)^2 = c(theta)^T S c(theta)`` with ``S = sum phi phi^T``.
    Updating S is O(1) per step and evaluating a batch of G parameter vectors
    is O(G) independent of the history length.  S is rebuilt from the stored
    features every ``refresh`` steps to bound rounding drift.

    In ``"regenerate"`` mode states are rolled forward from x0 under theta,
    ``x_i = alpha_i + q s_i``; in ``"recorded"`` mode the recorded states are
    used and every recorded transition contributes
    ``(x_{i+1} - f(x_i, u_i, theta))^2 / (2 sigma_x^2)``.
    """

    signals: HvacSignals
    mode: str = "recorded"
    transition_sigma: float = 1e-3
    sigma: float = 1.0
    x0: np.ndarray | None = None
    refresh: int = 256
    _phi: list = field(default_factory=list)
    _trans: list = field(default_factory=list)
    _S: np.ndarray | None = None
    _T: np.ndarray = field(default_factory=lambda: np.zeros(3))
    _alpha: float | None = None
    _s: float = 0.0
    count: int = 0

    def update(self, t: int, x, u, r: float, x_next) -> None:
        P = self.signals.params
        v, qs, p = self.signals.at(t)
        x = float(np.asarray(x).reshape(-1)[0])
        u = float(np.asarray(u).reshape(-1)[0])
        x_next = float(np.asarray(x_next).reshape(-1)[0])
        m = p * u
        if self.mode == "regenerate":
            if self._alpha is None:
                self._alpha = x
                self._s = 0.0
            a, s = self._alpha, self._s
            e = a - v
            phi = np.array([r + e * e, m, s * s, 1.0, e * s, e, s])
            self._alpha = P.k_r * a - P.k_c * u + P.k_v * v + qs
            self._s = P.k_r * s + 1.0
        else:
            e = x - v
            phi = np.array([r + e * e, m, e, 1.0])
            b = x_next - (P.k_r * x - P.k_c * u + P.k_v * v + qs)
            self._trans.append(b)
            self._T += np.array([b * b, b, 1.0])
        self._phi.append(phi)
        self.count += 1
        if self._S is None:
            self._S = np.zeros((phi.size, phi.size))
        if self.count % self.refresh == 0:
            F = np.array(self._phi)
            self._S = F.T @ F
            tr = np.array(self._trans)
            if tr.size:
                self._T = np.array([tr @ tr, tr.sum(), float(tr.size)])
        else:
            self._S += np.outer(phi, phi)

    def coefficients(self, thetas: np.ndarray) -> np.ndarray:
        q, g1, g2 = thetas[:, 0], thetas[:, 1], thetas[:, 2]
        if self.mode == "regenerate":
            C = np.empty((len(thetas), 7))
            C[:, 0] = 1.0
            C[:, 1] = g1
            C[:, 2] = q * q
            C[:, 3] = g2 * g2
            C[:, 4] = 2 * q
            C[:, 5] = -2 * g2
            C[:, 6] = -2 * q * g2
            return C
        C = np.empty((len(thetas), 4))
        C[:, 0] = 1.0
        C[:, 1] = g1
        C[:, 2] = -2 * g2
        C[:, 3] = g2 * g2
        return C

    def nll(self, thetas) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        if self.count == 0:
            return np.zeros(len(thetas))
        C = self.coefficients(thetas)
        quad = ((C @ self._S) * C).sum(axis=1)
        out = quad * (0.5 / self.sigma**2) + self.count * math.log(self.sigma * math.sqrt(2 * math.pi))
        if self.mode == "recorded":
            q = thetas[:, 0]
            sbb, sb, n = self._T
            out += (sbb - 2 * q * sb + n * q * q) * (0.5 / self.transition_sigma**2)
        return out
