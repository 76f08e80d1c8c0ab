"""Finite-horizon learning-based MPC.

The program maximizes the learned-model N-step reward
``J = sum_{k=0}^{N} h(x~_k, u_k, theta, t+k)`` over ``z = (u_0, ..., u_N)``
subject to constraints that are all affine in z:

* ``u_k in U`` for k = 0..N,
* ``A x + B u_0 in Omega ⊖ W`` (first-step safety, imposed for every N >= 0),
* ``x̄_k in X`` for k = 1..N along the nominal model.

It is solved by a primal active-set ascent method: Newton steps in the null
space of the working constraints when the reduced Hessian is negative
definite, projected-gradient steps otherwise, ratio tests to stay feasible
and multiplier checks to release constraints.  Gradients come from an
adjoint pass through the learned rollout.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linprog

from .dynamics import Scenario, rollout_learned, rollout_nominal
from .errors import ContractError
from .polytope import CERT_TOL, HPolytope, InvariantSetCertificate, contains, sample_uniform

_FD_HESS_STEP = 1e-5
_ACTIVE_TOL = 1e-10


@dataclass(frozen=True)
class SolverConfig:
    """Solver knobs.

    Attributes:
        tol: stationarity tolerance on the projected gradient (scaled by
            ``max(1, |grad J|)`` at the solution).
        max_iter: iteration cap per start.
        multi_starts: number of starts (center of the safe input set plus
            uniform samples from it).
        seed: seed of the start sampler; fixed so solves are pure functions.
        tie_tol: values within this of the best count as ties, broken by the
            lexicographically smallest input sequence.
    """

    tol: float = 1e-8
    max_iter: int = 10_000
    multi_starts: int = 8
    seed: int = 0
    tie_tol: float = 1e-9

    @classmethod
    def from_dict(cls, d: dict | None) -> SolverConfig:
        d = dict(d or {})
        return cls(**{k: d[k] for k in ("tol", "max_iter", "multi_starts", "seed", "tie_tol") if k in d})


@dataclass(frozen=True)
class MpcSolution:
    inputs: np.ndarray
    learned_states: np.ndarray
    nominal_states: np.ndarray
    value: float
    status: str
    iterations: int
    stationarity: float = float("nan")

    @property
    def first_input(self) -> np.ndarray:
        return self.inputs[0]

    @property
    def feasible(self) -> bool:
        return self.status != "infeasible"


@dataclass
class _Constraints:
    """``G z <= b0 - F x`` for a fixed scenario, certificate and horizon."""

    G: np.ndarray
    b0: np.ndarray
    F: np.ndarray
    first_rows: slice
    tightened: HPolytope

    def rhs(self, x: np.ndarray) -> np.ndarray:
        return self.b0 - self.F @ x


_CONSTRAINT_CACHE: dict[tuple, tuple] = {}


def _constraints(scn: Scenario, cert: InvariantSetCertificate, N: int) -> _Constraints:
    key = (id(scn), id(cert), N)
    hit = _CONSTRAINT_CACHE.get(key)
    if hit is not None and hit[0] is scn and hit[1] is cert:
        return hit[2]
    n, q = scn.n, scn.q
    m = (N + 1) * q
    A, B, d = scn.A, scn.B, scn.nominal_offset
    T = cert.tightened(scn.W)
    rows_G, rows_b, rows_F = [], [], []
    HU, hU = scn.U.normals, scn.U.offsets
    for k in range(N + 1):
        Gk = np.zeros((len(hU), m))
        Gk[:, k * q : (k + 1) * q] = HU
        rows_G.append(Gk)
        rows_b.append(hU)
        rows_F.append(np.zeros((len(hU), n)))
    start = sum(len(r) for r in rows_b)
    G1 = np.zeros((T.n_constraints, m))
    G1[:, :q] = T.normals @ B
    rows_G.append(G1)
    rows_b.append(T.offsets.copy())
    rows_F.append(T.normals @ A)
    first = slice(start, start + T.n_constraints)
    HX, hX = scn.X.normals, scn.X.offsets
    # x̄_k = A^k x + sum_j A^{k-1-j} (B u_j + d)
    Apow = [np.eye(n)]
    for _ in range(N + 1):
        Apow.append(Apow[-1] @ A)
    for k in range(1, N + 1):
        Gk = np.zeros((len(hX), m))
        drift = np.zeros(n)
        for j in range(k):
            M = Apow[k - 1 - j]
            Gk[:, j * q : (j + 1) * q] = HX @ M @ B
            drift += M @ d
        rows_G.append(Gk)
        rows_b.append(hX - HX @ drift)
        rows_F.append(HX @ Apow[k])
    G = np.vstack(rows_G)
    b0 = np.concatenate(rows_b)
    F = np.vstack(rows_F)
    out = _Constraints(G, b0, F, first, T)
    _CONSTRAINT_CACHE[key] = (scn, cert, out)
    return out


def n_step_reward(scn: Scenario, x, inputs, theta, t: int = 0) -> float:
    """Learned-model N-step reward of ``inputs`` (length N+1) from x."""
    U = np.asarray(inputs, dtype=float).reshape(-1, scn.q)
    xs = rollout_learned(scn, x, U, theta, t)
    return float(sum(float(scn.reward.mean_h(xs[k], U[k], theta, t + k)) for k in range(len(U))))


class _Objective:
    """Value, adjoint gradient and Hessian of J(z) for fixed (x, theta, t).

    With an affine residual and a quadratic reward J is an exact quadratic
    ``0.5 z^T H z + c^T z + c0``; H and c are then assembled once from the
    affine rollout maps and every later evaluation is a matrix product.
    """

    def __init__(self, scn: Scenario, x: np.ndarray, theta: np.ndarray, t: int, N: int):
        self.scn, self.x, self.theta, self.t, self.N = scn, x, theta, t, N
        self.quadratic = scn.residual.affine and scn.reward.mean_h.quadratic
        self._H: np.ndarray | None = None
        self._c: np.ndarray | None = None
        self._c0 = 0.0
        if self.quadratic:
            self._build_quadratic()

    def _build_quadratic(self) -> None:
        scn, th, t, N = self.scn, self.theta, self.t, self.N
        n, q = scn.n, scn.q
        m = (N + 1) * q
        S = np.zeros((n, m))
        r = self.x.copy()
        H = np.zeros((m, m))
        c = np.zeros(m)
        c0 = 0.0
        u0 = np.zeros(q)
        for k in range(N + 1):
            E = np.zeros((q, m))
            E[:, k * q : (k + 1) * q] = np.eye(q)
            h0 = float(scn.reward.mean_h(r, u0, th, t + k))
            hx, hu = scn.reward.mean_h.gradients(r, u0, th, t + k)
            hxx, hxu, huu = scn.reward.mean_h.hessians(r, u0, th, t + k)
            c0 += h0
            c += S.T @ hx + E.T @ hu
            SxuE = S.T @ hxu @ E
            H += S.T @ hxx @ S + SxuE + SxuE.T + E.T @ huu @ E
            if k < N:
                gx, gu = scn.residual.jacobians(r, u0, th, t + k)
                g0 = np.asarray(scn.residual(r, u0, th, t + k), dtype=float).reshape(n)
                Ak = scn.A + gx
                S = Ak @ S + (scn.B + gu) @ E
                r = scn.A @ r + g0
        self._H = 0.5 * (H + H.T)
        self._c = c
        self._c0 = c0

    def value(self, z: np.ndarray) -> float:
        if self.quadratic:
            return float(0.5 * z @ self._H @ z + self._c @ z + self._c0)
        return n_step_reward(self.scn, self.x, z, self.theta, self.t)

    def grad(self, z: np.ndarray) -> np.ndarray:
        if self.quadratic:
            return self._H @ z + self._c
        scn, th, t = self.scn, self.theta, self.t
        U = z.reshape(-1, scn.q)
        xs = rollout_learned(scn, self.x, U, th, t)
        lam = np.zeros(scn.n)
        out = np.empty_like(U)
        for k in range(self.N, -1, -1):
            hx, hu = scn.reward.mean_h.gradients(xs[k], U[k], th, t + k)
            gx, gu = scn.residual.jacobians(xs[k], U[k], th, t + k)
            out[k] = hu + (scn.B + gu).T @ lam
            lam = hx + (scn.A + gx).T @ lam
        return out.reshape(-1)

    def hessian(self, z: np.ndarray) -> np.ndarray:
        if self._H is not None:
            return self._H
        m = z.size
        H = np.empty((m, m))
        for i in range(m):
            e = np.zeros(m)
            e[i] = _FD_HESS_STEP
            H[:, i] = (self.grad(z + e) - self.grad(z - e)) / (2 * _FD_HESS_STEP)
        return 0.5 * (H + H.T)

    @property
    def concave(self) -> bool:
        """True when J is a concave quadratic, so every stationary point is a global maximum."""
        if self._H is None:
            return False
        ev = np.linalg.eigvalsh(self._H)
        return bool(ev[-1] <= 1e-12 * max(1.0, float(np.max(np.abs(ev)))))


def _null_space(M: np.ndarray, m: int) -> np.ndarray:
    if M.shape[0] == 0:
        return np.eye(m)
    _, s, vt = np.linalg.svd(M)
    rank = int(np.sum(s > 1e-12 * max(1.0, s[0])))
    return vt[rank:].T


def _independent(rows: np.ndarray, candidate: np.ndarray) -> bool:
    if rows.shape[0] == 0:
        return bool(np.any(np.abs(candidate) > 1e-14))
    stacked = np.vstack([rows, candidate])
    return np.linalg.matrix_rank(stacked, tol=1e-10) > rows.shape[0]


def _ascend(obj: _Objective, G: np.ndarray, b: np.ndarray, z: np.ndarray, cfg: SolverConfig):
    """Active-set ascent from a feasible z. Returns (z, iterations, stationarity)."""
    m = z.size
    work: list[int] = []
    slack = b - G @ z
    for i in np.flatnonzero(slack <= _ACTIVE_TOL * max(1.0, np.max(np.abs(b)))):
        if _independent(G[work], G[i]):
            work.append(int(i))
    stationarity = np.inf
    it = 0
    for it in range(1, cfg.max_iter + 1):
        g = obj.grad(z)
        scale = max(1.0, float(np.max(np.abs(g))))
        Gw = G[work]
        Z = _null_space(Gw, m)
        gz = Z.T @ g
        if Z.shape[1] == 0 or np.max(np.abs(gz)) <= cfg.tol * scale:
            lam = np.linalg.lstsq(Gw.T, g, rcond=None)[0] if work else np.zeros(0)
            stationarity = float(np.max(np.abs(g - Gw.T @ np.maximum(lam, 0.0)))) if work else float(np.max(np.abs(g)))
            if not work or np.min(lam) >= -cfg.tol * scale:
                return z, it, stationarity / scale
            work.pop(int(np.argmin(lam)))
            continue
        H = obj.hessian(z)
        Hz = Z.T @ H @ Z
        evals = np.linalg.eigvalsh(Hz)
        newton = evals[-1] < -1e-10 * max(1.0, float(np.max(np.abs(evals))))
        if newton:
            p = Z @ np.linalg.solve(-Hz, gz)
            alpha_pref = 1.0
        else:
            p = Z @ gz
            curv = float(p @ H @ p)
            alpha_pref = -float(g @ p) / curv if curv < 0 else np.inf
        Gp = G @ p
        slack = np.maximum(b - G @ z, 0.0)
        mask = Gp > 1e-14 * max(1.0, float(np.max(np.abs(p))))
        mask[work] = False
        ratios = np.full(len(b), np.inf)
        ratios[mask] = slack[mask] / Gp[mask]
        block = int(np.argmin(ratios)) if np.any(mask) else -1
        alpha_max = ratios[block] if block >= 0 else np.inf
        alpha = min(alpha_pref, alpha_max)
        if not np.isfinite(alpha):
            raise ContractError("objective unbounded over the feasible input set")
        if not obj.quadratic and alpha > 0:
            f0 = obj.value(z)
            slope = float(g @ p)
            while alpha > 1e-16 and obj.value(z + alpha * p) < f0 + 1e-4 * alpha * slope:
                alpha *= 0.5
        z = z + alpha * p
        if block >= 0 and alpha >= alpha_max:
            work.append(block)
    return z, it, stationarity


def _feasible_point(G: np.ndarray, b: np.ndarray) -> np.ndarray | None:
    """Chebyshev center of ``{z : G z <= b}``, or None if empty."""
    m = G.shape[1]
    norms = np.linalg.norm(G, axis=1)
    keep = norms > 0
    if np.any(b[~keep] < -CERT_TOL):
        return None
    res = linprog(
        np.r_[np.zeros(m), -1.0],
        A_ub=np.hstack([G[keep], norms[keep, None]]),
        b_ub=b[keep],
        bounds=[(None, None)] * m + [(0, None)],
        method="highs",
    )
    if res.status != 0:
        return None
    return res.x[:m]


def _starts(scn, cert, cons, x, N, cfg, G, b) -> list[np.ndarray]:
    """Center of the safe input set and uniform samples from it, each continued by the feedback law."""
    q = scn.q
    rows = np.vstack([scn.U.normals, cons.tightened.normals @ scn.B])
    rhs = np.concatenate(
        [scn.U.offsets, cons.tightened.offsets - cons.tightened.normals @ (scn.A @ x)]
    )
    rng = np.random.default_rng(cfg.seed)
    n_extra = max(0, cfg.multi_starts - 1)
    if q == 1:
        lo, hi = _interval(rows, rhs)
        if lo > hi + CERT_TOL:
            return []
        hi = max(hi, lo)
        firsts = [np.array([(lo + hi) / 2])]
        firsts += [np.array([v]) for v in rng.uniform(lo, hi, size=n_extra)]
    else:
        safe = HPolytope(rows, rhs, dim=q)
        if safe.is_empty():
            return []
        try:
            center, _ = safe.chebyshev()
        except Exception:
            return []
        firsts = [center] + [sample_uniform(safe, rng) for _ in range(n_extra)]
    starts = []
    for u0 in firsts:
        seq = [u0]
        xb = scn.A @ x + scn.B @ u0 + scn.nominal_offset
        for _ in range(N):
            u = cert.gain_K @ xb + cert.offset
            seq.append(u)
            xb = scn.A @ xb + scn.B @ u + scn.nominal_offset
        z = np.concatenate(seq)
        if np.max(G @ z - b) > 1e-9:
            z = _feasible_point(G, b)
            if z is None:
                continue
        starts.append(z)
    return starts


def _interval(rows: np.ndarray, rhs: np.ndarray) -> tuple[float, float]:
    """Bounds of ``{u : rows u <= rhs}`` for scalar u; returns lo > hi when empty."""
    a = rows[:, 0]
    pos, neg = a > 1e-14, a < -1e-14
    zero = ~(pos | neg)
    if np.any(rhs[zero] < -CERT_TOL):
        return 1.0, 0.0
    hi = float(np.min(rhs[pos] / a[pos])) if np.any(pos) else np.inf
    lo = float(np.max(rhs[neg] / a[neg])) if np.any(neg) else -np.inf
    return lo, hi


def solve_vn(
    scn: Scenario,
    x,
    theta,
    N: int,
    cert: InvariantSetCertificate,
    t: int = 0,
    cfg: SolverConfig | None = None,
) -> MpcSolution:
    """Maximize the learned-model N-step reward from state x.

    Returns an ``infeasible`` solution (empty arrays, value -inf) when no input
    keeps the nominal successor in ``Omega ⊖ W``.
    """
    if N < 0:
        raise ContractError("horizon N must be >= 0")
    cfg = cfg or SolverConfig()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    cons = _constraints(scn, cert, N)
    G, b = cons.G, cons.rhs(x)
    obj = _Objective(scn, x, theta, t, N)
    if obj.concave and cfg.multi_starts > 1:
        cfg = replace(cfg, multi_starts=1)
    starts = _starts(scn, cert, cons, x, N, cfg, G, b)
    if not starts:
        empty = np.zeros((0, scn.q))
        return MpcSolution(empty, np.zeros((0, scn.n)), np.zeros((0, scn.n)), -np.inf, "infeasible", 0)
    best = None
    total_iter = 0
    for z0 in starts:
        z, it, stat = _ascend(obj, G, b, z0, cfg)
        total_iter += it
        val = obj.value(z)
        cand = (val, z, stat)
        if best is None or val > best[0] + cfg.tie_tol:
            best = cand
        elif val >= best[0] - cfg.tie_tol and tuple(z) < tuple(best[1]):
            best = cand
    val, z, stat = best
    inputs = z.reshape(N + 1, scn.q)
    status = "optimal" if stat <= cfg.tol else "feasible-suboptimal"
    learned = rollout_learned(scn, x, inputs, theta, t)
    nominal = rollout_nominal(scn, x, inputs)
    value = n_step_reward(scn, x, inputs, theta, t)
    return MpcSolution(inputs, learned, nominal, value, status, total_iter, float(stat))


# recursive feasibility --------------------------------------------------------


@dataclass
class FeasibilityReport:
    ok: bool
    worst_state_violation: float
    worst_candidate_violation: float
    counterexample_w: np.ndarray | None = None
    successors: list = field(default_factory=list)


def check_recursive_feasibility(
    scn: Scenario,
    cert: InvariantSetCertificate,
    x,
    u_applied,
    N: int = 1,
    tol: float = 1e-9,
) -> FeasibilityReport:
    """Worst-case check over the vertices of W.

    For each vertex w, the successor ``A x + B u + w`` must lie in Omega and X
    and the candidate sequence built from the feedback law at the successor must
    satisfy every constraint of the horizon-N program there.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u = np.atleast_1d(np.asarray(u_applied, dtype=float))
    cons = _constraints(scn, cert, N)
    worst_s = worst_c = 0.0
    bad_w = None
    succs = []
    for w in scn.W.vertices():
        xp = scn.A @ x + scn.B @ u + w
        succs.append(xp)
        s_viol = max(
            float(np.max(cert.omega.normals @ xp - cert.omega.offsets, initial=-np.inf)),
            float(np.max(scn.X.normals @ xp - scn.X.offsets, initial=-np.inf)),
        )
        seq = []
        xb = xp
        for _ in range(N + 1):
            uk = cert.gain_K @ xb + cert.offset
            seq.append(uk)
            xb = scn.A @ xb + scn.B @ uk + scn.nominal_offset
        z = np.concatenate(seq)
        c_viol = float(np.max(cons.G @ z - cons.rhs(xp), initial=-np.inf))
        if s_viol > worst_s or c_viol > worst_c:
            if s_viol > tol or c_viol > tol:
                bad_w = w.copy()
        worst_s = max(worst_s, s_viol)
        worst_c = max(worst_c, c_viol)
    ok = worst_s <= tol and worst_c <= tol
    return FeasibilityReport(ok, max(0.0, worst_s), max(0.0, worst_c), None if ok else bad_w, succs)


def solution_is_consistent(scn: Scenario, sol: MpcSolution, x, theta, cert, t: int = 0, tol: float = 1e-9) -> bool:
    """Re-check the solution invariants: feasibility, rollouts and value."""
    if not sol.feasible:
        return True
    x = np.atleast_1d(np.asarray(x, dtype=float))
    ok = np.all(contains(scn.U, sol.inputs, tol=tol))
    ok &= np.all(contains(scn.X, sol.nominal_states[1:-1], tol=tol)) if len(sol.nominal_states) > 2 else True
    ok &= contains(cert.tightened(scn.W), scn.A @ x + scn.B @ sol.inputs[0], tol=tol)
    ok &= np.array_equal(sol.learned_states, rollout_learned(scn, x, sol.inputs, theta, t))
    ok &= abs(sol.value - n_step_reward(scn, x, sol.inputs, theta, t)) <= 1e-10 * max(1.0, abs(sol.value))
    return bool(ok)
