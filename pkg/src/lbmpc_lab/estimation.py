"""Maximum-likelihood parameter estimation and trajectory-KL diagnostics.

The likelihood has two readings, selected per scenario by
``mle_state_source``:

* ``"regenerate"``: states are rolled forward from x0 under the candidate
  theta with the recorded inputs, and only rewards enter the likelihood.
* ``"recorded"``: rewards are scored at the recorded states, and each recorded
  transition adds ``|x_{i+1} - f(x_i, u_i, theta)|^2 / (2 sigma_x^2)``, a
  narrow Gaussian standing in for the degenerate transition density.

The estimator is a coarse grid over the parameter box followed by a compass
direct search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import History, Scenario, rollout_learned
from .errors import ContractError, UnsupportedOperationError
from .polytope import contains

PENALTY = 1e30
_GRID_BUDGET = 20_000


@dataclass(frozen=True)
class EstimatorConfig:
    """Grid and direct-search settings.

    ``grid_points`` per dimension is reduced automatically when
    ``grid_points ** p`` would exceed 20000 evaluations. Steps are measured
    in grid spacings. A refinement that starts from the previous estimate
    begins at ``warm_step``; each successful move multiplies the step by
    ``expand`` (capped at one spacing).
    """

    grid_points: int = 11
    max_iter: int = 200
    shrink: float = 0.5
    step_floor: float = 1e-8
    refresh: int = 256
    warm_step: float = 2.0**-8
    expand: float = 2.0

    @classmethod
    def from_dict(cls, d: dict | None) -> EstimatorConfig:
        d = dict(d or {})
        keys = ("grid_points", "max_iter", "shrink", "step_floor", "refresh", "warm_step", "expand")
        return cls(**{k: d[k] for k in keys if k in d})


@dataclass(frozen=True)
class ParameterEstimate:
    theta_hat: np.ndarray
    nll: float
    grid_best: np.ndarray
    refine_iterations: int
    t_fit: int
    degenerate: bool = False
    grid_nll: float = float("nan")


# likelihood --------------------------------------------------------------------


def _batched(fn, *args):
    try:
        return np.asarray(fn(*args), dtype=float)
    except Exception:
        return None


def nll_batch(scn: Scenario, hist: History, thetas) -> np.ndarray:
    """Negative log-likelihood for each row of ``thetas`` (shape (G, p)).

    Non-finite or overflowing values are clamped at ``PENALTY``.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if len(hist) == 0:
        raise ContractError("history has no rewards")
    xs_rec, us, rs = hist.arrays()
    out = _nll_vectorized(scn, xs_rec, us, rs, thetas)
    if out is None:
        out = np.array([_nll_vectorized(scn, xs_rec, us, rs, th[None, :])[0] for th in thetas])
    return _clamp(out)


def _nll_vectorized(scn, xs_rec, us, rs, thetas):
    Gn = len(thetas)
    n = scn.n
    rm = scn.reward
    total = np.zeros(Gn)
    if scn.mle_state_source == "regenerate":
        xs = np.repeat(xs_rec[0][None, :], Gn, axis=0)
        for i in range(len(us)):
            u = np.broadcast_to(us[i], (Gn, scn.q))
            mean = _batched(rm.mean_h, xs, u, thetas, i)
            g = _batched(scn.residual, xs, u, thetas, i)
            if mean is None or g is None or mean.shape != (Gn,) or g.reshape(-1).size != Gn * n:
                return None
            total -= rm.log_density(rs[i], mean)
            xs = xs @ scn.A.T + u @ scn.B.T + g.reshape(Gn, n)
    else:
        s2 = 2 * scn.transition_sigma**2
        for i in range(len(us)):
            x = np.broadcast_to(xs_rec[i], (Gn, n))
            u = np.broadcast_to(us[i], (Gn, scn.q))
            mean = _batched(rm.mean_h, x, u, thetas, i)
            g = _batched(scn.residual, x, u, thetas, i)
            if mean is None or g is None or mean.shape != (Gn,) or g.reshape(-1).size != Gn * n:
                return None
            total -= rm.log_density(rs[i], mean)
            pred = scn.A @ xs_rec[i] + scn.B @ us[i] + g.reshape(Gn, n)
            total += np.sum((xs_rec[i + 1] - pred) ** 2, axis=1) / s2
    return total


def _clamp(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if np.isfinite(v).all() and v.max(initial=-np.inf) <= PENALTY:
        return v
    bad = ~np.isfinite(v) | (v > PENALTY)
    if np.any(bad):
        v = v.copy()
        v[bad] = PENALTY
    return v


def neg_log_likelihood(scn: Scenario, hist: History, theta) -> float:
    """NLL of one parameter vector; see :func:`nll_batch`."""
    return float(nll_batch(scn, hist, np.atleast_1d(theta)[None, :])[0])


class HistoryLikelihood:
    """Generic accumulator: stores the history and evaluates batches in O(t)."""

    def __init__(self, scn: Scenario):
        self.scn = scn
        self.hist: History | None = None

    @property
    def count(self) -> int:
        return 0 if self.hist is None else len(self.hist)

    def update(self, t: int, x, u, r: float, x_next) -> None:
        if self.hist is None:
            self.hist = History.start(x)
        self.hist.append(u, r, x_next, False)

    def nll(self, thetas) -> np.ndarray:
        return nll_batch(self.scn, self.hist, thetas)


def make_accumulator(scn: Scenario):
    """Fastest available likelihood accumulator for the scenario."""
    factory = getattr(scn.exogenous, "make_accumulator", None)
    if factory is not None:
        return factory(scn)
    return HistoryLikelihood(scn)


def accumulator_from_history(scn: Scenario, hist: History):
    acc = make_accumulator(scn)
    xs, us, rs = hist.arrays()
    for i in range(len(us)):
        acc.update(i, xs[i], us[i], rs[i], xs[i + 1])
    return acc


# estimator -----------------------------------------------------------------------


def _grid(scn: Scenario, cfg: EstimatorConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lo, hi = scn.Theta.bounding_box()
    p = lo.size
    G = cfg.grid_points
    while G > 2 and G**p > _GRID_BUDGET:
        G -= 1
    axes = [np.linspace(a, b, G) if b > a else np.array([a]) for a, b in zip(lo, hi)]
    pts = np.array(np.meshgrid(*axes, indexing="ij")).reshape(p, -1).T
    if not scn.Theta.is_box:
        pts = pts[contains(scn.Theta, pts, tol=1e-12)]
    spacing = np.where(hi > lo, (hi - lo) / max(G - 1, 1), 0.0)
    return pts, lo, spacing


_GRID_CACHE: dict[tuple, tuple] = {}


def _curvature_basis(nll, x, spacing, free, h: float = 1e-3) -> np.ndarray:
    """Orthonormal poll basis (columns) from a finite-difference Hessian in grid-spacing units.

    Falls back to the coordinate axes when the Hessian is not finite.
    """
    m = free.size
    if m == 1:
        return np.ones((1, 1))
    E = np.zeros((m, x.size))
    E[np.arange(m), free] = h * spacing[free]
    iu, ju = np.triu_indices(m, 1)
    pts = np.vstack(
        [
            x[None, :],
            x + E,
            x - E,
            x + E[iu] + E[ju],
            x + E[iu] - E[ju],
            x - E[iu] + E[ju],
            x - E[iu] - E[ju],
        ]
    )
    f = nll(pts)
    if not np.all(np.isfinite(f)):
        return np.eye(m)
    f0, fp, fm = f[0], f[1 : m + 1], f[m + 1 : 2 * m + 1]
    k = len(iu)
    fpp, fpm, fmp, fmm = (f[2 * m + 1 + i * k : 2 * m + 1 + (i + 1) * k] for i in range(4))
    H = np.diag((fp - 2 * f0 + fm) / h**2)
    H[iu, ju] = H[ju, iu] = (fpp - fpm - fmp + fmm) / (4 * h**2)
    return np.linalg.eigh(H)[1]


def mle_fit(
    scn: Scenario,
    hist: History | None = None,
    prev: ParameterEstimate | None = None,
    cfg: EstimatorConfig | None = None,
    acc=None,
) -> ParameterEstimate:
    """Minimize the NLL over Theta: grid search, then direct search from the best start.

    The direct search polls plus and minus an orthonormal basis aligned with
    the local curvature (in grid-spacing units), shrinking the step on failure.

    Either ``hist`` or a likelihood accumulator ``acc`` (which then supplies
    the NLL) must be given.
    """
    cfg = cfg or EstimatorConfig()
    if acc is None:
        if hist is None:
            raise ContractError("need a history or an accumulator")
        acc = accumulator_from_history(scn, hist)
    count = acc.count
    if count < 2:
        raise ContractError("at least 2 recorded rewards are needed")
    key = (id(scn), cfg.grid_points)
    hit = _GRID_CACHE.get(key)
    if hit is None or hit[0] is not scn:
        hit = (scn, *_grid(scn, cfg))
        _GRID_CACHE[key] = hit
    _, pts, lo, spacing = hit
    hi = scn.Theta.bounding_box()[1]
    vals = _clamp(acc.nll(pts))
    gi = int(np.argmin(vals))
    grid_best, grid_nll = pts[gi].copy(), float(vals[gi])
    x, fx = grid_best, grid_nll
    step = 1.0
    if prev is not None:
        th = np.clip(prev.theta_hat, lo, hi)
        fp = float(_clamp(acc.nll(th[None, :]))[0])
        if fp < fx:
            x, fx = th, fp
            step = cfg.warm_step
    if fx >= PENALTY:
        center = scn.Theta.chebyshev()[0] if prev is None else np.clip(prev.theta_hat, lo, hi)
        return ParameterEstimate(center, PENALTY, grid_best, 0, count, degenerate=True, grid_nll=grid_nll)
    p = x.size
    free = np.flatnonzero(spacing > 0)
    if free.size == 0:
        return ParameterEstimate(x.copy(), fx, grid_best, 0, count, grid_nll=grid_nll)
    basis = np.zeros((free.size, p))
    basis[:, free] = _curvature_basis(acc.nll, x, spacing, free).T * spacing[free]
    dirs = np.vstack([basis, -basis])
    is_box = scn.Theta.is_box
    it = 0
    # A failed poll only shrinks the step, so the polls the sequential method
    # would make before its next move are evaluated together: scales
    # step * shrink**j for j = 0..L-1, and the first improving scale wins.
    while it < cfg.max_iter and step >= cfg.step_floor:
        L, s_next = 1, step * cfg.shrink
        while L < cfg.max_iter - it and s_next >= cfg.step_floor:
            L, s_next = L + 1, s_next * cfg.shrink
        scales = step * cfg.shrink ** np.arange(L)
        cand = x + (scales[:, None, None] * dirs[None, :, :]).reshape(-1, p)
        cand = np.minimum(np.maximum(cand, lo), hi)
        fc = acc.nll(cand)
        if not is_box:
            fc = np.where(contains(scn.Theta, cand, tol=1e-12), fc, np.inf)
        fc = fc.reshape(L, len(dirs))
        better = fc.min(axis=1) < fx
        if not better.any():
            it += L
            step = s_next
            continue
        j = int(np.argmax(better))
        k = int(np.argmin(fc[j]))
        it += j + 1
        x, fx = cand[j * len(dirs) + k], float(fc[j, k])
        step = min(float(scales[j]) * cfg.expand, 1.0)
    return ParameterEstimate(x.copy(), fx, grid_best, it, count, grid_nll=grid_nll)


def estimate_path(scn: Scenario, hist: History, t_points, cfg: EstimatorConfig | None = None) -> dict:
    """Estimates ``{t: ParameterEstimate}`` fitted on the first t observations.

    Fits are made in increasing t along one accumulator, each warm-started
    from the previous one, exactly as a learner refitting at those times.
    """
    xs, us, rs = hist.arrays()
    pts = sorted({int(t) for t in t_points if 2 <= int(t) <= len(us)})
    acc = make_accumulator(scn)
    out, prev, i = {}, None, 0
    for t in pts:
        while i < t:
            acc.update(i, xs[i], us[i], rs[i], xs[i + 1])
            i += 1
        prev = mle_fit(scn, prev=prev, cfg=cfg, acc=acc)
        out[t] = prev
    return out


# trajectory KL ------------------------------------------------------------------


def trajectory_kl(scn: Scenario, theta_a, theta_b, x0, inputs, t0: int = 0) -> float:
    """Sum of per-step reward KL divergences along the trajectories each parameter generates."""
    for th in (theta_a, theta_b):
        if not contains(scn.Theta, np.atleast_1d(th), tol=1e-9):
            raise ContractError("parameters must lie in Theta")
    U = np.asarray(inputs, dtype=float).reshape(-1, scn.q)
    if len(U) == 0:
        return 0.0
    return float(np.sum(per_step_kl(scn, theta_a, theta_b, x0, U, t0)))


def per_step_kl(scn: Scenario, theta_a, theta_b, x0, inputs, t0: int = 0) -> np.ndarray:
    if scn.reward.family == "custom":
        raise UnsupportedOperationError("trajectory KL needs a closed-form per-step KL")
    U = np.asarray(inputs, dtype=float).reshape(-1, scn.q)
    xa = rollout_learned(scn, x0, U, theta_a, t0)
    xb = rollout_learned(scn, x0, U, theta_b, t0)
    ha = np.array([scn.reward.mean_h(xa[i], U[i], theta_a, t0 + i) for i in range(len(U))], dtype=float)
    hb = np.array([scn.reward.mean_h(xb[i], U[i], theta_b, t0 + i) for i in range(len(U))], dtype=float)
    return scn.reward.kl(ha, hb)


@dataclass
class ConcentrationCurve:
    """Per-step trajectory KL ``D(theta0 || theta_hat_t) / (t - 1)`` at the fit times.

    ``a``/``b`` fit ``a / sqrt(t - 1) + b`` by least squares and ``slope``
    is the log-log regression exponent of the values against t.
    """

    t: np.ndarray
    values: np.ndarray
    a: float = float("nan")
    b: float = float("nan")
    slope: float = float("nan")
    extra: dict = field(default_factory=dict)


def concentration_curve(scn: Scenario, hist: History, estimates: dict) -> ConcentrationCurve:
    """Diagnostic series from a run and its estimates ``{t: theta_hat_t}`` (t >= 2)."""
    xs, us, _ = hist.arrays()
    ts, vals = [], []
    for t in sorted(estimates):
        if t < 2 or t > len(us):
            continue
        d = trajectory_kl(scn, scn.theta_true, estimates[t], xs[0], us[:t])
        ts.append(t)
        vals.append(d / (t - 1))
    return fit_concentration(np.array(ts, dtype=float), np.array(vals, dtype=float))


def fit_concentration(ts: np.ndarray, vals: np.ndarray) -> ConcentrationCurve:
    curve = ConcentrationCurve(ts, vals)
    if len(ts) >= 2:
        M = np.column_stack([1 / np.sqrt(ts - 1), np.ones_like(ts)])
        (a, b), *_ = np.linalg.lstsq(M, vals, rcond=None)
        curve.a, curve.b = float(a), float(b)
        curve.slope = loglog_slope(ts, vals)
    return curve


def loglog_slope(ts, vals, eps: float = 1e-9) -> float:
    """Least-squares slope of log(|vals| + eps) against log(ts)."""
    ts = np.asarray(ts, dtype=float)
    vals = np.abs(np.asarray(vals, dtype=float)) + eps
    if len(ts) < 2:
        return float("nan")
    return float(np.polyfit(np.log(ts), np.log(vals), 1)[0])


def gaussian_nll_reference(r, mean, sigma: float) -> float:
    """Closed-form Gaussian NLL used as an oracle in tests."""
    r = np.asarray(r, dtype=float)
    mean = np.asarray(mean, dtype=float)
    return float(np.sum((r - mean) ** 2) / (2 * sigma**2) + r.size * math.log(sigma * math.sqrt(2 * math.pi)))
