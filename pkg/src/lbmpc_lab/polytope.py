"""Convex polytopes in half-space representation.

Every constraint set used by the controller (state set X, input set U,
disturbance set W, parameter box Theta, invariant set Omega and the safe input
set) is an :class:`HPolytope` ``{x : normals @ x <= offsets}``.

Exact Minkowski sums and non-invertible linear maps go through vertex
enumeration and are limited to dimension <= 3; axis-aligned boxes are handled
in closed form in any dimension.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull

from .errors import (
    ContractError,
    EmptySafeSetError,
    EmptySetError,
    NonConvergenceError,
    StabilityError,
    UnsupportedOperationError,
)

CERT_TOL = 1e-9
MAX_ROUNDS = 10_000
_ZERO = 1e-13
_VERTEX_DIM_LIMIT = 3


class HPolytope:
    """Immutable set ``{x : normals @ x <= offsets}``.

    Derived quantities (emptiness, box bounds, Chebyshev ball, vertices) are
    computed lazily and cached on the instance.
    """

    __slots__ = ("normals", "offsets", "_cache")

    def __init__(self, normals: Any, offsets: Any, dim: int | None = None):
        normals = np.asarray(normals, dtype=float)
        offsets = np.asarray(offsets, dtype=float).reshape(-1)
        if normals.ndim == 1:
            if dim is None and normals.size == offsets.size:
                normals = normals.reshape(-1, 1)
            else:
                normals = normals.reshape(offsets.size, -1 if offsets.size else dim or 1)
        if normals.size == 0:
            if dim is None and normals.ndim == 2:
                dim = normals.shape[1]
            if not dim:
                raise ContractError("cannot infer dimension of a polytope without constraints")
            normals = np.zeros((0, dim))
        if normals.shape[0] != offsets.shape[0]:
            raise ContractError(
                f"{normals.shape[0]} normals but {offsets.shape[0]} offsets"
            )
        if not np.all(np.isfinite(normals)):
            raise ContractError("normals must be finite")
        if np.any(np.isnan(offsets)):
            raise ContractError("offsets must not be NaN")
        normals.setflags(write=False)
        offsets.setflags(write=False)
        self.normals = normals
        self.offsets = offsets
        self._cache: dict[str, Any] = {}

    # construction ---------------------------------------------------------

    @classmethod
    def box(cls, lo: Any, hi: Any) -> HPolytope:
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.shape != hi.shape:
            raise ContractError("box bounds must have the same shape")
        d = lo.size
        eye = np.eye(d)
        poly = cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))
        if np.all(lo <= hi):
            poly._cache["box"] = (lo.copy(), hi.copy())
        return poly

    @classmethod
    def point(cls, x: Any) -> HPolytope:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls.box(x, x)

    @classmethod
    def from_json(cls, obj: dict) -> HPolytope:
        if "box" in obj:
            return cls.box(obj["box"]["lo"], obj["box"]["hi"])
        if "normals" not in obj or "offsets" not in obj:
            raise ContractError("polytope JSON needs 'normals' and 'offsets' or 'box'")
        return cls(obj["normals"], obj["offsets"], dim=obj.get("dim"))

    def to_json(self) -> dict:
        return {
            "normals": [[float(v) for v in row] for row in self.normals],
            "offsets": [float(v) for v in self.offsets],
            "dim": self.dim,
        }

    # basic properties -----------------------------------------------------

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    @property
    def n_constraints(self) -> int:
        return self.normals.shape[0]

    def __repr__(self) -> str:
        bounds = self.box_bounds()
        if bounds is not None:
            return f"HPolytope.box(lo={bounds[0].tolist()}, hi={bounds[1].tolist()})"
        return f"HPolytope(dim={self.dim}, n_constraints={self.n_constraints})"

    def box_bounds(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Return ``(lo, hi)`` if the set is a bounded axis-aligned box, else None.

        An empty box (some ``lo > hi``) is reported as None too.
        """
        if "box" in self._cache:
            return self._cache["box"]
        result = None
        nz = np.abs(self.normals) > _ZERO
        counts = nz.sum(axis=1)
        if np.all(counts <= 1):
            zero_rows = counts == 0
            if np.all(self.offsets[zero_rows] >= -_ZERO):
                lo = np.full(self.dim, -np.inf)
                hi = np.full(self.dim, np.inf)
                for i in np.flatnonzero(~zero_rows):
                    j = int(np.flatnonzero(nz[i])[0])
                    a = self.normals[i, j]
                    bound = self.offsets[i] / a
                    if a > 0:
                        hi[j] = min(hi[j], bound)
                    else:
                        lo[j] = max(lo[j], bound)
                if np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(lo <= hi):
                    result = (lo, hi)
        self._cache["box"] = result
        return result

    @property
    def is_box(self) -> bool:
        return self.box_bounds() is not None

    def is_empty(self) -> bool:
        if "empty" not in self._cache:
            self._cache["empty"] = self._compute_empty()
        return self._cache["empty"]

    def _compute_empty(self) -> bool:
        if self.box_bounds() is not None:
            return False
        zero_rows = np.all(np.abs(self.normals) <= _ZERO, axis=1)
        if np.any(self.offsets[zero_rows] < -_ZERO):
            return True
        if np.any(np.isneginf(self.offsets)):
            return True
        if self.dim == 1 or np.all(np.sum(np.abs(self.normals) > _ZERO, axis=1) <= 1):
            # axis-aligned (possibly unbounded or crossed) bounds
            lo, hi = _axis_bounds(self)
            return bool(np.any(lo > hi + _ZERO))
        res = linprog(
            np.zeros(self.dim),
            A_ub=self.normals,
            b_ub=self.offsets,
            bounds=[(None, None)] * self.dim,
            method="highs",
        )
        return res.status == 2

    def is_bounded(self) -> bool:
        """Check boundedness with 2*dim support evaluations."""
        if "bounded" not in self._cache:
            if self.box_bounds() is not None:
                self._cache["bounded"] = True
            else:
                eye = np.eye(self.dim)
                s = support(self, np.vstack([eye, -eye]))
                self._cache["bounded"] = bool(np.all(np.isfinite(s)) or self.is_empty())
        return self._cache["bounded"]

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if "bbox" not in self._cache:
            bounds = self.box_bounds()
            if bounds is not None:
                self._cache["bbox"] = bounds
            else:
                if self.is_empty():
                    raise EmptySetError("bounding box of an empty set")
                eye = np.eye(self.dim)
                hi = support(self, eye)
                lo = -support(self, -eye)
                self._cache["bbox"] = (lo, hi)
        return self._cache["bbox"]

    def chebyshev(self) -> tuple[np.ndarray, float]:
        """Center and radius of the largest inscribed ball."""
        if "cheb" in self._cache:
            return self._cache["cheb"]
        if self.is_empty():
            raise EmptySetError("Chebyshev center of an empty set")
        bounds = self.box_bounds()
        if bounds is not None:
            lo, hi = bounds
            out = ((lo + hi) / 2.0, float(np.min(hi - lo) / 2.0))
        else:
            norms = np.linalg.norm(self.normals, axis=1)
            keep = norms > _ZERO
            A = np.hstack([self.normals[keep], norms[keep, None]])
            c = np.zeros(self.dim + 1)
            c[-1] = -1.0
            res = linprog(
                c,
                A_ub=A,
                b_ub=self.offsets[keep],
                bounds=[(None, None)] * self.dim + [(0, None)],
                method="highs",
            )
            if res.status == 3:
                raise ContractError("Chebyshev center of an unbounded set")
            if res.status != 0:
                raise EmptySetError("Chebyshev LP failed: " + res.message)
            out = (res.x[:-1].copy(), float(res.x[-1]))
        self._cache["cheb"] = out
        return out

    def vertices(self) -> np.ndarray:
        """Vertex list, shape (k, dim). Only for bounded sets with dim <= 3."""
        if "vertices" in self._cache:
            return self._cache["vertices"]
        if self.is_empty():
            raise EmptySetError("vertices of an empty set")
        if not self.is_bounded():
            raise ContractError("vertices of an unbounded set")
        bounds = self.box_bounds()
        if bounds is not None:
            lo, hi = bounds
            corners = np.array(list(itertools.product(*zip(lo, hi))), dtype=float)
            verts = _unique_rows(corners)
        elif self.dim > _VERTEX_DIM_LIMIT:
            raise UnsupportedOperationError(
                f"vertex enumeration supports dim <= {_VERTEX_DIM_LIMIT}, got {self.dim}"
            )
        else:
            verts = _enumerate_vertices(self)
        verts.setflags(write=False)
        self._cache["vertices"] = verts
        return verts

    def remove_redundant(self, tol: float = CERT_TOL) -> HPolytope:
        """Drop constraints implied by the others."""
        if self.is_empty():
            return self
        bounds = self.box_bounds()
        if bounds is not None:
            return HPolytope.box(*bounds)
        norms = np.linalg.norm(self.normals, axis=1)
        keep_rows = norms > _ZERO
        A = self.normals[keep_rows] / norms[keep_rows, None]
        b = self.offsets[keep_rows] / norms[keep_rows]
        # exact duplicates: keep the tightest
        order = np.lexsort(np.vstack([b, np.round(A, 12).T[::-1]]))
        A, b = A[order], b[order]
        uniq = np.ones(len(b), dtype=bool)
        for i in range(1, len(b)):
            if np.allclose(A[i], A[i - 1], atol=1e-12):
                uniq[i] = False
        A, b = A[uniq], b[uniq]
        keep = np.ones(len(b), dtype=bool)
        for i in range(len(b)):
            keep[i] = False
            others = HPolytope(
                np.vstack([A[keep], A[i]]), np.concatenate([b[keep], [b[i] + 1.0]])
            )
            s = support(others, A[i : i + 1])[0]
            if s > b[i] + tol:
                keep[i] = True
        out = HPolytope(A[keep], b[keep], dim=self.dim)
        out._cache["empty"] = False
        return out

    def equals(self, other: HPolytope, tol: float = 1e-9) -> bool:
        """Mutual containment test via support functions on both normal sets."""
        if self.dim != other.dim:
            return False
        if self.is_empty() or other.is_empty():
            return self.is_empty() and other.is_empty()
        for P, Q in ((self, other), (other, self)):
            if P.n_constraints and np.any(support(Q, P.normals) > P.offsets + tol):
                return False
        return True


def _axis_bounds(P: HPolytope) -> tuple[np.ndarray, np.ndarray]:
    lo = np.full(P.dim, -np.inf)
    hi = np.full(P.dim, np.inf)
    for i in range(P.n_constraints):
        row = P.normals[i]
        nz = np.flatnonzero(np.abs(row) > _ZERO)
        if nz.size == 0:
            continue
        j = int(nz[0])
        bound = P.offsets[i] / row[j]
        if row[j] > 0:
            hi[j] = min(hi[j], bound)
        else:
            lo[j] = max(lo[j], bound)
    return lo, hi


def _unique_rows(pts: np.ndarray, decimals: int = 10) -> np.ndarray:
    if len(pts) == 0:
        return pts
    _, idx = np.unique(np.round(pts, decimals), axis=0, return_index=True)
    return pts[np.sort(idx)]


def _enumerate_vertices(P: HPolytope) -> np.ndarray:
    d = P.dim
    A, b = P.normals, P.offsets
    keep = np.linalg.norm(A, axis=1) > _ZERO
    A, b = A[keep], b[keep]
    scale = max(1.0, float(np.max(np.abs(b))) if b.size else 1.0)
    pts = []
    for combo in itertools.combinations(range(len(b)), d):
        M = A[list(combo)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, b[list(combo)])
        if np.all(A @ x <= b + 1e-9 * scale):
            pts.append(x)
    if not pts:
        # lower-dimensional set: fall back to an LP-based extreme point search
        dirs = np.vstack([np.eye(d), -np.eye(d)])
        pts = [_argmax(P, v) for v in dirs]
    return _unique_rows(np.array(pts))


def _argmax(P: HPolytope, direction: np.ndarray) -> np.ndarray:
    res = linprog(
        -np.asarray(direction, dtype=float),
        A_ub=P.normals,
        b_ub=P.offsets,
        bounds=[(None, None)] * P.dim,
        method="highs",
    )
    if res.status != 0:
        raise ContractError("support LP failed: " + res.message)
    return res.x


def support(P: HPolytope, directions: Any) -> np.ndarray:
    """Support function ``max_{x in P} d @ x`` for each row of ``directions``.

    Returns +inf for unbounded directions and -inf for an empty set.
    """
    D = np.atleast_2d(np.asarray(directions, dtype=float))
    if D.shape[1] != P.dim:
        raise ContractError(f"direction dimension {D.shape[1]} != polytope dimension {P.dim}")
    bounds = P.box_bounds()
    if bounds is not None:
        lo, hi = bounds
        return np.sum(np.maximum(D * lo, D * hi), axis=1)
    if P.is_empty():
        return np.full(D.shape[0], -np.inf)
    if P.dim == 1 or np.all(np.sum(np.abs(P.normals) > _ZERO, axis=1) <= 1):
        lo, hi = _axis_bounds(P)
        with np.errstate(invalid="ignore"):
            vals = np.where(D >= 0, D * hi, D * lo)
        vals = np.where(D == 0, 0.0, vals)
        return np.sum(vals, axis=1)
    out = np.empty(D.shape[0])
    for i, d in enumerate(D):
        if not np.any(d):
            out[i] = 0.0
            continue
        res = linprog(
            -d,
            A_ub=P.normals,
            b_ub=P.offsets,
            bounds=[(None, None)] * P.dim,
            method="highs",
        )
        if res.status == 3:
            out[i] = np.inf
        elif res.status == 2:
            out[i] = -np.inf
        elif res.status == 0:
            out[i] = -res.fun
        else:
            raise ContractError("support LP failed: " + res.message)
    return out


def _check_dims(P: HPolytope, Q: HPolytope) -> None:
    if P.dim != Q.dim:
        raise ContractError(f"dimension mismatch: {P.dim} vs {Q.dim}")


def intersect(P: HPolytope, Q: HPolytope) -> HPolytope:
    _check_dims(P, Q)
    return HPolytope(
        np.vstack([P.normals, Q.normals]), np.concatenate([P.offsets, Q.offsets]), dim=P.dim
    )


def contains(P: HPolytope, x: Any, tol: float = 0.0) -> bool | np.ndarray:
    """Membership test ``normals @ x <= offsets + tol``.

    ``x`` may be a single point of shape (dim,) or a batch (k, dim); the
    return value is a bool or a boolean array accordingly.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    X = np.atleast_2d(x.reshape(-1) if single else x)
    if X.shape[1] != P.dim:
        raise ContractError(f"point dimension {X.shape[1]} != polytope dimension {P.dim}")
    ok = np.all(X @ P.normals.T <= P.offsets + tol, axis=1)
    return bool(ok[0]) if single else ok


def hull_of_points(points: Any) -> HPolytope:
    """H-representation of the convex hull of a finite point set.

    Handles lower-dimensional hulls (segments, single points) by describing
    the affine hull with pairs of opposite inequalities.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = pts.shape[1]
    pts = _unique_rows(pts)
    center = pts.mean(axis=0)
    centered = pts - center
    if len(pts) == 1:
        rank = 0
        basis = np.zeros((d, 0))
        comp = np.eye(d)
    else:
        _, s, vt = np.linalg.svd(centered, full_matrices=True)
        scale = max(1.0, float(s[0]))
        rank = int(np.sum(s > 1e-10 * scale))
        basis = vt[:rank].T
        comp = vt[rank:].T
    rows: list[np.ndarray] = []
    rhs: list[float] = []
    if rank == 1:
        y = centered @ basis[:, 0]
        rows += [basis[:, 0], -basis[:, 0]]
        rhs += [float(y.max() + basis[:, 0] @ center), float(-y.min() - basis[:, 0] @ center)]
    elif rank >= 2:
        if rank > _VERTEX_DIM_LIMIT:
            raise UnsupportedOperationError("convex hull limited to dim <= 3")
        y = centered @ basis
        hull = ConvexHull(y)
        for eq in hull.equations:
            a_sub, off = eq[:-1], eq[-1]
            a = basis @ a_sub
            rows.append(a)
            rhs.append(float(-off + a @ center))
    for k in range(comp.shape[1]):
        v = comp[:, k]
        rows += [v, -v]
        rhs += [float(v @ center), float(-v @ center)]
    out = HPolytope(np.array(rows).reshape(-1, d), np.array(rhs), dim=d)
    out._cache["empty"] = False
    out._cache["bounded"] = True
    return out


def linear_map(P: HPolytope, R: Any) -> HPolytope:
    """Image ``{R u : u in P}``."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if R.shape[1] != P.dim:
        raise ContractError(f"map with {R.shape[1]} columns applied to dim {P.dim} set")
    if R.shape[0] == R.shape[1] and abs(np.linalg.det(R)) > 1e-12:
        Rinv = np.linalg.inv(R)
        out = HPolytope(P.normals @ Rinv, P.offsets.copy(), dim=P.dim)
        bounds = P.box_bounds()
        if bounds is not None and np.count_nonzero(np.abs(R) > _ZERO) == R.shape[0] and np.all(
            np.count_nonzero(np.abs(R) > _ZERO, axis=1) == 1
        ):
            # signed permutation / scaling keeps a box a box
            out = HPolytope(out.normals, out.offsets)
        return out
    if P.dim > _VERTEX_DIM_LIMIT:
        raise UnsupportedOperationError(
            "singular linear maps need vertex enumeration, limited to dim <= 3"
        )
    if P.is_empty():
        return HPolytope(np.vstack([np.eye(R.shape[0])[:1], -np.eye(R.shape[0])[:1]]), [-1.0, -1.0])
    return hull_of_points(P.vertices() @ R.T)


def minkowski_sum(P: HPolytope, Q: HPolytope) -> HPolytope:
    """Exact ``P ⊕ Q`` for box pairs (any dim) or sets of dim <= 3."""
    _check_dims(P, Q)
    if P.is_empty() or Q.is_empty():
        return HPolytope(np.vstack([np.eye(P.dim)[:1], -np.eye(P.dim)[:1]]), [-1.0, -1.0])
    bp, bq = P.box_bounds(), Q.box_bounds()
    if bp is not None and bq is not None:
        return HPolytope.box(bp[0] + bq[0], bp[1] + bq[1])
    if P.dim > _VERTEX_DIM_LIMIT:
        raise UnsupportedOperationError(
            "exact Minkowski sums of non-box polytopes are limited to dim <= 3"
        )
    vp, vq = P.vertices(), Q.vertices()
    sums = (vp[:, None, :] + vq[None, :, :]).reshape(-1, P.dim)
    return hull_of_points(sums)


def pontryagin_diff(P: HPolytope, Q: HPolytope) -> HPolytope:
    """``P ⊖ Q = {u : u + Q ⊆ P}`` by tightening each offset by Q's support."""
    _check_dims(P, Q)
    if Q.is_empty():
        raise ContractError("Pontryagin difference with an empty subtrahend")
    if not Q.is_bounded():
        raise ContractError("Pontryagin difference needs a bounded subtrahend")
    return HPolytope(P.normals.copy(), P.offsets - support(Q, P.normals), dim=P.dim)


def sample_uniform(P: HPolytope, rng: np.random.Generator) -> np.ndarray:
    """Draw one point from P.

    Boxes (including 1-D intervals) are sampled exactly. Other sets use a
    fresh hit-and-run chain from the Chebyshev center with 50*dim steps;
    flat sets fall back to a random convex combination of vertices.
    """
    if P.is_empty():
        raise EmptySetError("cannot sample from an empty set")
    bounds = P.box_bounds()
    if bounds is not None:
        lo, hi = bounds
        return rng.uniform(lo, hi)
    if not P.is_bounded():
        raise ContractError("cannot sample uniformly from an unbounded set")
    center, radius = P.chebyshev()
    if radius <= 1e-12:
        verts = P.vertices()
        weights = rng.dirichlet(np.ones(len(verts)))
        return weights @ verts
    x = center.copy()
    A, b = P.normals, P.offsets
    for _ in range(50 * P.dim):
        d = rng.standard_normal(P.dim)
        d /= np.linalg.norm(d)
        Ad = A @ d
        slack = b - A @ x
        with np.errstate(divide="ignore"):
            ratios = slack / Ad
        t_hi = np.min(ratios[Ad > _ZERO], initial=np.inf)
        t_lo = np.max(ratios[Ad < -_ZERO], initial=-np.inf)
        x = x + rng.uniform(t_lo, t_hi) * d
    return x


def hausdorff_distance(P: HPolytope, Q: HPolytope, n_directions: int = 720) -> float:
    """Hausdorff distance via support functions.

    Exact in one dimension; in higher dimensions the maximum support gap is
    taken over a fixed set of unit directions (a lower bound that is exact for
    boxes along the coordinate axes).
    """
    _check_dims(P, Q)
    if P.dim == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        rng = np.random.default_rng(0)
        dirs = rng.standard_normal((n_directions, P.dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        dirs = np.vstack([np.eye(P.dim), -np.eye(P.dim), dirs])
    return float(np.max(np.abs(support(P, dirs) - support(Q, dirs))))


@dataclass(frozen=True)
class InvariantSetCertificate:
    """Invariant set Omega with the feedback law ``u = K x + offset`` that keeps it invariant.

    ``residual_containment`` is the largest violation of
    ``(A + BK) Omega ⊕ (B offset) ⊕ W ⊆ Omega`` and ``residual_input`` the
    largest violation of ``K Omega + offset ⊆ U`` (and ``Omega ⊆ X``).
    """

    omega: HPolytope
    gain_K: np.ndarray
    residual_containment: float
    residual_input: float
    offset: np.ndarray
    iterations: int = 0
    converged: bool = True
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def feedback(self, x: np.ndarray) -> np.ndarray:
        return self.gain_K @ x + self.offset

    def tightened(self, W: HPolytope) -> HPolytope:
        """``Omega ⊖ W``, cached per disturbance set."""
        key = ("tight", id(W))
        if key not in self._cache:
            self._cache[key] = (W, pontryagin_diff(self.omega, W))
        return self._cache[key][1]


def _as_matrix(M: Any, rows: int | None = None) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    elif M.ndim == 1:
        M = M.reshape(rows if rows is not None else 1, -1)
    return M


def max_output_admissible_set(
    A: Any,
    B: Any,
    K: Any,
    X: HPolytope,
    U: HPolytope,
    W: HPolytope,
    *,
    offset: Any = None,
    tol: float = CERT_TOL,
    max_rounds: int = MAX_ROUNDS,
) -> InvariantSetCertificate:
    """Largest set admissible for ``u = K x + offset`` and invariant under W.

    Uses the classical backward constraint-tightening iteration: the j-th
    round adds ``H0 (A+BK)^j x <= h0 - sum_{m<j} [H0 (A+BK)^m B offset +
    h_W(H0 (A+BK)^m)]`` and stops once every new row is redundant.
    """
    A = _as_matrix(A)
    n = A.shape[0]
    B = _as_matrix(B, rows=n)
    K = _as_matrix(K, rows=B.shape[1])
    if A.shape != (n, n) or B.shape[0] != n or K.shape != (B.shape[1], n):
        raise ContractError("inconsistent shapes for A, B, K")
    k0 = np.zeros(B.shape[1]) if offset is None else np.asarray(offset, dtype=float).reshape(-1)
    if X.dim != n or W.dim != n or U.dim != B.shape[1]:
        raise ContractError("set dimensions do not match A and B")
    AK = A + B @ K
    rho = float(np.max(np.abs(np.linalg.eigvals(AK)))) if n else 0.0
    if rho >= 1.0:
        raise StabilityError(f"spectral radius of A+BK is {rho:.6g} >= 1")
    for name, S in (("X", X), ("U", U), ("W", W)):
        if S.is_empty():
            raise ContractError(f"{name} is empty")
        if not S.is_bounded():
            raise ContractError(f"{name} must be bounded")

    H0 = np.vstack([X.normals, U.normals @ K])
    h0 = np.concatenate([X.offsets, U.offsets - U.normals @ k0])
    drift = B @ k0
    current = HPolytope(H0, h0, dim=n).remove_redundant(tol)
    M = H0.copy()
    c = np.zeros(len(h0))
    converged = False
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        if current.is_empty():
            converged = True
            break
        c = c + M @ drift + support(W, M)
        M = M @ AK
        rhs = h0 - c
        s = support(current, M)
        new = s > rhs + tol
        if not np.any(new):
            converged = True
            break
        current = intersect(current, HPolytope(M[new], rhs[new], dim=n)).remove_redundant(tol)

    omega = current
    if omega.is_empty():
        raise EmptySetError("the admissible invariant set is empty for this (K, X, U, W)")
    res_c, res_u = _certificate_residuals(omega, A, B, K, k0, X, U, W)
    cert = InvariantSetCertificate(
        omega=omega,
        gain_K=K,
        residual_containment=res_c,
        residual_input=res_u,
        offset=k0,
        iterations=rounds,
        converged=converged,
    )
    if not converged:
        raise NonConvergenceError(
            f"invariant set not determined after {max_rounds} rounds", result=cert
        )
    return cert


def _certificate_residuals(omega, A, B, K, k0, X, U, W) -> tuple[float, float]:
    AK = A + B @ K
    H, h = omega.normals, omega.offsets
    grow = support(omega, H @ AK) + H @ (B @ k0) + support(W, H) - h
    res_c = float(max(0.0, np.max(grow))) if grow.size else 0.0
    inp = support(omega, U.normals @ K) + U.normals @ k0 - U.offsets
    xs = support(omega, X.normals) - X.offsets
    res_u = float(max(0.0, np.max(np.concatenate([inp, xs]))))
    return res_c, res_u


def verify_certificate(
    cert: InvariantSetCertificate,
    A: Any,
    B: Any,
    X: HPolytope,
    U: HPolytope,
    W: HPolytope,
    rng: np.random.Generator,
    n_samples: int = 1000,
) -> tuple[float, float]:
    """Re-check the two invariance properties at sampled points of Omega and all vertices of W."""
    A = _as_matrix(A)
    B = _as_matrix(B, rows=A.shape[0])
    AK = A + B @ cert.gain_K
    pts = np.array([sample_uniform(cert.omega, rng) for _ in range(n_samples)])
    if cert.omega.dim <= _VERTEX_DIM_LIMIT:
        pts = np.vstack([pts, cert.omega.vertices()])
    wv = W.vertices()
    succ = (pts @ AK.T + B @ cert.offset)[:, None, :] + wv[None, :, :]
    succ = succ.reshape(-1, A.shape[0])
    viol_c = np.max(succ @ cert.omega.normals.T - cert.omega.offsets)
    u = pts @ cert.gain_K.T + cert.offset
    viol_u = max(
        float(np.max(u @ U.normals.T - U.offsets)), float(np.max(pts @ X.normals.T - X.offsets))
    )
    return float(max(0.0, viol_c)), float(max(0.0, viol_u))


def safe_input_set(
    x: Any,
    A: Any,
    B: Any,
    omega: HPolytope,
    W: HPolytope,
    U: HPolytope,
    *,
    tightened: HPolytope | None = None,
) -> HPolytope:
    """Inputs keeping the nominal successor in ``Omega ⊖ W``: ``{u in U : A x + B u in Omega ⊖ W}``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    A = _as_matrix(A)
    B = _as_matrix(B, rows=A.shape[0])
    T = tightened if tightened is not None else pontryagin_diff(omega, W)
    if T.is_empty():
        raise EmptySafeSetError("Omega ⊖ W is empty")
    G = T.normals @ B
    rhs = T.offsets - T.normals @ (A @ x)
    zero = np.all(np.abs(G) <= _ZERO, axis=1)
    if np.any(rhs[zero] < -CERT_TOL):
        raise EmptySafeSetError(f"nominal successor of x={x.tolist()} cannot reach Omega ⊖ W")
    out = intersect(U, HPolytope(G[~zero], rhs[~zero], dim=U.dim))
    bounds = U.box_bounds()
    if bounds is not None and U.dim == 1:
        lo, hi = _axis_bounds(out)
        if lo[0] > hi[0] + CERT_TOL:
            raise EmptySafeSetError(f"safe input set at x={x.tolist()} is empty")
        hi = np.maximum(hi, lo)
        return HPolytope.box(lo, hi)
    if out.is_empty():
        raise EmptySafeSetError(f"safe input set at x={x.tolist()} is empty")
    return out
