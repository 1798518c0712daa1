"""Convex constraint sets with projections in a weighted metric.

Projection is exact wherever a closed form or a small active-set
enumeration applies: boxes under diagonal metrics (componentwise clamp),
halfspaces under any metric, balls (radial shrink under isotropic metrics,
a scalar root find otherwise) and polyhedral systems with few rows.
Everything else runs Dykstra's alternating scheme over the component sets
until the cycle gap falls below ITERATIVE_TOL.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np
from scipy.optimize import brentq, linprog

from .metric import Metric

__all__ = [
    "MEMBERSHIP_TOL",
    "ITERATIVE_TOL",
    "ITERATIVE_MAX_ITER",
    "ProjectionError",
    "ProjectionResult",
    "ConvexSet",
    "Box",
    "Halfspace",
    "Ball",
    "Polyhedron",
    "Intersection",
    "LinearPreimage",
    "normal_cone_residual",
    "sample_points",
]

MEMBERSHIP_TOL = 1e-9
ITERATIVE_TOL = 1e-10
ITERATIVE_MAX_ITER = 10_000

# active-set enumeration is preferred to Dykstra up to this many subproblems
_ENUMERATION_LIMIT = 2000


class ProjectionError(RuntimeError):
    """Iterative projection failed to reach the fixed-point tolerance."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class ProjectionResult:
    """Projected point plus diagnostics of the scheme that produced it.

    iterations and residual are 0 for exact (closed-form or enumerated)
    projections; for Dykstra they hold the cycle count and final cycle gap.
    """

    point: np.ndarray
    iterations: int = 0
    residual: float = 0.0


def _vec(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (dim,):
        raise ValueError(f"expected vector of dimension {dim}, got shape {x.shape}")
    return x


class ConvexSet:
    """Base type: nonempty closed convex subset of R^dim."""

    dim: int

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        raise NotImplementedError

    def margin(self, x) -> float:
        """Smallest slack over the defining inequalities, negative outside.

        Linear rows are normalized by their Euclidean row norm so the value
        reads as a distance-like margin to the nearest boundary.
        """
        raise NotImplementedError

    def project(self, metric: Metric, x) -> ProjectionResult:
        raise NotImplementedError

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned (lower, upper) enclosing the set; entries may be inf."""
        raise NotImplementedError

    def halfspace_rows(self) -> tuple[np.ndarray, np.ndarray] | None:
        """(A, b) with the set equal to {x : A x <= b}, or None if not polyhedral."""
        return None

    def _checked(self, metric: Metric, x) -> np.ndarray:
        if metric.dim != self.dim:
            raise ValueError("metric dimension does not match set dimension")
        return _vec(x, self.dim)


class Box(ConvexSet):
    """Axis-aligned box; infinite bounds are allowed."""

    def __init__(self, lower, upper):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.ndim != 1 or lower.shape != upper.shape:
            raise ValueError("box bounds must be 1-d arrays of equal length")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise ValueError("box bounds must not be NaN")
        if np.any(lower > upper):
            raise ValueError("box is empty: a lower bound exceeds its upper bound")
        self.lower = lower
        self.upper = upper
        self.dim = int(lower.size)

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        x = _vec(x, self.dim)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def margin(self, x) -> float:
        x = _vec(x, self.dim)
        slacks = [np.inf]
        for i in range(self.dim):
            if np.isfinite(self.lower[i]):
                slacks.append(x[i] - self.lower[i])
            if np.isfinite(self.upper[i]):
                slacks.append(self.upper[i] - x[i])
        return float(min(slacks))

    def halfspace_rows(self):
        rows, rhs = [], []
        for i in range(self.dim):
            if np.isfinite(self.upper[i]):
                e = np.zeros(self.dim)
                e[i] = 1.0
                rows.append(e)
                rhs.append(self.upper[i])
            if np.isfinite(self.lower[i]):
                e = np.zeros(self.dim)
                e[i] = -1.0
                rows.append(e)
                rhs.append(-self.lower[i])
        if not rows:
            return np.zeros((0, self.dim)), np.zeros(0)
        return np.array(rows), np.array(rhs)

    def bounding_box(self):
        return self.lower.copy(), self.upper.copy()

    def project(self, metric: Metric, x) -> ProjectionResult:
        x = self._checked(metric, x)
        if metric.is_diagonal:
            # weighted projection is separable under a diagonal metric
            return ProjectionResult(np.clip(x, self.lower, self.upper))
        A, b = self.halfspace_rows()
        return _project_rows(A, b, metric, x)


class Halfspace(ConvexSet):
    """{x : a.x <= b} with a != 0."""

    def __init__(self, normal, offset):
        a = np.atleast_1d(np.asarray(normal, dtype=float))
        if a.ndim != 1 or not np.all(np.isfinite(a)) or np.linalg.norm(a) == 0.0:
            raise ValueError("halfspace normal must be a finite nonzero vector")
        self.a = a
        self.b = float(offset)
        self.dim = int(a.size)

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        return bool(self.a @ _vec(x, self.dim) <= self.b + tol)

    def margin(self, x) -> float:
        x = _vec(x, self.dim)
        return float((self.b - self.a @ x) / np.linalg.norm(self.a))

    def halfspace_rows(self):
        return self.a[None, :].copy(), np.array([self.b])

    def bounding_box(self):
        A, b = self.halfspace_rows()
        return _rows_bounding_box(A, b, self.dim)

    def project(self, metric: Metric, x) -> ProjectionResult:
        x = self._checked(metric, x)
        gap = float(self.a @ x - self.b)
        if gap <= 0.0:
            return ProjectionResult(x)
        d = metric.solve(self.a)  # P^{-1} a
        return ProjectionResult(x - (gap / float(self.a @ d)) * d)


class Ball(ConvexSet):
    """Euclidean ball {x : |x - center| <= radius}."""

    def __init__(self, center, radius):
        c = np.atleast_1d(np.asarray(center, dtype=float))
        r = float(radius)
        if c.ndim != 1 or not np.all(np.isfinite(c)):
            raise ValueError("ball center must be a finite vector")
        if not (r > 0.0 and np.isfinite(r)):
            raise ValueError("ball radius must be positive and finite")
        self.center = c
        self.radius = r
        self.dim = int(c.size)

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        return bool(np.linalg.norm(_vec(x, self.dim) - self.center) <= self.radius + tol)

    def margin(self, x) -> float:
        return float(self.radius - np.linalg.norm(_vec(x, self.dim) - self.center))

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def project(self, metric: Metric, x) -> ProjectionResult:
        x = self._checked(metric, x)
        d = x - self.center
        dist = np.linalg.norm(d)
        if dist <= self.radius:
            return ProjectionResult(x)
        if metric.isotropic_scale is not None:
            return ProjectionResult(self.center + (self.radius / dist) * d)
        return _project_ball_general(self.center, self.radius, metric, x)


class Polyhedron(ConvexSet):
    """{x : A x <= b}; emptiness is rejected at construction by a feasibility solve."""

    def __init__(self, A, b):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        if A.ndim != 2 or b.ndim != 1 or A.shape[0] != b.size:
            raise ValueError("polyhedron rows and offsets have mismatched shapes")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("polyhedron data must be finite")
        if np.any(np.linalg.norm(A, axis=1) == 0.0):
            raise ValueError("polyhedron has a zero row")
        res = linprog(np.zeros(A.shape[1]), A_ub=A, b_ub=b,
                      bounds=[(None, None)] * A.shape[1], method="highs")
        if res.status == 2:
            raise ValueError("polyhedron is empty")
        self.A = A
        self.b = b
        self.dim = int(A.shape[1])
        self._bbox: tuple[np.ndarray, np.ndarray] | None = None

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        return bool(np.all(self.A @ _vec(x, self.dim) <= self.b + tol))

    def margin(self, x) -> float:
        x = _vec(x, self.dim)
        norms = np.linalg.norm(self.A, axis=1)
        return float(np.min((self.b - self.A @ x) / norms))

    def halfspace_rows(self):
        return self.A.copy(), self.b.copy()

    def bounding_box(self):
        if self._bbox is None:
            self._bbox = _rows_bounding_box(self.A, self.b, self.dim)
        return self._bbox[0].copy(), self._bbox[1].copy()

    def project(self, metric: Metric, x) -> ProjectionResult:
        x = self._checked(metric, x)
        return _project_rows(self.A, self.b, metric, x)


class Intersection(ConvexSet):
    """Intersection of convex sets of a common dimension."""

    def __init__(self, sets):
        flat: list[ConvexSet] = []
        for s in sets:
            if isinstance(s, Intersection):
                flat.extend(s.sets)
            else:
                flat.append(s)
        if not flat:
            raise ValueError("intersection needs at least one set")
        dims = {s.dim for s in flat}
        if len(dims) != 1:
            raise ValueError("intersection components have mismatched dimensions")
        self.sets = tuple(flat)
        self.dim = flat[0].dim

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        return all(s.contains(x, tol) for s in self.sets)

    def margin(self, x) -> float:
        return float(min(s.margin(x) for s in self.sets))

    def halfspace_rows(self):
        parts = [s.halfspace_rows() for s in self.sets]
        if any(p is None for p in parts):
            return None
        return np.vstack([A for A, _ in parts]), np.concatenate([b for _, b in parts])

    def bounding_box(self):
        lower = np.full(self.dim, -np.inf)
        upper = np.full(self.dim, np.inf)
        rows, rhs = [], []
        for s in self.sets:
            lo, hi = s.bounding_box()
            lower = np.maximum(lower, lo)
            upper = np.minimum(upper, hi)
            part = s.halfspace_rows()
            if part is not None and part[0].size:
                rows.append(part[0])
                rhs.append(part[1])
        if rows:
            lower, upper = _rows_bounding_box(
                np.vstack(rows), np.concatenate(rhs), self.dim, lower, upper)
        return lower, upper

    def project(self, metric: Metric, x) -> ProjectionResult:
        x = self._checked(metric, x)
        rows = self.halfspace_rows()
        if rows is not None:
            return _project_rows(rows[0], rows[1], metric, x)
        point, cycles, gap = _dykstra(self.sets, metric, x)
        return ProjectionResult(point, cycles, gap)


class LinearPreimage(ConvexSet):
    """{x : K x in inner} for a square invertible K.

    Projection changes variables to the inner space, where the metric
    becomes K^{-T} P K^{-1}; margins and membership are reported in the
    inner (image) space.
    """

    def __init__(self, K, inner: ConvexSet):
        K = np.atleast_2d(np.asarray(K, dtype=float))
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise ValueError("preimage map must be square (non-square maps are not supported)")
        if K.shape[0] != inner.dim:
            raise ValueError("preimage map does not match the inner set dimension")
        if not np.all(np.isfinite(K)):
            raise ValueError("preimage map must be finite")
        if np.linalg.cond(K) > 1e12:
            raise ValueError("preimage map is singular or near-singular")
        self.K = K
        self.inner = inner
        self.dim = int(K.shape[1])
        self._Kinv = np.linalg.inv(K)

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        return self.inner.contains(self.K @ _vec(x, self.dim), tol)

    def margin(self, x) -> float:
        return self.inner.margin(self.K @ _vec(x, self.dim))

    def halfspace_rows(self):
        part = self.inner.halfspace_rows()
        if part is None:
            return None
        return part[0] @ self.K, part[1]

    def bounding_box(self):
        rows = self.halfspace_rows()
        if rows is not None and rows[0].size:
            return _rows_bounding_box(rows[0], rows[1], self.dim)
        lo, hi = self.inner.bounding_box()
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            return np.full(self.dim, -np.inf), np.full(self.dim, np.inf)
        corners = np.array([[lo[i] if bit else hi[i] for i, bit in enumerate(bits)]
                            for bits in np.ndindex(*(2,) * self.inner.dim)])
        mapped = corners @ self._Kinv.T
        return mapped.min(axis=0), mapped.max(axis=0)

    def project(self, metric: Metric, x) -> ProjectionResult:
        x = self._checked(metric, x)
        rows = self.halfspace_rows()
        if rows is not None:
            return _project_rows(rows[0], rows[1], metric, x)
        inner_metric = Metric(self._Kinv.T @ metric.P @ self._Kinv)
        res = self.inner.project(inner_metric, self.K @ x)
        return ProjectionResult(self._Kinv @ res.point, res.iterations, res.residual)


# ---------------------------------------------------------------------------
# projection engines

def _project_rows(A: np.ndarray, b: np.ndarray, metric: Metric, x: np.ndarray) -> ProjectionResult:
    """Project onto {v : A v <= b} in the metric norm."""
    if A.shape[0] == 0 or np.all(A @ x <= b):
        return ProjectionResult(x.copy())
    m, n = A.shape
    if sum(comb(m, k) for k in range(1, n + 1)) <= _ENUMERATION_LIMIT:
        return _project_rows_enumerated(A, b, metric, x)
    components = [Halfspace(A[i], b[i]) for i in range(m)]
    point, cycles, gap = _dykstra(components, metric, x)
    return ProjectionResult(point, cycles, gap)


def _project_rows_enumerated(A, b, metric: Metric, x) -> ProjectionResult:
    """Exact polyhedral projection by enumerating candidate active sets.

    The optimum equals the equality-constrained projection onto the span of
    some independent subset of at most dim active rows, so trying every
    small subset and keeping the best feasible candidate is exact.
    """
    m, n = A.shape
    Pinv_AT = metric.solve(A.T)      # n x m
    G = A @ Pinv_AT                  # Gram matrix of the rows in the P^{-1} inner product
    Ax = A @ x
    scale = 1.0 + float(np.max(np.abs(b)))
    candidates: list[tuple[float, np.ndarray]] = []
    for k in range(1, n + 1):
        for S in combinations(range(m), k):
            idx = list(S)
            try:
                mult = np.linalg.solve(G[np.ix_(idx, idx)], Ax[idx] - b[idx])
            except np.linalg.LinAlgError:
                continue
            if not np.all(np.isfinite(mult)):
                continue
            point = x - Pinv_AT[:, idx] @ mult
            violation = float(np.max(A @ point - b))
            candidates.append((violation, point))
    for tol in (1e-12 * scale, MEMBERSHIP_TOL * scale):
        feasible = [p for v, p in candidates if v <= tol]
        if feasible:
            best = min(feasible, key=lambda p: metric.norm(x - p))
            return ProjectionResult(best)
    raise ProjectionError("active-set enumeration produced no feasible candidate")


def _dykstra(components, metric: Metric, x0, tol: float = ITERATIVE_TOL,
             max_iter: int = ITERATIVE_MAX_ITER):
    """Dykstra's alternating projections in the metric inner product."""
    x = np.asarray(x0, dtype=float).copy()
    increments = [np.zeros_like(x) for _ in components]
    gap = np.inf
    for cycle in range(1, max_iter + 1):
        x_prev = x
        for i, s in enumerate(components):
            y = s.project(metric, x + increments[i]).point
            increments[i] = x + increments[i] - y
            x = y
        gap = metric.norm(x - x_prev)
        if gap < tol and all(s.contains(x, MEMBERSHIP_TOL) for s in components):
            return x, cycle, gap
    raise ProjectionError(
        f"Dykstra projection did not converge in {max_iter} cycles "
        f"(cycle gap {gap:.3e}); the intersection may be empty", residual=gap)


def _project_ball_general(center, radius, metric: Metric, x) -> ProjectionResult:
    # KKT: (P + mu I)(v - c) = P (x - c) with mu >= 0 chosen so |v - c| = radius
    d = x - center
    evals, evecs = np.linalg.eigh(metric.P)
    coef = evecs.T @ (metric.P @ d)

    def distance_gap(mu):
        return float(np.sum((coef / (evals + mu)) ** 2)) - radius ** 2

    hi = float(np.linalg.norm(metric.P @ d) / radius)  # |v - c| <= |P d| / (lmin + mu)
    while distance_gap(hi) > 0.0:
        hi *= 2.0
    mu, info = brentq(distance_gap, 0.0, hi, xtol=1e-13 * (1.0 + hi),
                      maxiter=200, full_output=True)
    point = center + evecs @ (coef / (evals + mu))
    return ProjectionResult(point, iterations=int(info.iterations), residual=0.0)


def _rows_bounding_box(A, b, dim, base_lower=None, base_upper=None):
    """Coordinate bounds of {x : A x <= b} intersected with optional base bounds."""
    lower = np.full(dim, -np.inf) if base_lower is None else np.asarray(base_lower, float).copy()
    upper = np.full(dim, np.inf) if base_upper is None else np.asarray(base_upper, float).copy()
    if A.shape[0] == 0:
        return lower, upper
    bounds = [(None if not np.isfinite(lo) else lo, None if not np.isfinite(hi) else hi)
              for lo, hi in zip(lower, upper)]
    for i in range(dim):
        c = np.zeros(dim)
        c[i] = 1.0
        for sign in (1.0, -1.0):
            res = linprog(sign * c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
            if res.status == 0:
                if sign > 0:
                    lower[i] = res.fun
                else:
                    upper[i] = -res.fun
            elif res.status == 2:
                raise ValueError("bounding box of an empty set requested")
            # status 3: unbounded in this direction, keep the base bound
    return lower, upper


# ---------------------------------------------------------------------------
# sampling and normal-cone diagnostics

def sample_points(set_: ConvexSet, count: int, rng=None, max_factor: int = 1000) -> np.ndarray:
    """Uniform rejection samples from a bounded set.

    Raises ValueError for unbounded sets; intersect with a finite Box to
    supply a bounded superset in that case.
    """
    if count <= 0:
        raise ValueError("sample count must be positive")
    rng = np.random.default_rng(rng)
    lower, upper = set_.bounding_box()
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise ValueError(
            "cannot sample from an unbounded set; intersect with a bounded Box first")
    rows = set_.halfspace_rows()
    points: list[np.ndarray] = []
    attempts = 0
    batch = max(4 * count, 64)
    while len(points) < count:
        draws = rng.uniform(lower, upper, size=(batch, set_.dim))
        if rows is not None:
            A, b = rows
            kept = draws[np.all(draws @ A.T <= b + MEMBERSHIP_TOL, axis=1)]
            points.extend(kept[:count - len(points)])
        else:
            for row in draws:
                if set_.contains(row):
                    points.append(row)
                    if len(points) == count:
                        break
        attempts += batch
        if attempts > max_factor * count:
            raise RuntimeError("rejection sampling failed; the set may have negligible volume")
    return np.array(points)


def normal_cone_residual(set_: ConvexSet, metric: Metric, xbar, direction,
                         samples: int = 1000, seed=0) -> float:
    """max over sampled points v in the set of <direction, v - xbar>_P.

    Nonpositive (up to sampling slack) exactly when -direction lies in the
    normal cone at xbar, i.e. when xbar solves the variational inequality
    whose operator value at xbar is -direction.
    """
    xbar = _vec(xbar, set_.dim)
    if not set_.contains(xbar):
        raise ValueError("xbar is not a member of the set")
    pts = sample_points(set_, samples, rng=seed)
    vals = (pts - xbar) @ (metric.P @ _vec(direction, set_.dim))
    return float(np.max(vals))
