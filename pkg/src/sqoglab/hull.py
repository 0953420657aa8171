"""Convex hull + neighborhood geometry and the generalization bound evaluators.

The region of interest is the union of the convex hull of the dataset's
(s, a) points and an external neighborhood of radius r around it. Membership
reduces to a distance-to-hull computation, solved here by Frank-Wolfe with
away steps over the simplex of convex-combination weights (dimension-agnostic,
no external solver).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class HullDistanceError(RuntimeError):
    """Distance minimization did not converge; carries the best value and gap."""

    def __init__(self, best_distance: float, duality_gap: float, max_iter: int):
        super().__init__(
            f"no convergence in {max_iter} iterations: "
            f"best distance {best_distance:.6e}, duality gap {duality_gap:.3e}"
        )
        self.best_distance = best_distance
        self.duality_gap = duality_gap


@dataclass(frozen=True)
class ChnQuery:
    """Immutable point cloud plus the neighborhood radius and hull diameter."""

    points: np.ndarray  # (n, d)
    radius_r: float
    hull_diameter_B: float

    def __post_init__(self):
        pts = np.ascontiguousarray(np.atleast_2d(np.asarray(self.points, dtype=np.float64)))
        if pts.shape[0] == 0:
            raise ValueError("point cloud must be non-empty")
        if self.radius_r < 0:
            raise ValueError("radius_r must be nonnegative")
        if self.radius_r > self.hull_diameter_B + 1e-12:
            raise ValueError("radius_r must not exceed the hull diameter")
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def max_pairwise_distance(points: np.ndarray, chunk: int = 256) -> float:
    """Exact hull diameter: the max pairwise distance is attained at vertices."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    sq = (points**2).sum(axis=1)
    best = 0.0
    for start in range(0, points.shape[0], chunk):
        block = points[start : start + chunk]
        d2 = sq[start : start + chunk, None] + sq[None, :] - 2.0 * block @ points.T
        best = max(best, float(d2.max()))
    return math.sqrt(max(best, 0.0))


def proj_dataset(x: np.ndarray, query: ChnQuery) -> tuple[np.ndarray, float]:
    """Nearest dataset point and its L2 distance; ties break to the lowest index."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (query.dim,):
        raise ValueError(f"query point must have shape ({query.dim},)")
    diff = query.points - x
    d2 = np.einsum("ij,ij->i", diff, diff)
    idx = int(np.argmin(d2))
    return query.points[idx], math.sqrt(max(float(d2[idx]), 0.0))


def _affine_projection_weights(sub: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Weights (summing to 1, sign-free) of the projection of x onto aff(sub)."""
    k = sub.shape[0]
    if k == 1:
        return np.ones(1)
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = sub @ sub.T
    kkt[:k, k] = 1.0
    kkt[k, :k] = 1.0
    rhs = np.concatenate([sub @ x, [1.0]])
    return np.linalg.lstsq(kkt, rhs, rcond=None)[0][:k]


def dist_to_hull(
    x: np.ndarray, query: ChnQuery, tol: float = 1e-7, max_iter: int = 5000
) -> float:
    """Distance from x to the convex hull of the point cloud.

    Min-norm-point iteration in the Frank-Wolfe/Gilbert family: each major
    cycle adds the vertex minimizing the gradient inner product, then a
    corrective minor cycle projects onto the affine hull of the active set and
    drops vertices whose weights leave the simplex (plain away-step FW stalls
    sublinearly on interior queries, far short of tol). Returns 0 once the
    incumbent distance drops below tol (x is inside the hull to tolerance);
    otherwise the duality gap certifies the distance to within tol.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (query.dim,):
        raise ValueError(f"query point must have shape ({query.dim},)")
    points = query.points
    if points.shape[0] == 1:
        return float(np.linalg.norm(points[0] - x))

    diff = points - x
    start_idx = int(np.argmin(np.einsum("ij,ij->i", diff, diff)))
    active = [start_idx]
    lam = np.ones(1)
    y = points[start_idx].copy()
    dist = float(np.linalg.norm(y - x))
    gap = math.inf
    for _ in range(max_iter):
        if dist < tol:
            return 0.0
        residual = y - x
        scores = points @ residual
        fw_idx = int(np.argmin(scores))
        gap = float(residual @ y - scores[fw_idx])
        # gap >= f - f* for f = 0.5 dist^2, so dist - dist* <= gap / dist
        if gap <= 0.5 * tol * max(dist, tol):
            return dist
        if fw_idx not in active:
            active.append(fw_idx)
            lam = np.append(lam, 0.0)

        # minor cycle: affine projection over the active set, walking back
        # toward the simplex just far enough to zero a negative weight, then
        # dropping it; each pass shrinks the active set, so this terminates
        for _ in range(len(active) + 2):
            sub = points[active]
            mu = _affine_projection_weights(sub, x)
            if np.all(mu >= -1e-12):
                lam = np.maximum(mu, 0.0)
                break
            neg = np.flatnonzero(mu < 0.0)
            theta = float(np.min(lam[neg] / (lam[neg] - mu[neg])))
            theta = min(max(theta, 0.0), 1.0)
            lam = (1.0 - theta) * lam + theta * mu
            keep = lam > 1e-12
            if not keep.any():
                keep[int(np.argmax(lam))] = True
            active = [i for i, k in zip(active, keep) if k]
            lam = lam[keep]
        lam = lam / lam.sum()
        y = lam @ points[active]
        dist = float(np.linalg.norm(y - x))

    raise HullDistanceError(dist, gap, max_iter)


def chn_contains(x: np.ndarray, query: ChnQuery, tol: float = 1e-7) -> bool:
    """x lies in the hull-plus-neighborhood iff its hull distance is <= r (+tol)."""
    return dist_to_hull(x, query, tol=tol) <= query.radius_r + tol


def _sample_radius(points: np.ndarray, n_samples: int, rng: np.random.Generator) -> float:
    """Max projection distance over sampled convex combinations (a lower bound on r)."""
    n, d = points.shape
    if n == 1:
        return 0.0
    best = 0.0
    batch = 512
    remaining = n_samples
    sq = (points**2).sum(axis=1)
    while remaining > 0:
        m = min(batch, remaining)
        remaining -= m
        k = min(n, d + 2)
        combos = np.empty((m, d))
        for j in range(m):
            size = int(rng.integers(2, k + 1)) if k >= 2 else 1
            idx = rng.choice(n, size=size, replace=False)
            lam = rng.dirichlet(np.ones(size))
            combos[j] = lam @ points[idx]
        d2 = (
            (combos**2).sum(axis=1)[:, None] + sq[None, :] - 2.0 * combos @ points.T
        )
        best = max(best, float(np.sqrt(np.maximum(d2.min(axis=1), 0.0)).max()))
    return best


def estimate_radius_and_diameter(
    query: ChnQuery, n_samples: int = 10_000, seed: int = 0
) -> tuple[float, float]:
    """Estimate (r, B): B exactly over dataset points, r by sampled combinations.

    The sampled r is a lower bound on the true max projection distance over the
    hull, which only shrinks the neighborhood (conservative). r <= B is enforced
    by clamping.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    diameter = max_pairwise_distance(query.points)
    radius = _sample_radius(query.points, n_samples, np.random.default_rng(seed))
    return min(radius, diameter), diameter


def chn_query_from_points(
    points: np.ndarray,
    radius_r: float | None = None,
    n_samples: int = 10_000,
    seed: int = 0,
) -> ChnQuery:
    """Build a query with estimated radius/diameter (radius may be overridden)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    probe = ChnQuery(points=points, radius_r=0.0, hull_diameter_B=math.inf)
    r_est, diameter = estimate_radius_and_diameter(probe, n_samples=n_samples, seed=seed)
    radius = r_est if radius_r is None else min(float(radius_r), diameter)
    return ChnQuery(points=points, radius_r=radius, hull_diameter_B=diameter)


# ---------------------------------------------------------------------------
# Bound evaluators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NtkBoundParams:
    """User-supplied diagnostic constants for the error-bound evaluators."""

    C: float
    C_r_delta: float
    C_T_delta: float
    dataset_size: int
    gamma: float
    r_max: float
    epsilon_kl: float
    a_min_norm: float
    a_max_norm: float

    def __post_init__(self):
        values = (
            self.C,
            self.C_r_delta,
            self.C_T_delta,
            self.r_max,
            self.epsilon_kl,
            self.a_min_norm,
            self.a_max_norm,
        )
        if not all(math.isfinite(v) and v >= 0 for v in values):
            raise ValueError("bound constants must be finite and nonnegative")
        if self.C <= 0:
            raise ValueError("C must be positive")
        if self.dataset_size < 1:
            raise ValueError("dataset_size must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")

    def d_cap(self) -> float:
        """Largest policy-vs-behavior action gap consistent with the KL budget."""
        return (self.a_min_norm**2 + self.a_max_norm**2) / 2.0 * math.sqrt(self.epsilon_kl / 2.0)


def smoothness_envelope(min_norm: float, d: float, C: float) -> float:
    """C sqrt(min_norm) sqrt(d) + 2 d; the kernel-smoothness growth in distance d."""
    if C <= 0:
        raise ValueError("C must be positive")
    if d < 0 or min_norm < 0:
        raise ValueError("d and min_norm must be nonnegative")
    return C * math.sqrt(min_norm) * math.sqrt(d) + 2.0 * d


def smoothness_bound(x: np.ndarray, x_prime: np.ndarray, C: float) -> float:
    """Bound on |Q(x) - Q(x')| from the input distance d = ||x - x'||."""
    x = np.asarray(x, dtype=np.float64)
    x_prime = np.asarray(x_prime, dtype=np.float64)
    d = float(np.linalg.norm(x - x_prime))
    min_norm = min(float(np.linalg.norm(x)), float(np.linalg.norm(x_prime)))
    return smoothness_envelope(min_norm, d, C)


def bellman_gap_bound(params: NtkBoundParams, d: float, min_norm: float) -> float:
    """Sampling error plus distance-driven OOD term for the empirical backup.

    sampling = (C_r + gamma C_T r_max / (1-gamma)) / sqrt(|D|)
    ood      = (gamma C_T / sqrt(|D|)) * (C sqrt(min_norm) sqrt(d) + 2d)
    """
    if d < 0:
        raise ValueError("d must be nonnegative")
    root_n = math.sqrt(params.dataset_size)
    c_rt = params.C_r_delta + params.gamma * params.C_T_delta * params.r_max / (1.0 - params.gamma)
    sampling = c_rt / root_n
    zeta = params.gamma * params.C_T_delta / root_n
    return sampling + zeta * smoothness_envelope(min_norm, d, params.C)
