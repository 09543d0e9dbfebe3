"""Scalar and vector robust aggregators plus adversarial constructions.

The median is the k-th smallest element with k = floor(n/2) + 1, so it is
always a member of the input set. For n = 4 this selects the 3rd smallest;
for odd n it coincides with the conventional median.
"""

import math
from dataclasses import dataclass

import numpy as np


class GeomedConvergenceError(RuntimeError):
    """Weiszfeld iteration did not converge; carries the last iterate."""

    def __init__(self, message, last_iterate):
        super().__init__(message)
        self.last_iterate = np.asarray(last_iterate, dtype=np.float64)


@dataclass
class SampleSet:
    """n samples (scalars or C-vectors) whose first mal_count are adversarial."""

    values: np.ndarray
    mal_count: int = 0

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim not in (1, 2) or arr.shape[0] < 1:
            raise ValueError("values must be a non-empty list of reals or vectors")
        if not 0 <= self.mal_count <= arr.shape[0]:
            raise ValueError("mal_count must lie in [0, n]")
        self.values = arr

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def malicious(self):
        return self.values[: self.mal_count]

    @property
    def benign(self):
        return self.values[self.mal_count :]


def median(values):
    """k-th smallest with k = floor(n/2) + 1; always an element of the input."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("median of empty set")
    k = arr.size // 2
    return float(np.partition(arr, k)[k])


def mean(values):
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("mean of empty set")
    return math.fsum(arr) / arr.size


def cwmed(values):
    """Coordinate-wise median of equal-length vectors."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cwmed of empty set")
    if arr.ndim != 2:
        raise ValueError("cwmed expects a list of equal-length vectors")
    k = arr.shape[0] // 2
    return np.partition(arr, k, axis=0)[k]


def mad(values):
    """Median absolute deviation from the median."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("mad of empty set")
    return median(np.abs(arr - median(arr)))


def _distance_sum(z, pts):
    return float(np.linalg.norm(pts - z, axis=1).sum())


def _point_optimality(p, pts, eps=1e-12):
    """Subgradient optimality of the input point p.

    p minimizes the distance sum iff the resultant of the unit directions
    toward the remaining points has norm at most p's multiplicity. The
    test is independent of the current iterate, so it resolves the
    anchor-point singularity (where plain Weiszfeld turns sublinear)
    exactly. Returns (is_optimal, descent_direction).
    """
    d = np.linalg.norm(pts - p, axis=1)
    rest = pts[d > eps]
    if rest.shape[0] == 0:
        return True, None
    dirs = (rest - p) / np.linalg.norm(rest - p, axis=1)[:, None]
    r = dirs.sum(axis=0)
    if np.linalg.norm(r) <= pts.shape[0] - rest.shape[0]:
        return True, None
    return False, r / np.linalg.norm(r)


def geomed(values, tol=1e-9, max_iter=1000):
    """Geometric median via Weiszfeld iteration with anchor handling.

    Starts from the coordinate-wise median. Each iteration tests the
    nearest input point's subgradient optimality condition: if that point
    is the minimizer it is returned exactly, otherwise an iterate landing
    on it is nudged off along the descent direction.
    """
    pts = np.asarray(values, dtype=np.float64)
    if pts.size == 0:
        raise ValueError("geomed of empty set")
    if pts.ndim != 2:
        raise ValueError("geomed expects a list of equal-length vectors")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if pts.shape[0] == 1:
        return pts[0].copy()
    z = cwmed(pts)
    prev_step = None
    for it in range(max_iter):
        d = np.linalg.norm(pts - z, axis=1)
        nearest = int(np.argmin(d))
        anchor = pts[nearest]
        optimal, direction = _point_optimality(anchor, pts)
        if optimal:
            return anchor.copy()
        if d[nearest] <= 1e-12:
            z = anchor + 1e-9 * direction
            d = np.linalg.norm(pts - z, axis=1)
        w = 1.0 / d
        z_next = (w[:, None] * pts).sum(axis=0) / w.sum()
        step = z_next - z
        if np.linalg.norm(step) <= tol:
            return z_next
        # Aitken-style extrapolation along the contraction direction; near
        # a 120-degree vertex transition the plain rate approaches 1 and
        # thousands of iterations would be needed. Accepted only when the
        # objective does not increase, so convergence is preserved.
        if prev_step is not None and it % 4 == 0:
            denom = float(prev_step @ prev_step)
            if denom > 0.0:
                rate = float(step @ prev_step) / denom
                if 0.0 < rate < 0.9999:
                    z_acc = z_next + step * (rate / (1.0 - rate))
                    if _distance_sum(z_acc, pts) <= _distance_sum(z_next, pts):
                        prev_step = None
                        z = z_acc
                        continue
        prev_step = step
        z = z_next
    raise GeomedConvergenceError(
        f"no convergence after {max_iter} iterations", z
    )


def worst_case_mean_shift(ben, m, L):
    """Mean shift from m adversarial copies of mean(ben) + L.

    Equals (m / (m + len(ben))) * |L| up to roundoff.
    """
    ben = np.asarray(ben, dtype=np.float64).ravel()
    if m < 1:
        raise ValueError("m must be at least 1")
    if ben.size == 0:
        raise ValueError("benign set must be non-empty")
    mu_ben = mean(ben)
    mal = [mu_ben + L] * m
    return abs(mean(np.concatenate([mal, ben])) - mu_ben)


def median_breach_search(ben, m, trials, magnitude, seed=0):
    """Adversarial search for the largest median displacement.

    Tries extreme placements (all at +/- magnitude, at the benign median
    and range edges) plus ``trials`` randomized placements, and returns
    the largest observed |median(mal + ben) - median(ben)|. For
    m < (m + len(ben)) / 2 the result is bounded by the benign spread.
    """
    ben = np.asarray(ben, dtype=np.float64).ravel()
    if ben.size == 0:
        raise ValueError("benign set must be non-empty")
    if m == 0:
        return 0.0
    med_ben = median(ben)
    lo, hi = float(ben.min()), float(ben.max())
    pool = np.unique(
        np.concatenate([ben, [-magnitude, magnitude, lo - 1.0, hi + 1.0, med_ben]])
    )
    rng = np.random.default_rng(seed)
    best = 0.0

    def probe(mal_values):
        nonlocal best
        shift = abs(median(np.concatenate([mal_values, ben])) - med_ben)
        if shift > best:
            best = shift

    for v in pool:
        probe(np.full(m, v))
    for _ in range(trials):
        mal = np.where(
            rng.random(m) < 0.5,
            rng.choice(pool, size=m),
            rng.uniform(lo - 1.0, hi + 1.0, size=m),
        )
        probe(mal)
    return best


def lemma9_factor(n, m):
    """Geometric-median contamination factor 1 / sqrt(1 - m^2/(n-m)^2)."""
    if m < 1:
        raise ValueError("m must be at least 1")
    if 2 * m >= n:
        raise ValueError("breakdown point exceeded")
    ratio = m / (n - m)
    return 1.0 / math.sqrt(1.0 - ratio * ratio)
