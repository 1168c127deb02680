"""Mode identification from pilot samples by empirical centrality.

A sample is approximately central at scale ``eps`` when it has the most
other samples within ``eps`` (distances rescaled by the largest pairwise
distance, so ``eps`` lives in (0, 1)). Sweeping ``eps`` moves the central
sample between local modes.
"""

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import DegenerateCloud, DimensionMismatch, EmptyModalRegion, TooFewSamples
from .geometry import ScaleFactor, cholesky_factor
from .parallel import run_tasks
from .tmcmc import empirical_moments

MAX_POINTS = 50_000
_BLOCK_ELEMS = 4_000_000


def _as_cloud(samples):
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DimensionMismatch("samples must be an (n, d) array")
    return x


def _blocks(n, d):
    size = max(1, _BLOCK_ELEMS // max(1, n * d))
    return [slice(s, min(n, s + size)) for s in range(0, n, size)]


def _sq_dists(x, rows):
    diff = x[rows, None, :] - x[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def max_pairwise_distance(samples, workers=None):
    x = _as_cloud(samples)
    parts = run_tasks(lambda rows: float(_sq_dists(x, rows).max()), _blocks(*x.shape), workers)
    return float(np.sqrt(max(parts)))


def neighbor_counts(samples, radii, workers=None):
    """Counts ``#{l : |x_i - x_l| < r}`` for each absolute radius ``r`` (self included).

    Returns an ``(len(radii), n)`` integer array. Query rows are processed
    in blocks, optionally in parallel; the reference cloud is shared read-only.
    """
    x = _as_cloud(samples)
    r2 = np.asarray(radii, dtype=float).reshape(-1) ** 2

    def count(rows):
        d2 = _sq_dists(x, rows)
        return np.stack([(d2 < t).sum(axis=1) for t in r2])

    parts = run_tasks(count, _blocks(*x.shape), workers)
    return np.concatenate(parts, axis=1)


def _subsample(x, max_points, seed):
    if x.shape[0] <= max_points:
        return x
    rng = np.random.default_rng(seed)
    return x[np.sort(rng.choice(x.shape[0], size=max_points, replace=False))]


def approx_central(samples, eps, workers=None):
    """Index of the sample with the most neighbors within rescaled distance ``eps``.

    Ties go to the lowest index.
    """
    x = _as_cloud(samples)
    if x.shape[0] < 2:
        raise TooFewSamples("need at least two samples")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    dmax = max_pairwise_distance(x, workers)
    if dmax == 0:
        raise DegenerateCloud("all samples coincide")
    counts = neighbor_counts(x, [eps * dmax], workers)[0]
    return int(np.argmax(counts))


@dataclass
class SweepLevel:
    eps: float
    central_index: int
    count: int


@dataclass
class SweepResult:
    modes: List[np.ndarray]
    eps: List[float]
    counts: List[int]
    levels: List[SweepLevel] = field(default_factory=list)
    max_distance: float = 0.0


def mode_sweep(samples, eps_grid, merge_threshold=0.05, workers=None, max_points=MAX_POINTS, seed=0,
               return_details=False):
    """Modes of a sample cloud from the central samples over a grid of scales.

    The central sample is found at every ``eps`` in the grid. Candidates
    are taken by neighbor count, largest first, and a candidate becomes a
    new mode when its rescaled distance to every accepted mode exceeds
    ``merge_threshold``. Modes come back in that order.
    """
    x = _subsample(_as_cloud(samples), max_points, seed)
    grid = np.asarray(eps_grid, dtype=float).reshape(-1)
    if grid.size == 0 or np.any((grid <= 0) | (grid >= 1)):
        raise ValueError("eps grid must be non-empty and lie in (0, 1)")
    if x.shape[0] < 2:
        raise TooFewSamples("need at least two samples")
    dmax = max_pairwise_distance(x, workers)
    if dmax == 0:
        raise DegenerateCloud("all samples coincide")
    counts = neighbor_counts(x, grid * dmax, workers)
    central = [int(np.argmax(c)) for c in counts]
    levels = [SweepLevel(float(e), i, int(c[i])) for e, i, c in zip(grid, central, counts)]
    order = sorted(range(len(levels)), key=lambda l: (-levels[l].count, l))
    kept, kept_counts, kept_eps = [], [], []
    limit = (merge_threshold * dmax) ** 2
    for l in order:
        i = levels[l].central_index
        if all(np.sum((x[i] - x[j]) ** 2) > limit for j in kept):
            kept.append(i)
            kept_counts.append(levels[l].count)
            kept_eps.append(levels[l].eps)
    result = SweepResult([x[i].copy() for i in kept], kept_eps, kept_counts, levels, dmax)
    return result if return_details else result.modes


@dataclass(eq=False)
class ModalDecomposition:
    modes: List[np.ndarray]
    radii: np.ndarray
    weights: np.ndarray
    factors: List[ScaleFactor]
    counts: np.ndarray

    @property
    def m(self):
        return len(self.modes)

    @property
    def dim(self):
        return self.modes[0].size

    def __eq__(self, other):
        return (
            isinstance(other, ModalDecomposition)
            and self.m == other.m
            and all(np.array_equal(a, b) for a, b in zip(self.modes, other.modes))
            and np.array_equal(self.radii, other.radii)
            and np.array_equal(self.weights, other.weights)
            and all(a == b for a, b in zip(self.factors, other.factors))
            and np.array_equal(self.counts, other.counts)
        )


def ball_members(samples, center, radius):
    x = _as_cloud(samples)
    return np.sum((x - np.asarray(center, dtype=float)) ** 2, axis=1) < radius * radius


def modal_decomposition(samples, modes, eps_j, jitter=0.0):
    """Weights and covariances from the samples inside each modal ball.

    Balls use plain Euclidean radii. Weights are ball counts normalized over
    all balls; a sample inside several balls counts toward each.
    """
    x = _as_cloud(samples)
    d = x.shape[1]
    modes = [np.asarray(m, dtype=float).reshape(-1) for m in modes]
    radii = np.broadcast_to(np.asarray(eps_j, dtype=float), (len(modes),)).copy()
    counts, factors = [], []
    for j, (mode, r) in enumerate(zip(modes, radii)):
        if mode.size != d:
            raise DimensionMismatch("mode and sample dimensions differ")
        inside = x[ball_members(x, mode, r)]
        if inside.shape[0] < d + 2:
            raise EmptyModalRegion(j, inside.shape[0], d + 2)
        _, cov = empirical_moments(inside)
        counts.append(inside.shape[0])
        factors.append(cholesky_factor(cov, jitter=jitter))
    counts = np.array(counts)
    return ModalDecomposition(modes, radii, counts / counts.sum(), factors, counts)


def largest_passing_radius(predicate, lo, hi, iters=12):
    """Largest radius in ``[lo, hi]`` accepted by a monotone ``predicate`` (bisection).

    Returns None when even ``lo`` fails.
    """
    if predicate(hi):
        return hi
    if not predicate(lo):
        return None
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if predicate(mid):
            lo = mid
        else:
            hi = mid
    return lo


def polish_modes(target, modes, steps, tol=1e-6, max_iter=10_000):
    """Coordinate hill climbing on the log target from each mode."""
    out = []
    for mode in modes:
        x = np.asarray(mode, dtype=float).copy()
        h = np.broadcast_to(np.asarray(steps, dtype=float), x.shape).copy()
        fx = target(x)
        for _ in range(max_iter):
            improved = False
            for i in range(x.size):
                for sgn in (1.0, -1.0):
                    y = x.copy()
                    y[i] += sgn * h[i]
                    fy = target(y)
                    if fy > fx:
                        x, fx, improved = y, fy, True
                        break
            if not improved:
                h *= 0.5
                if np.all(h < tol):
                    break
        out.append(x)
    return out
