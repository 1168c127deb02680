"""Ellipsoidal shells: construction, volumes, membership, uniform sampling.

A family is a sequence of nested ellipsoids
``{x : (x - mu)^T Sigma^{-1} (x - mu) <= c_i}`` with ``0 = c_0 < c_1 < ...``;
shell ``i`` is the closed region between ellipsoids ``i - 1`` and ``i``.
All volumes are carried as logarithms.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln

from .errors import DimensionMismatch, InvalidRadii, NotPositiveDefinite

JITTER_CAP = 1e-2


@dataclass(frozen=True, eq=False)
class ScaleFactor:
    """Lower-triangular Cholesky factor ``L`` of a scale matrix ``L @ L.T``."""

    lower: np.ndarray

    def __post_init__(self):
        L = np.array(self.lower, dtype=float)
        if L.ndim != 2 or L.shape[0] != L.shape[1]:
            raise DimensionMismatch("scale factor must be square")
        if not np.all(np.diag(L) > 0):
            raise NotPositiveDefinite("scale factor needs a strictly positive diagonal")
        L = np.tril(L)
        L.setflags(write=False)
        object.__setattr__(self, "lower", L)

    @property
    def dim(self):
        return self.lower.shape[0]

    @property
    def log_det(self):
        """log det L, i.e. half the log determinant of the scale matrix."""
        return float(np.sum(np.log(np.diag(self.lower))))

    @property
    def matrix(self):
        return self.lower @ self.lower.T

    def __eq__(self, other):
        return isinstance(other, ScaleFactor) and np.array_equal(self.lower, other.lower)

    @classmethod
    def identity(cls, d):
        return cls(np.eye(d))


def cholesky_factor(sigma, jitter=0.0, jitter_cap=JITTER_CAP):
    """Factor ``sigma + jitter * I``, escalating the jitter tenfold on failure.

    The first escalation step starts from ``1e-12`` times the mean diagonal
    when ``jitter`` is zero. Raises NotPositiveDefinite once the jitter would
    exceed ``jitter_cap``.
    """
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    if sigma.shape[0] != sigma.shape[1]:
        raise DimensionMismatch(f"scale matrix must be square, got {sigma.shape}")
    if not np.all(np.isfinite(sigma)):
        raise NotPositiveDefinite("scale matrix has non-finite entries")
    if not np.allclose(sigma, sigma.T, rtol=1e-10, atol=1e-12 * np.max(np.abs(sigma), initial=1.0)):
        raise NotPositiveDefinite("scale matrix is not symmetric")
    sigma = 0.5 * (sigma + sigma.T)
    d = sigma.shape[0]
    scale = max(float(np.mean(np.abs(np.diag(sigma)))), 1e-300)
    current = float(jitter)
    while True:
        try:
            L = np.linalg.cholesky(sigma + current * np.eye(d))
            if np.all(np.diag(L) > 0) and np.all(np.isfinite(L)):
                return ScaleFactor(L)
        except np.linalg.LinAlgError:
            pass
        current = current * 10.0 if current > 0 else 1e-12 * scale
        if current > jitter_cap * scale:
            raise NotPositiveDefinite(
                f"factorization failed with jitter up to {jitter_cap * scale:.3g}"
            )


def mahalanobis_sq(theta, mu, scale):
    """Squared Mahalanobis distance via one triangular solve.

    ``theta`` may be a single point or an ``(n, d)`` array of points.
    """
    theta = np.asarray(theta, dtype=float)
    mu = np.asarray(mu, dtype=float)
    d = scale.dim
    if mu.shape != (d,) or theta.shape[-1] != d or theta.ndim > 2:
        raise DimensionMismatch(
            f"point shape {theta.shape} and center shape {mu.shape} do not match dimension {d}"
        )
    diff = theta - mu
    z = solve_triangular(scale.lower, diff.T, lower=True, check_finite=False)
    return np.sum(z * z, axis=0)


def _log_unit_ball(d):
    return 0.5 * d * np.log(np.pi) - gammaln(0.5 * d + 1.0)


def shell_log_volume(d, scale, c_lo, c_hi):
    """Log Lebesgue measure of ``{c_lo <= mahalanobis_sq <= c_hi}``."""
    if not (0 <= c_lo < c_hi) or not np.isfinite(c_hi):
        raise InvalidRadii(f"need 0 <= c_lo < c_hi, got c_lo={c_lo}, c_hi={c_hi}")
    half = 0.5 * d
    log_outer = half * np.log(c_hi)
    if c_lo > 0:
        # c_hi^{d/2} (1 - (c_lo/c_hi)^{d/2}), the bracket via expm1
        log_frac = np.log(-np.expm1(half * (np.log(c_lo) - np.log(c_hi))))
    else:
        log_frac = 0.0
    return float(_log_unit_ball(d) + scale.log_det + log_outer + log_frac)


@dataclass(frozen=True, eq=False)
class ShellFamily:
    """Concentric ellipsoids around ``center`` with squared radii ``radii_sq``.

    ``radii_sq[0]`` is always 0; shells are indexed ``1..count``. When the
    family was built from a linear-in-sqrt(c) schedule, ``sqrt_c1`` and
    ``delta`` are kept so the family can be extended.
    """

    center: np.ndarray
    scale: ScaleFactor
    radii_sq: np.ndarray
    sqrt_c1: Optional[float] = None
    delta: Optional[float] = None

    def __post_init__(self):
        center = np.array(self.center, dtype=float).reshape(-1)
        radii = np.array(self.radii_sq, dtype=float).reshape(-1)
        if center.shape[0] != self.scale.dim:
            raise DimensionMismatch("center and scale dimensions differ")
        if radii.size < 2 or radii[0] != 0.0:
            raise InvalidRadii("radii_sq must start at 0 and hold at least one shell")
        if not np.all(np.isfinite(radii)) or not np.all(np.diff(radii) > 0):
            raise InvalidRadii("radii_sq must be finite and strictly increasing")
        center.setflags(write=False)
        radii.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radii_sq", radii)

    @classmethod
    def from_schedule(cls, center, scale, sqrt_c1, delta, count):
        return cls(center, scale, build_radii(sqrt_c1, delta, count), sqrt_c1=sqrt_c1, delta=delta)

    @property
    def dim(self):
        return self.scale.dim

    @property
    def count(self):
        return self.radii_sq.size - 1

    def shell(self, i):
        if not 1 <= i <= self.count:
            raise InvalidRadii(f"shell index {i} outside 1..{self.count}")
        return Shell(self, i)

    def with_count(self, count):
        """Same family continued (or truncated) to ``count`` shells."""
        if count <= self.count:
            return ShellFamily(self.center, self.scale, self.radii_sq[: count + 1], self.sqrt_c1, self.delta)
        if self.sqrt_c1 is None or self.delta is None or self.delta <= 0:
            raise InvalidRadii("family has no extendable radii schedule")
        return ShellFamily.from_schedule(self.center, self.scale, self.sqrt_c1, self.delta, count)

    def __eq__(self, other):
        return (
            isinstance(other, ShellFamily)
            and np.array_equal(self.center, other.center)
            and self.scale == other.scale
            and np.array_equal(self.radii_sq, other.radii_sq)
            and self.sqrt_c1 == other.sqrt_c1
            and self.delta == other.delta
        )


@dataclass(frozen=True)
class Shell:
    family: ShellFamily
    index: int

    @property
    def c_lo(self):
        return float(self.family.radii_sq[self.index - 1])

    @property
    def c_hi(self):
        return float(self.family.radii_sq[self.index])

    @property
    def dim(self):
        return self.family.dim

    def log_volume(self):
        return shell_log_volume(self.dim, self.family.scale, self.c_lo, self.c_hi)


def build_radii(sqrt_c1, delta, count):
    """Squared radii ``c_i = (sqrt_c1 + delta (i - 1))^2`` prefixed by ``c_0 = 0``."""
    count = int(count)
    if sqrt_c1 <= 0 or count < 1 or delta < 0:
        raise InvalidRadii("need sqrt_c1 > 0, delta >= 0 and at least one shell")
    if delta == 0 and count > 1:
        raise InvalidRadii("delta = 0 only describes a single ellipsoid")
    roots = sqrt_c1 + delta * np.arange(count, dtype=float)
    radii = np.concatenate(([0.0], roots * roots))
    if not np.all(np.diff(radii) > 0):
        raise InvalidRadii("delta is too small to separate consecutive radii in floating point")
    return radii


def shell_index(theta, family):
    """Smallest ``i`` with ``c_{i-1} <= m <= c_i``, or None beyond ``c_M``.

    Accepts an ``(n, d)`` array too, returning an integer array with 0 for
    points outside the family.
    """
    m = mahalanobis_sq(theta, family.center, family.scale)
    idx = np.maximum(np.searchsorted(family.radii_sq, m, side="left"), 1)
    idx = np.where(m > family.radii_sq[-1], 0, idx)
    if np.ndim(theta) == 1:
        i = int(np.ravel(idx)[0])
        return i if i > 0 else None
    return idx


def sample_uniform_shell(rng, shell, size=None):
    """Uniform draw(s) on a shell.

    Direction is a normalized Gaussian vector; the radius follows the
    inverse CDF of ``r^d`` between the two boundaries, written relative to
    the outer radius so nothing overflows in high dimension.
    """
    d = shell.dim
    n = 1 if size is None else int(size)
    c_lo, c_hi = shell.c_lo, shell.c_hi
    u = rng.standard_normal((n, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    rho = np.exp(0.5 * d * (np.log(c_lo) - np.log(c_hi))) if c_lo > 0 else 0.0
    w = rng.random(n)
    r = np.sqrt(c_hi) * (rho + w * (1.0 - rho)) ** (1.0 / d)
    pts = shell.family.center + (r[:, None] * u) @ shell.family.scale.lower.T
    return pts[0] if size is None else pts
