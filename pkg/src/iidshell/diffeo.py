"""Isotropic flattening map ``h(x) = f(|x|) x / |x|`` and its calculus.

``f`` is cubic up to the knot ``1/b`` and exponential beyond it, joined
with matching value ``2e/3`` and slope ``b e``. The log-Jacobian of ``h``
is always evaluated at the pre-image point, which makes the pushforward
density an exact change of variables.
"""

from dataclasses import dataclass

import numpy as np

E = np.e
KNOT_VALUE = 2.0 * E / 3.0
_NEAR_ZERO = 1e-12


def f_scalar(x, b):
    """The radial profile ``f``; works elementwise on arrays."""
    x = np.asarray(x, dtype=float)
    z = b * x
    with np.errstate(over="ignore"):
        out = np.where(z > 1.0, np.exp(np.minimum(z, 709.0)) - E / 3.0, E * z**3 / 6.0 + E * z / 2.0)
    out = np.where(z > 709.0, np.inf, out)
    return out[()] if out.ndim == 0 else out


def f_prime(x, b):
    x = np.asarray(x, dtype=float)
    z = b * x
    with np.errstate(over="ignore"):
        out = np.where(z > 1.0, b * np.exp(z), b * E * (z * z + 1.0) / 2.0)
    return out[()] if out.ndim == 0 else out


def _log_f_over_x(x, b):
    """``log(f(x) / x)`` without cancellation; the limit ``log(b e / 2)`` at 0."""
    x = np.asarray(x, dtype=float)
    z = b * x
    cubic = np.log(b * E * (z * z + 3.0) / 6.0)
    # exp branch: log(e^z - e/3) - log x = z + log1p(-(e/3) e^{-z}) - log x
    zs = np.maximum(z, 1.0)
    with np.errstate(divide="ignore"):
        expo = zs + np.log1p(-(E / 3.0) * np.exp(-zs)) - np.log(np.maximum(x, 1e-300))
    return np.where(z > 1.0, expo, cubic)


def _log_f_prime(x, b):
    x = np.asarray(x, dtype=float)
    z = b * x
    return np.where(z > 1.0, np.log(b) + z, np.log(b * E / 2.0) + np.log1p(z * z))


def f_inverse(y, b, rtol=1e-13, max_iter=100):
    """Inverse of ``f`` elementwise.

    Above the knot value the exponential branch inverts in closed form.
    Below it, ``z = b x`` solves ``z^3 + 3 z = 6 y / e`` on ``[0, 1]``;
    Newton from ``min(1, 2y/e)`` decreases monotonically onto the root
    because the cubic is convex and increasing there, and any step leaving
    the bracket falls back to bisection.
    """
    y = np.asarray(y, dtype=float)
    scalar = y.ndim == 0
    y = np.atleast_1d(y)
    out = np.empty_like(y)
    hi = y > KNOT_VALUE
    out[hi] = np.log(y[hi] + E / 3.0) / b
    lo = ~hi
    if np.any(lo):
        w = 6.0 * y[lo] / E
        z = np.minimum(1.0, w / 3.0)
        a = np.zeros_like(z)
        c = np.ones_like(z)
        for _ in range(max_iter):
            g = z**3 + 3.0 * z - w
            a = np.where(g < 0, z, a)
            c = np.where(g > 0, z, c)
            step = g / (3.0 * z * z + 3.0)
            z_new = z - step
            outside = (z_new < a) | (z_new > c)
            z_new = np.where(outside, 0.5 * (a + c), z_new)
            done = np.abs(z_new - z) <= rtol * np.abs(z_new)
            z = z_new
            if np.all(done | (z == 0.0)):
                break
        out[lo] = z / b
    return out[0] if scalar else out


def _norms(v):
    """Euclidean norms along the last axis, scaled so huge entries do not overflow."""
    v = np.asarray(v, dtype=float)
    top = np.max(np.abs(v), axis=-1)
    safe = np.where((top > 0) & np.isfinite(top), top, 1.0)
    out = safe * np.linalg.norm(v / np.asarray(safe)[..., None], axis=-1)
    return np.where(np.isfinite(top), out, top)


def h_forward(theta, b):
    """``gamma = f(|theta|) theta / |theta|`` (rows of a 2-d array map independently)."""
    theta = np.asarray(theta, dtype=float)
    x = _norms(theta)
    ratio = np.exp(_log_f_over_x(x, b))
    return theta * np.asarray(ratio)[..., None]


def h_inverse(gamma, b):
    """``theta = f^{-1}(|gamma|) gamma / |gamma|``; the origin maps to itself."""
    gamma = np.asarray(gamma, dtype=float)
    y = _norms(gamma)
    x = f_inverse(y, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(y > 0, x / np.where(y > 0, y, 1.0), 0.0)
    return gamma * np.asarray(ratio)[..., None]


def log_jacobian_at_theta(theta, b):
    """``log |det grad h|`` at ``theta``.

    ``log f'(r) + (d - 1)(log f(r) - log r)``, using the analytic limit
    ``d log(b e / 2)`` for ``r < 1e-12``.
    """
    theta = np.asarray(theta, dtype=float)
    d = theta.shape[-1]
    x = _norms(theta)
    val = _log_f_prime(x, b) + (d - 1) * _log_f_over_x(x, b)
    val = np.where(x < _NEAR_ZERO, d * np.log(b * E / 2.0), val)
    return val[()] if np.ndim(val) == 0 else val


def log_pushforward(log_target, gamma, b):
    """Unnormalized log density of ``gamma = h(theta)`` when theta has density ``exp(log_target)``."""
    theta = h_inverse(gamma, b)
    return log_target(theta) - log_jacobian_at_theta(theta, b)


@dataclass(frozen=True)
class Diffeomorphism:
    b: float

    def __post_init__(self):
        if not (self.b > 0 and np.isfinite(self.b)):
            raise ValueError(f"flattening parameter must be positive, got {self.b}")

    def forward(self, theta):
        return h_forward(theta, self.b)

    def inverse(self, gamma):
        return h_inverse(gamma, self.b)

    def log_jacobian(self, theta):
        return log_jacobian_at_theta(theta, self.b)

    def log_pushforward(self, log_target, gamma):
        return log_pushforward(log_target, gamma, self.b)
