"""Unnormalized log densities: the abstraction and the concrete targets.

Evaluators accept a single point ``(d,)`` or a batch ``(n, d)`` and return
a scalar or an ``(n,)`` array. ``-inf`` is allowed, NaN is not.
"""

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln

from .errors import DataError, DimensionMismatch, TargetEvaluationError
from .geometry import ScaleFactor, cholesky_factor, mahalanobis_sq

LOG_2PI = np.log(2.0 * np.pi)


def _logsumexp(a, axis, keepdims=False):
    """Max-shifted log-sum-exp; a slice that is all ``-inf`` gives ``-inf``.

    The evaluators sit inside per-step MCMC loops, where the generic scipy
    routine's input validation dominates the cost for small arrays.
    """
    top = np.max(a, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - shift), axis=axis, keepdims=True)) + shift
    return out if keepdims else np.squeeze(out, axis=axis)


class TargetDensity:
    """Dimension plus an unnormalized log-density evaluator.

    ``log_unnorm`` receives an ``(n, d)`` array when ``vectorized`` is true,
    otherwise one ``(d,)`` point at a time.
    """

    def __init__(self, dim, log_unnorm=None, vectorized=True, labels=None, name="custom"):
        self.dim = int(dim)
        if self.dim < 1:
            raise DimensionMismatch("dimension must be positive")
        self._fn = log_unnorm
        self.vectorized = vectorized
        self.labels = list(labels) if labels is not None else [f"theta_{i + 1}" for i in range(self.dim)]
        self.name = name

    def _evaluate(self, pts):
        if self._fn is None:
            raise NotImplementedError
        if self.vectorized:
            return np.asarray(self._fn(pts), dtype=float).reshape(-1)
        return np.array([float(self._fn(p)) for p in pts])

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        single = theta.ndim == 1
        pts = np.atleast_2d(theta)
        if pts.shape[1] != self.dim:
            raise DimensionMismatch(f"target has dimension {self.dim}, got points of shape {theta.shape}")
        vals = self._evaluate(pts)
        if np.any(np.isnan(vals)):
            raise TargetEvaluationError(f"{self.name} target returned NaN")
        vals = np.where(vals == np.inf, np.finfo(float).max, vals)
        return float(vals[0]) if single else vals

    log_unnorm = __call__


# ---------------------------------------------------------------- Gaussian mixtures


@dataclass(eq=False)
class GaussianMixtureSpec:
    weights: np.ndarray
    means: Sequence[np.ndarray]
    factors: Sequence[ScaleFactor]

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = [np.asarray(m, dtype=float) for m in self.means]
        if abs(self.weights.sum() - 1.0) > 1e-12 or np.any(self.weights < 0):
            raise ValueError("mixture weights must form a simplex")
        d = self.means[0].shape[0]
        if len(self.means) != self.weights.size or len(self.factors) != self.weights.size:
            raise DimensionMismatch("weights, means and factors must have equal length")
        if any(m.shape != (d,) for m in self.means) or any(f.dim != d for f in self.factors):
            raise DimensionMismatch("all components must share one dimension")

    @property
    def dim(self):
        return self.means[0].shape[0]


def gaussian_mixture_log_unnorm(spec, theta):
    """``log sum_c w_c N(theta; m_c, Sigma_c)`` with normalized components."""
    theta = np.asarray(theta, dtype=float)
    pts = np.atleast_2d(theta)
    if pts.shape[1] != spec.dim:
        raise DimensionMismatch(f"mixture has dimension {spec.dim}, got {theta.shape}")
    d = spec.dim
    comps = []
    with np.errstate(divide="ignore"):
        logw = np.log(spec.weights)
    for w, m, L in zip(logw, spec.means, spec.factors):
        q = mahalanobis_sq(pts, m, L)
        comps.append(w - 0.5 * q - L.log_det - 0.5 * d * LOG_2PI)
    out = _logsumexp(np.vstack(comps), axis=0)
    return float(out[0]) if theta.ndim == 1 else out


class GaussianMixtureTarget(TargetDensity):
    """Mixture target with inverse factors precomputed for fast repeated calls."""

    def __init__(self, spec, name="gaussian_mixture"):
        super().__init__(spec.dim, name=name)
        self.spec = spec
        self._inv = np.stack([np.linalg.inv(L.lower) for L in spec.factors])
        self._means = np.stack(spec.means)
        with np.errstate(divide="ignore"):
            self._const = np.log(spec.weights) - np.array([L.log_det for L in spec.factors]) - 0.5 * spec.dim * LOG_2PI

    def _evaluate(self, pts):
        diff = pts[None, :, :] - self._means[:, None, :]
        z = np.matmul(diff, np.transpose(self._inv, (0, 2, 1)))
        comps = self._const[:, None] - 0.5 * np.sum(z * z, axis=2)
        if comps.shape[0] == 1:
            return comps[0]
        return _logsumexp(comps, axis=0)


def reference_bimodal_spec(d):
    """Two components with means ``nu`` and ``2 nu`` (``nu_i = i``), weights 2/3 and 1/3,
    and common covariance ``S_ij = 10 exp(-(i - j)^2 / 2)``."""
    i = np.arange(1, d + 1, dtype=float)
    S = 10.0 * np.exp(-((i[:, None] - i[None, :]) ** 2) / 2.0)
    L = cholesky_factor(S)
    return GaussianMixtureSpec(np.array([2.0 / 3.0, 1.0 / 3.0]), [i, 2.0 * i], [L, L])


def gaussian_spec(mean, cov):
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    return GaussianMixtureSpec(np.array([1.0]), [mean], [cholesky_factor(np.atleast_2d(cov))])


# ---------------------------------------------------------------- normal mixture model


def softmax_weights(omega):
    omega = np.asarray(omega, dtype=float)
    z = omega - np.max(omega, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


@dataclass
class MixtureModelParams:
    """Component means, log precisions and weight logits of a k-component mixture."""

    nu: np.ndarray
    tau_star: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        self.nu = np.atleast_1d(np.asarray(self.nu, dtype=float))
        self.tau_star = np.atleast_1d(np.asarray(self.tau_star, dtype=float))
        self.omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        if not (self.nu.shape == self.tau_star.shape == self.omega.shape) or self.nu.ndim != 1:
            raise DimensionMismatch("nu, tau_star and omega must be vectors of equal length")

    @property
    def k(self):
        return self.nu.size

    def to_vector(self):
        return np.concatenate([self.nu, self.tau_star, self.omega])

    @classmethod
    def from_vector(cls, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.size % 3:
            raise DimensionMismatch("parameter vector length must be a multiple of 3")
        k = theta.size // 3
        return cls(theta[:k], theta[k : 2 * k], theta[2 * k :])


def mixture_labels(k):
    return (
        [f"nu_{j + 1}" for j in range(k)]
        + [f"tau_star_{j + 1}" for j in range(k)]
        + [f"omega_{j + 1}" for j in range(k)]
    )


@dataclass
class MixturePriorHyper:
    s: float = 4.0
    S: float = 2.0 * (0.2 / 0.573)
    nu0: float = 5.02
    psi: float = 33.3
    mu_omega: float = 0.0
    sigma2_omega: float = 0.5
    k_max: int = 30
    prior_k: Optional[np.ndarray] = None

    def __post_init__(self):
        if min(self.s, self.S, self.psi, self.sigma2_omega) <= 0:
            raise ValueError("s, S, psi and sigma2_omega must be positive")
        if self.prior_k is None:
            self.prior_k = np.full(self.k_max, 1.0 / self.k_max)
        self.prior_k = np.asarray(self.prior_k, dtype=float)
        if self.prior_k.size != self.k_max or abs(self.prior_k.sum() - 1.0) > 1e-12:
            raise ValueError("prior over k must be a simplex over 1..k_max")

    def log_prior_k(self, k):
        with np.errstate(divide="ignore"):
            return float(np.log(self.prior_k[k - 1]))


def _split_batch(theta, k):
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if theta.shape[1] != 3 * k:
        raise DimensionMismatch(f"expected {3 * k} coordinates, got {theta.shape[1]}")
    return theta[:, :k], theta[:, k : 2 * k], theta[:, 2 * k :]


def _loglik_batch(nu, tau_star, omega, y, chunk_elems=4_000_000):
    """Log likelihood for each row of the parameter blocks (each ``(n_p, k)``)."""
    n_p, k = nu.shape
    y = np.asarray(y, dtype=float)
    out = np.empty(n_p)
    if y.size == 0:
        out[:] = 0.0
        return out
    logw = omega - _logsumexp(omega, axis=1, keepdims=True)
    base = logw + 0.5 * tau_star - 0.5 * LOG_2PI
    tau = np.exp(tau_star)
    step = max(1, chunk_elems // max(1, y.size * k))
    for s in range(0, n_p, step):
        sl = slice(s, s + step)
        diff = y[None, :, None] - nu[sl, None, :]
        terms = base[sl, None, :] - 0.5 * tau[sl, None, :] * diff * diff
        out[sl] = _logsumexp(terms, axis=2).sum(axis=1)
    return out


def _logprior_batch(nu, tau_star, omega, hyper):
    a = hyper.s / 2.0
    rate = hyper.S / 2.0
    tau = np.exp(tau_star)
    log_tau_star = a * np.log(rate) - gammaln(a) + a * tau_star - rate * tau
    var_nu = hyper.psi / tau
    log_nu = -0.5 * (LOG_2PI + np.log(hyper.psi) - tau_star) - 0.5 * (nu - hyper.nu0) ** 2 / var_nu
    log_omega = -0.5 * (LOG_2PI + np.log(hyper.sigma2_omega)) - 0.5 * (omega - hyper.mu_omega) ** 2 / hyper.sigma2_omega
    return np.sum(log_tau_star + log_nu + log_omega, axis=1)


def mixture_log_likelihood(params, y):
    """``sum_i log sum_j pi_j N(y_i; nu_j, 1/tau_j)`` with ``tau = exp(tau_star)``."""
    return float(_loglik_batch(params.nu[None], params.tau_star[None], params.omega[None], y)[0])


def mixture_log_prior(params, hyper):
    """Normalized log prior density of ``(nu, tau_star, omega)``.

    ``tau_j ~ Gamma(s/2, rate S/2)`` carried to the log scale (Jacobian
    included), ``nu_j | tau_j ~ N(nu0, psi / tau_j)``, ``omega_j ~ N(mu_omega, sigma2_omega)``.
    """
    return float(_logprior_batch(params.nu[None], params.tau_star[None], params.omega[None], hyper)[0])


class MixturePosterior(TargetDensity):
    """Likelihood times normalized prior for fixed k; coordinates ordered
    ``(nu_1..nu_k, tau_star_1..tau_star_k, omega_1..omega_k)``."""

    def __init__(self, k, hyper, y):
        super().__init__(3 * k, labels=mixture_labels(k), name=f"normal_mixture_k{k}")
        self.k = int(k)
        self.hyper = hyper
        self.y = np.asarray(y, dtype=float).reshape(-1)

    def _evaluate(self, pts):
        nu, ts, om = _split_batch(pts, self.k)
        with np.errstate(over="ignore", invalid="ignore"):
            val = _loglik_batch(nu, ts, om, self.y) + _logprior_batch(nu, ts, om, self.hyper)
        return np.where(np.isnan(val), -np.inf, val)


def conditional_posterior_target(k, hyper, y):
    if not 1 <= k <= hyper.k_max:
        raise ValueError(f"k={k} outside 1..{hyper.k_max}")
    return MixturePosterior(k, hyper, y)


def predictive_density(params, y_tilde):
    """Mixture density at ``y_tilde`` (scalar or array)."""
    y_tilde = np.asarray(y_tilde, dtype=float)
    w = softmax_weights(params.omega)
    tau = np.exp(params.tau_star)
    yy = np.atleast_1d(y_tilde)[:, None]
    dens = np.sum(w * np.sqrt(tau / (2 * np.pi)) * np.exp(-0.5 * tau * (yy - params.nu) ** 2), axis=1)
    return float(dens[0]) if y_tilde.ndim == 0 else dens


# ---------------------------------------------------------------- data


def synthetic_acidity_like(rng, n=155, weights=(0.6, 0.4), means=(4.3, 6.3), sds=(0.35, 0.5), bounds=(2.0, 8.0)):
    """Two-component normal data restricted to ``bounds`` by rejection."""
    out = []
    while len(out) < n:
        j = rng.choice(len(weights), p=weights)
        v = rng.normal(means[j], sds[j])
        if bounds[0] < v < bounds[1]:
            out.append(v)
    return np.array(out)


def read_data_csv(path):
    """Single-column CSV of reals with an optional header line."""
    values = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not row[0].strip():
                continue
            cell = row[0].strip()
            try:
                v = float(cell)
            except ValueError:
                if lineno == 1 and not values:
                    continue
                raise DataError(f"{path}:{lineno}: not a number: {cell!r}")
            if not np.isfinite(v):
                raise DataError(f"{path}:{lineno}: non-finite value {cell!r}")
            values.append(v)
    if not values:
        raise DataError(f"{path}: no observations")
    return np.array(values)


def write_data_csv(path, y, header="y"):
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for v in y:
            fh.write(repr(float(v)) + "\n")
