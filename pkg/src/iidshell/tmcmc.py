"""Additive transformation-based MCMC for the pilot runs.

Each move draws one innovation ``eps = |z|`` and moves every coordinate by
``+-a_i eps`` with independent fair signs. The move has unit Jacobian and
is symmetric, so acceptance is the plain target ratio.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import TargetUnevaluable, TooFewSamples
from .parallel import TAG_PILOT, stream

MAX_INIT_DRAWS = 1000
_BLOCK = 4096


@dataclass
class ChainConfig:
    n_iter: int
    burn_in: int
    thin: int = 1
    move_scales: Optional[Sequence[float]] = None
    seed: int = 0
    init: Optional[Sequence[float]] = None
    init_box: tuple = (-1.0, 1.0)
    adapt_iter: int = 2000
    adapt_rounds: int = 3
    stream_key: tuple = ()

    def __post_init__(self):
        if not (0 <= self.burn_in < self.n_iter) or self.thin < 1:
            raise ValueError("need 0 <= burn_in < n_iter and thin >= 1")

    @property
    def n_kept(self):
        return (self.n_iter - self.burn_in) // self.thin


@dataclass
class ChainOutput:
    samples: np.ndarray
    acceptance_rate: float
    move_scales: np.ndarray
    n_accepted: int = 0
    n_steps: int = 0


def _move(theta, lp, scales, eps, signs, u, log_target):
    proposal = theta + signs * scales * eps
    lp_new = log_target(proposal)
    if lp_new - lp >= 0 or np.log(u) < lp_new - lp:
        return proposal, lp_new, True
    return theta, lp, False


def additive_tmcmc_step(theta, move_scales, rng, log_target, log_current=None):
    """One additive TMCMC move; returns ``(theta', accepted)``."""
    theta = np.asarray(theta, dtype=float)
    scales = np.asarray(move_scales, dtype=float)
    lp = log_target(theta) if log_current is None else log_current
    eps = abs(rng.standard_normal())
    signs = np.where(rng.random(theta.size) < 0.5, -1.0, 1.0)
    u = rng.random()
    new, _, acc = _move(theta, lp, scales, eps, signs, u, log_target)
    return new, acc


def _run(theta, lp, scales, n, rng, log_target, keep=None):
    """Advance ``n`` moves; ``keep(t, theta)`` is called after move ``t`` (1-based)."""
    d = theta.size
    accepted = 0
    t = 0
    while t < n:
        m = min(_BLOCK, n - t)
        eps = np.abs(rng.standard_normal(m))
        signs = np.where(rng.random((m, d)) < 0.5, -1.0, 1.0)
        us = rng.random(m)
        for j in range(m):
            theta, lp, acc = _move(theta, lp, scales, eps[j], signs[j], us[j], log_target)
            accepted += acc
            t += 1
            if keep is not None:
                keep(t, theta)
    return theta, lp, accepted


def _initial_point(target, config, rng):
    if config.init is not None:
        theta = np.asarray(config.init, dtype=float)
        lp = target(theta)
        if np.isfinite(lp):
            return theta, lp
    lo, hi = config.init_box
    for _ in range(MAX_INIT_DRAWS):
        theta = rng.uniform(lo, hi, size=target.dim)
        lp = target(theta)
        if np.isfinite(lp):
            return theta, lp
    raise TargetUnevaluable(f"no finite target value in {MAX_INIT_DRAWS} draws from box {config.init_box}")


def run_chain(target, config):
    """Pilot chain: optional frozen-after-adaptation scales, burn-in, thinning.

    Deterministic given ``config.seed``.
    """
    rng = stream(config.seed, TAG_PILOT, *config.stream_key)
    d = target.dim
    theta, lp = _initial_point(target, config, rng)
    if config.move_scales is not None:
        scales = np.broadcast_to(np.asarray(config.move_scales, dtype=float), (d,)).copy()
    else:
        scales = np.full(d, 2.4 / np.sqrt(d))
        for _ in range(config.adapt_rounds):
            trace = np.empty((config.adapt_iter, d))

            def record(t, x, trace=trace):
                trace[t - 1] = x

            theta, lp, _ = _run(theta, lp, scales, config.adapt_iter, rng, target, record)
            spread = trace.std(axis=0)
            scales = np.where(spread > 1e-8, 2.4 / np.sqrt(d) * spread, scales)

    kept = np.empty((config.n_kept, d))

    def collect(t, x):
        if t > config.burn_in and (t - config.burn_in) % config.thin == 0:
            kept[(t - config.burn_in) // config.thin - 1] = x

    theta, lp, accepted = _run(theta, lp, scales, config.n_iter, rng, target, collect)
    return ChainOutput(kept, accepted / config.n_iter, scales, accepted, config.n_iter)


def empirical_moments(samples):
    """Mean and symmetrized unbiased covariance of an ``(n, d)`` sample."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if n < d + 1:
        raise TooFewSamples(f"need at least {d + 1} samples for a {d}-dimensional covariance, got {n}")
    mean = x.mean(axis=0)
    c = x - mean
    cov = c.T @ c / (n - 1)
    return mean, 0.5 * (cov + cov.T)
