"""Perfect sampling inside shells and the iid samplers built on it.

Inside shell ``A_i`` the Metropolis-Hastings kernel ``P`` with the uniform
(pushed-forward) proposal ``Q`` satisfies ``P >= p Q``, so
``P = p Q + (1 - p) R``. The stationary law then decomposes as
``sum_{t >= 0} p (1 - p)^t Q R^t``: a draw from ``Q`` followed by
``T - 1`` residual moves, ``T ~ Geometric(p)`` on ``{1, 2, ...}``, is an
exact draw from the target restricted to the shell.
"""

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .errors import InvalidProbability, ShellCapExceeded, ZeroMinorization
from .estimation import (
    DEFAULT_ETA,
    DEFAULT_MC_SIZE,
    FamilyTable,
    estimate_family,
    k_posterior,
    shell_ratio,
)
from .geometry import sample_uniform_shell
from .parallel import TAG_DRAW, run_tasks, stream

_CHUNK = 65_536
DEFAULT_MAX_SHELLS = 1 << 22


def sample_geometric(p, rng):
    """``T`` with ``P(T = t) = p (1 - p)^(t - 1)``, ``t >= 1``, by inverse CDF."""
    if not 0 < p <= 1:
        raise InvalidProbability(f"geometric parameter must lie in (0, 1], got {p}")
    if p == 1:
        return 1
    u = 1.0 - rng.random()
    return max(1, math.ceil(math.log(u) / math.log1p(-p)))


def residual_accept_prob(r_new, r_cur, p_hat):
    """Probability that the residual kernel moves, and whether minorization failed.

    The independence-sampler acceptance ``alpha`` is thinned to
    ``(alpha - p) / (1 - p)``; values of ``alpha`` below ``p`` are clamped
    to zero and flagged.
    """
    alpha = np.exp(np.minimum(0.0, np.asarray(r_new) - np.asarray(r_cur)))
    prob = np.clip((alpha - p_hat) / (1.0 - p_hat), 0.0, 1.0)
    return prob, alpha < p_hat


@dataclass
class ShellSamplerContext:
    target: Callable
    diff: object
    shell: object
    estimate: object
    ratio_mode: str = "proposal_ratio"

    def __post_init__(self):
        if not 0 < self.estimate.p_hat < 1:
            raise ZeroMinorization(
                f"shell {self.shell.index}: minorization probability {self.estimate.p_hat} outside (0, 1)"
            )

    @property
    def p_hat(self):
        return self.estimate.p_hat

    def propose(self, rng, n):
        """``n`` proposals from ``Q``: uniform points of the shell and their ratios."""
        theta = sample_uniform_shell(rng, self.shell, n)
        r, _, gamma = shell_ratio(self.target, self.diff, theta, self.estimate.log_volume, self.ratio_mode)
        return theta, gamma, r

    def ratio_at_gamma(self, gamma):
        theta = self.diff.inverse(gamma)
        r, _, _ = shell_ratio(self.target, self.diff, theta, self.estimate.log_volume, self.ratio_mode)
        return r


def residual_step(gamma, ctx, rng, stats=None):
    """One move of the residual kernel from ``gamma`` (a point or an ``(n, d)`` batch)."""
    gamma = np.asarray(gamma, dtype=float)
    single = gamma.ndim == 1
    cur = np.atleast_2d(gamma)
    n = cur.shape[0]
    r_cur = ctx.ratio_at_gamma(cur)
    _, g_new, r_new = ctx.propose(rng, n)
    prob, violated = residual_accept_prob(r_new, r_cur, ctx.p_hat)
    move = rng.random(n) < prob
    out = np.where(move[:, None], g_new, cur)
    if stats is not None:
        stats["steps"] = stats.get("steps", 0) + n
        stats["violations"] = stats.get("violations", 0) + int(violated.sum())
    return out[0] if single else out


@dataclass
class ShellDraw:
    theta: np.ndarray
    T: int
    violations: int


def perfect_sample_shell(ctx, rng):
    """Exact draw from the target restricted to ``ctx.shell``.

    All ``T`` proposals (the regeneration draw and the ``T - 1`` residual
    proposals) are independent of the chain state, so they are drawn and
    evaluated in vectorized chunks before the sequential accept scan. The
    pre-image ``theta`` is carried alongside ``gamma`` and returned directly.
    """
    p = ctx.p_hat
    T = sample_geometric(p, rng)
    remaining = T
    theta_cur, r_cur = None, None
    violations = 0
    while remaining > 0:
        m = min(_CHUNK, remaining)
        theta, _, r = ctx.propose(rng, m)
        u = rng.random(m)
        start = 0
        if theta_cur is None:
            theta_cur, r_cur = theta[0], r[0]
            start = 1
        for j in range(start, m):
            alpha = math.exp(min(0.0, r[j] - r_cur))
            if alpha < p:
                violations += 1
                continue
            if u[j] < (alpha - p) / (1.0 - p):
                theta_cur, r_cur = theta[j], r[j]
        remaining -= m
    return ShellDraw(np.array(theta_cur), T, violations)


@dataclass
class IidSample:
    draw_index: int
    theta: np.ndarray
    mode_j: int
    shell_i: int
    T: int
    k: Optional[int] = None
    violations: int = 0

    def record(self):
        return {
            "draw_index": self.draw_index,
            "k": self.k,
            "theta": [float(v) for v in self.theta],
            "mode_j": self.mode_j,
            "shell_i": self.shell_i,
            "T": self.T,
            "violations": self.violations,
        }

    @classmethod
    def from_record(cls, rec):
        return cls(int(rec["draw_index"]), np.array(rec["theta"], dtype=float), int(rec["mode_j"]),
                   int(rec["shell_i"]), int(rec["T"]), None if rec.get("k") is None else int(rec["k"]),
                   int(rec.get("violations", 0)))


class MultimodalSampler:
    """iid draws from a target decomposed around several modes.

    Each draw picks a mode family with the modal weights, a shell with
    probability proportional to its estimated mass, and samples that shell
    perfectly. Picking the outermost shell doubles the family (only the new
    shells are estimated) and the shell choice is repeated. Every draw
    replays the doubling sequence from the base shell count, so its outcome
    depends only on its own random stream.
    """

    def __init__(self, target, diff, families, weights, tables=None, N=DEFAULT_MC_SIZE, eta=DEFAULT_ETA,
                 seed=0, ratio_mode="proposal_ratio", max_shells=DEFAULT_MAX_SHELLS, k=None,
                 workers=None, backend="thread"):
        self.target = target
        self.diff = diff
        self.families = list(families)
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.size != len(self.families) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("modal weights must be a simplex with one entry per family")
        self.N = N
        self.eta = eta
        self.seed = seed
        self.ratio_mode = ratio_mode
        self.max_shells = max_shells
        self.k = k
        self.workers = workers
        self.backend = backend
        self.base_counts = [f.count for f in self.families]
        self._locks = [threading.Lock() for _ in self.families]
        self._cdf_cache: Dict[tuple, np.ndarray] = {}
        if tables is None:
            tables = [self._estimate(j, self.families[j], range(1, self.families[j].count + 1))
                      for j in range(len(self.families))]
        self.tables: List[FamilyTable] = list(tables)

    def _stream_key(self, j):
        return (0 if self.k is None else self.k, j)

    def _estimate(self, j, family, shells):
        return estimate_family(self.target, self.diff, family, self.N, self.eta, self.seed, shells=shells,
                               ratio_mode=self.ratio_mode, workers=self.workers, backend=self.backend,
                               stream_key=self._stream_key(j))

    def __getstate__(self):
        state = self.__dict__.copy()
        state.pop("_locks")
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._locks = [threading.Lock() for _ in self.families]

    def _ensure(self, j, count):
        if self.tables[j].count >= count:
            return
        with self._locks[j]:
            have = self.tables[j].count
            if have >= count:
                return
            family = self.families[j].with_count(count)
            extra = self._estimate(j, family, range(have + 1, count + 1))
            self.families[j] = family
            self.tables[j] = self.tables[j].concat(extra)

    def _cdf(self, j, count):
        key = (j, count)
        cdf = self._cdf_cache.get(key)
        if cdf is None:
            lp = self.tables[j].selection_log_probs(count)
            cdf = np.cumsum(np.exp(lp))
            self._cdf_cache[key] = cdf
        return cdf

    def select(self, rng, j):
        """Shell index for mode ``j`` under the doubling protocol."""
        count = self.base_counts[j]
        while True:
            self._ensure(j, count)
            cdf = self._cdf(j, count)
            i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")) + 1
            i = min(i, count)
            if i < count:
                return i
            count *= 2
            if count > self.max_shells:
                raise ShellCapExceeded(f"mode {j}: shell count would exceed {self.max_shells}")

    def draw(self, index, rng=None):
        rng = stream(self.seed, TAG_DRAW, index) if rng is None else rng
        j = int(np.searchsorted(np.cumsum(self.weights), rng.random() * self.weights.sum(), side="right"))
        j = min(j, len(self.families) - 1)
        i = self.select(rng, j)
        ctx = ShellSamplerContext(self.target, self.diff, self.families[j].shell(i), self.tables[j].estimate(i),
                                  self.ratio_mode)
        out = perfect_sample_shell(ctx, rng)
        return IidSample(int(index), out.theta, j, i, out.T, self.k, out.violations)

    def sample(self, K, workers=None, backend=None):
        return run_tasks(self.draw, range(int(K)), self.workers if workers is None else workers,
                         backend or self.backend, chunksize=16)


def iid_sample_multimodal(sampler, K, workers=None):
    return sampler.sample(K, workers)


@dataclass
class VarDimModel:
    """Model index set with prior, evidences and per-index samplers.

    ``sampler_factory(k)`` builds the fixed-dimension sampler for index ``k``;
    samplers are built once, on first use.
    """

    k_values: List[int]
    log_prior: np.ndarray
    log_evidence: np.ndarray
    sampler_factory: Callable
    seed: int = 0
    samplers: Dict[int, MultimodalSampler] = field(default_factory=dict)

    def __post_init__(self):
        self.log_prior = np.asarray(self.log_prior, dtype=float)
        self.log_evidence = np.asarray(self.log_evidence, dtype=float)
        self.posterior = k_posterior(self.log_prior, self.log_evidence)
        self._lock = threading.Lock()

    def sampler(self, k):
        s = self.samplers.get(k)
        if s is None:
            with self._lock:
                s = self.samplers.get(k)
                if s is None:
                    s = self.sampler_factory(k)
                    self.samplers[k] = s
        return s

    def draw(self, index):
        rng = stream(self.seed, TAG_DRAW, index)
        cdf = np.cumsum(self.posterior)
        pos = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(self.k_values) - 1)
        k = self.k_values[pos]
        out = self.sampler(k).draw(index, rng)
        out.k = k
        return out


def iid_sample_vardim(model, K, workers=None, backend="thread"):
    """Draw ``K`` pairs ``(k, theta_k)``: ``k`` from its posterior, then ``theta_k`` exactly."""
    return run_tasks(model.draw, range(int(K)), workers, backend, chunksize=16)
