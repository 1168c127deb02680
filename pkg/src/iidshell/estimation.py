"""Per-shell Monte Carlo: masses, density-ratio extremes, minorization probabilities,
and shell-summed marginal likelihoods."""

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
from scipy.special import logsumexp

from .diffeo import Diffeomorphism
from .errors import AllModelsImpossible, NoMassAnywhere
from .geometry import sample_uniform_shell
from .parallel import TAG_ESTIMATE, TAG_EVIDENCE, run_tasks, stream

RATIO_MODES = ("proposal_ratio", "raw_pushforward")
DEFAULT_ETA = 1e-10
DEFAULT_MC_SIZE = 5000


@dataclass(frozen=True)
class ShellEstimate:
    index: int
    c_lo: float
    c_hi: float
    log_volume: float
    log_mass_hat: float
    log_s_hat: float
    log_S_hat: float
    p_hat: float
    mc_size: int
    eta: float


def shell_ratio(target, diff, theta, log_volume, ratio_mode):
    """Ratio values ``r`` the minorization works with, plus the mass summand.

    Returns ``(r, v, gamma)`` where ``gamma = h(theta)``, ``v`` is the log of
    ``pi_gamma(gamma) |det grad h|`` and ``r`` is ``log pi_gamma - log q``
    under ``proposal_ratio`` or ``log pi_gamma`` under ``raw_pushforward``.
    """
    gamma = diff.forward(theta)
    back = diff.inverse(gamma)
    log_jac = diff.log_jacobian(back)
    log_push = target(back) - log_jac
    v = log_push + log_jac
    if ratio_mode == "proposal_ratio":
        # log q = -log L(A) - log|det grad h|
        r = log_push + log_volume + log_jac
    elif ratio_mode == "raw_pushforward":
        r = log_push
    else:
        raise ValueError(f"unknown ratio_mode {ratio_mode!r}")
    return r, v, gamma


def minorization_probability(log_s, log_S, eta):
    if not np.isfinite(log_S):
        return 0.0
    return max(float(np.exp(log_s - log_S)) - eta, 0.0)


def estimate_shell(target, diff, shell, N=DEFAULT_MC_SIZE, eta=DEFAULT_ETA, rng=None,
                   ratio_mode="proposal_ratio"):
    """Monte Carlo mass and ratio extremes for one shell.

    A shell where every draw has zero density is reported with
    ``log_mass_hat = -inf`` and ``p_hat = 0``.
    """
    if N < 2:
        raise ValueError("Monte Carlo size must be at least 2")
    rng = np.random.default_rng() if rng is None else rng
    log_vol = shell.log_volume()
    theta = sample_uniform_shell(rng, shell, N)
    r, v, _ = shell_ratio(target, diff, theta, log_vol, ratio_mode)
    if np.all(v == -np.inf):
        log_mass = -np.inf
    else:
        log_mass = float(log_vol + logsumexp(v) - np.log(N))
    log_s, log_S = float(np.min(r)), float(np.max(r))
    return ShellEstimate(shell.index, shell.c_lo, shell.c_hi, log_vol, log_mass, log_s, log_S,
                         minorization_probability(log_s, log_S, eta), int(N), float(eta))


_FIELDS = ("c_lo", "c_hi", "log_volume", "log_mass_hat", "log_s_hat", "log_S_hat", "p_hat")


@dataclass(eq=False)
class FamilyTable:
    """Shell estimates of one family, as parallel arrays indexed by shell - 1."""

    c_lo: np.ndarray
    c_hi: np.ndarray
    log_volume: np.ndarray
    log_mass_hat: np.ndarray
    log_s_hat: np.ndarray
    log_S_hat: np.ndarray
    p_hat: np.ndarray
    mc_size: int
    eta: float

    @classmethod
    def from_estimates(cls, estimates, mc_size, eta):
        arrays = {f: np.array([getattr(e, f) for e in estimates], dtype=float) for f in _FIELDS}
        return cls(**arrays, mc_size=int(mc_size), eta=float(eta))

    @property
    def count(self):
        return self.c_lo.size

    def estimate(self, i):
        j = i - 1
        return ShellEstimate(i, *(float(getattr(self, f)[j]) for f in _FIELDS), self.mc_size, self.eta)

    def selection_log_probs(self, count=None):
        """Normalized log probabilities of picking shells ``1..count``."""
        lm = self.log_mass_hat[: count or self.count]
        total = logsumexp(lm)
        if not np.isfinite(total):
            raise NoMassAnywhere("no shell carries positive estimated mass")
        return lm - total

    def concat(self, other):
        return FamilyTable(*(np.concatenate([getattr(self, f), getattr(other, f)]) for f in _FIELDS),
                           mc_size=self.mc_size, eta=self.eta)

    def __eq__(self, other):
        return (
            isinstance(other, FamilyTable)
            and all(np.array_equal(getattr(self, f), getattr(other, f)) for f in _FIELDS)
            and self.mc_size == other.mc_size
            and self.eta == other.eta
        )


@dataclass(eq=False)
class EstimateTable:
    families: Dict[int, FamilyTable] = field(default_factory=dict)

    def __eq__(self, other):
        return isinstance(other, EstimateTable) and self.families.keys() == other.families.keys() and all(
            self.families[j] == other.families[j] for j in self.families
        )


def estimate_family(target, diff, family, N=DEFAULT_MC_SIZE, eta=DEFAULT_ETA, seed=0, mode_index=0,
                    shells=None, ratio_mode="proposal_ratio", workers=None, backend="thread", stream_key=None):
    """Estimate every shell of ``family`` (or the listed ``shells``) in parallel.

    Shell ``i`` always uses the stream ``(seed, TAG_ESTIMATE, *stream_key, i)``
    with ``stream_key`` defaulting to ``(mode_index,)``.
    """
    shells = range(1, family.count + 1) if shells is None else shells
    key = (mode_index,) if stream_key is None else tuple(stream_key)

    def one(i):
        rng = stream(seed, TAG_ESTIMATE, *key, i)
        return estimate_shell(target, diff, family.shell(i), N, eta, rng, ratio_mode)

    table = FamilyTable.from_estimates(run_tasks(one, shells, workers, backend, chunksize=8), N, eta)
    if not np.any(np.isfinite(table.log_mass_hat)):
        raise NoMassAnywhere("every shell has zero estimated mass")
    return table


@dataclass
class EvidenceEstimate:
    log_evidence: float
    shells_used: int
    contributions: np.ndarray
    stopped_by_tail_rule: bool


def marginal_likelihood(target, family, N=DEFAULT_MC_SIZE, diff=None, max_shells=None, seed=0, k=0,
                        tail_run=20, tail_rtol=1e-8, batch=64, ratio_mode="proposal_ratio", workers=None,
                        backend="thread"):
    """Shell-summed estimate of ``log int target``.

    ``target`` must be likelihood times a normalized prior. Shells are added
    in order until ``tail_run`` consecutive shells each add less than
    ``tail_rtol`` of the running total, or ``max_shells`` is reached. Shells
    are estimated in fixed-size batches so the stopping point does not
    depend on the worker count.
    """
    diff = Diffeomorphism(0.3) if diff is None else diff
    max_shells = family.count if max_shells is None else int(max_shells)
    if max_shells > family.count:
        family = family.with_count(max_shells)
    running = -np.inf
    quiet = 0
    contributions = []
    stopped = False
    start = 1
    while start <= max_shells and not stopped:
        stop = min(max_shells, start + batch - 1)
        tab = _estimate_range(target, diff, family, N, seed, k, range(start, stop + 1), ratio_mode, workers, backend)
        for lm in tab.log_mass_hat:
            contributions.append(lm)
            small = lm == -np.inf or (np.isfinite(running) and lm - running < np.log(tail_rtol))
            running = np.logaddexp(running, lm)
            quiet = quiet + 1 if small and np.isfinite(running) else 0
            if quiet >= tail_run:
                stopped = True
                break
        start = stop + 1
    contributions = np.array(contributions)
    return EvidenceEstimate(float(running), contributions.size, contributions, stopped)


def _estimate_range(target, diff, family, N, seed, k, shells, ratio_mode, workers, backend):
    def one(i):
        rng = stream(seed, TAG_EVIDENCE, k, i)
        return estimate_shell(target, diff, family.shell(i), N, DEFAULT_ETA, rng, ratio_mode)

    return FamilyTable.from_estimates(run_tasks(one, shells, workers, backend, chunksize=8), N, DEFAULT_ETA)


def k_posterior(log_prior_k, log_evidence):
    """Posterior over model indices, proportional to prior times evidence."""
    lp = np.asarray(log_prior_k, dtype=float) + np.asarray(log_evidence, dtype=float)
    if not np.any(np.isfinite(lp)):
        raise AllModelsImpossible("no model has finite prior times evidence")
    return np.exp(lp - logsumexp(lp))
