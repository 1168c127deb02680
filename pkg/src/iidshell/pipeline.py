"""End-to-end runs assembled from the library pieces, driven by a RunConfig."""

from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from .diffeo import Diffeomorphism
from .errors import ConfigError, EmptyModalRegion, NotPositiveDefinite, ZeroMinorization
from .estimation import estimate_family, marginal_likelihood
from .geometry import ShellFamily, cholesky_factor
from .modes import ModalDecomposition, largest_passing_radius, modal_decomposition, mode_sweep, polish_modes
from .parallel import TAG_PROBE
from .perfect import MultimodalSampler, VarDimModel
from .targets import (
    GaussianMixtureSpec,
    GaussianMixtureTarget,
    MixtureModelParams,
    MixturePriorHyper,
    conditional_posterior_target,
    gaussian_spec,
    reference_bimodal_spec,
    predictive_density,
    read_data_csv,
    synthetic_acidity_like,
)
from .tmcmc import ChainConfig, empirical_moments, run_chain

# ---------------------------------------------------------------- targets


def build_target(cfg):
    """Fixed-dimension target named by ``cfg.target``."""
    t = cfg.target
    kind = t["kind"]
    if kind == "reference_bimodal":
        return GaussianMixtureTarget(reference_bimodal_spec(int(t["dim"])), name="reference_bimodal")
    if kind == "gaussian":
        return GaussianMixtureTarget(gaussian_spec(t["mean"], t["cov"]), name="gaussian")
    if kind == "gaussian_mixture":
        factors = [cholesky_factor(np.asarray(c, dtype=float)) for c in t["covs"]]
        spec = GaussianMixtureSpec(np.asarray(t["weights"], dtype=float),
                                   [np.asarray(m, dtype=float) for m in t["means"]], factors)
        return GaussianMixtureTarget(spec)
    if kind == "normal_mixture":
        if "k" not in t:
            raise ConfigError("a normal_mixture target needs 'k' for fixed-dimension commands")
        y, hyper = mixture_data(cfg)
        return conditional_posterior_target(int(t["k"]), hyper, y)
    raise ConfigError(f"unknown target kind {kind!r}")


def mixture_hyper(cfg):
    t = cfg.target
    names = ("s", "S", "nu0", "psi", "mu_omega", "sigma2_omega", "k_max", "prior_k")
    return MixturePriorHyper(**{n: t[n] for n in names if n in t})


def mixture_data(cfg):
    """Observations and prior hyperparameters of a normal_mixture target."""
    t = cfg.target
    if t.get("kind") != "normal_mixture":
        raise ConfigError("this command needs a normal_mixture target")
    if t.get("data"):
        y = read_data_csv(t["data"])
    else:
        rng = np.random.default_rng(int(t.get("data_seed", 0)))
        y = synthetic_acidity_like(rng, n=int(t.get("synthetic_n", 155)))
    return y, mixture_hyper(cfg)


def mixture_init(y, k):
    """Chain starting point: spread means over data quantiles, common precision, equal weights."""
    nu = np.quantile(y, (np.arange(k) + 0.5) / k)
    tau_star = np.full(k, np.log(k * k / np.var(y)))
    return MixtureModelParams(nu, tau_star, np.zeros(k)).to_vector()


# ---------------------------------------------------------------- pilot and modes


def pilot(target, cfg, key=(), init=None):
    chain_cfg = ChainConfig(cfg.pilot_n_iter, cfg.pilot_burn_in, cfg.pilot_thin, seed=cfg.seed, init=init,
                            adapt_iter=cfg.pilot_adapt_iter, stream_key=tuple(key))
    return run_chain(target, chain_cfg)


def find_modes(samples, cfg, target=None):
    sweep = mode_sweep(samples, cfg.eps_grid, cfg.merge_threshold, workers=cfg.workers, seed=cfg.seed,
                       return_details=True)
    modes = sweep.modes
    if cfg.polish_modes and target is not None:
        steps = 0.1 * np.std(samples, axis=0)
        modes = merge_close(polish_modes(target, modes, steps), cfg.merge_threshold * sweep.max_distance)
    return modes, sweep


def merge_close(modes, radius):
    """Drop modes within ``radius`` of an earlier one (polished modes often coincide)."""
    kept = []
    for m in modes:
        if all(np.linalg.norm(m - k) > radius for k in kept):
            kept.append(m)
    return kept


def radius_passes(target, samples, mode, radius, cfg, diff, j=0):
    """Whether a ball of ``radius`` around ``mode`` gives a usable shell family.

    The ball needs enough members for a positive definite covariance, and
    the shells with zero minorization probability may together carry at most
    ``cfg.zero_mass_tol`` of the family's estimated mass (selecting one of
    them during sampling is an error).
    """
    try:
        dec = modal_decomposition(samples, [mode], radius)
    except (EmptyModalRegion, NotPositiveDefinite):
        return False
    family = ShellFamily.from_schedule(dec.modes[0], dec.factors[0], cfg.sqrt_c1, cfg.delta, cfg.M)
    table = estimate_family(target, diff, family, cfg.probe_mc_size or cfg.mc_size, cfg.eta, cfg.seed,
                            ratio_mode=cfg.ratio_mode, workers=cfg.workers, backend=cfg.backend,
                            stream_key=(TAG_PROBE, j))
    return zero_minorization_mass(table) <= cfg.zero_mass_tol


def zero_minorization_mass(table):
    """Selection probability carried by shells whose ``p_hat`` is zero."""
    prob = np.exp(table.selection_log_probs())
    return float(prob[table.p_hat <= 0].sum())


def auto_radius(target, samples, mode, cfg, diff, j=0, iters=8):
    """Largest ball radius around ``mode`` that passes :func:`radius_passes`."""
    x = np.asarray(samples, dtype=float)
    dist = np.sort(np.sqrt(np.sum((x - mode) ** 2, axis=1)))
    d = x.shape[1]
    if dist.size < d + 2:
        raise EmptyModalRegion(j, dist.size, d + 2)
    lo = float(dist[min(dist.size - 1, 4 * (d + 2))]) * (1 + 1e-9)
    hi = float(dist[-1]) * (1 + 1e-9)
    r = largest_passing_radius(lambda e: radius_passes(target, x, mode, e, cfg, diff, j), lo, hi, iters)
    if r is None:
        raise ZeroMinorization(f"mode {j}: no modal radius in [{lo:.4g}, {hi:.4g}] keeps every p_hat positive")
    return r


def decompose(target, samples, modes, cfg, diff=None):
    """Modal decomposition with configured or automatically chosen radii."""
    diff = Diffeomorphism(cfg.b) if diff is None else diff
    if cfg.modal_radius is None:
        radii = [auto_radius(target, samples, np.asarray(m), cfg, diff, j) for j, m in enumerate(modes)]
    else:
        radii = np.broadcast_to(np.asarray(cfg.modal_radius, dtype=float), (len(modes),))
    return modal_decomposition(samples, modes, radii)


def families_for(decomp, cfg, count=None):
    return [ShellFamily.from_schedule(mu, L, cfg.sqrt_c1, cfg.delta, count or cfg.M)
            for mu, L in zip(decomp.modes, decomp.factors)]


def build_sampler(target, decomp, cfg, tables=None, families=None, k=None, weights=None):
    families = families_for(decomp, cfg) if families is None else families
    return MultimodalSampler(target, Diffeomorphism(cfg.b), families,
                             decomp.weights if weights is None else weights, tables=tables, N=cfg.mc_size,
                             eta=cfg.eta, seed=cfg.seed, ratio_mode=cfg.ratio_mode, max_shells=cfg.max_shells,
                             k=k, workers=cfg.workers, backend=cfg.backend)


@dataclass
class FixedDimRun:
    target: object
    chain: object
    modes: List[np.ndarray]
    decomposition: ModalDecomposition
    sampler: MultimodalSampler
    samples: list


def run_fixed(cfg, target=None):
    """pilot, modes, decomposition, shell estimates and ``cfg.K`` iid draws."""
    target = build_target(cfg) if target is None else target
    chain = pilot(target, cfg)
    modes, _ = find_modes(chain.samples, cfg, target)
    dec = decompose(target, chain.samples, modes, cfg)
    sampler = build_sampler(target, dec, cfg)
    return FixedDimRun(target, chain, modes, dec, sampler, sampler.sample(cfg.K))


# ---------------------------------------------------------------- variable dimension


@dataclass
class KFit:
    k: int
    target: object
    chain: object
    mean: np.ndarray
    cov: np.ndarray
    log_evidence: float
    evidence_shells: int


def fit_k(k, y, hyper, cfg):
    """Pilot chain and shell-summed evidence for one model index."""
    target = conditional_posterior_target(k, hyper, y)
    chain = pilot(target, cfg, key=(k,), init=mixture_init(y, k))
    mean, cov = empirical_moments(chain.samples)
    if cfg.evidence_center == "mode":
        modes, _ = find_modes(chain.samples, cfg, target)
        mean = modes[0]
    family = ShellFamily.from_schedule(mean, cholesky_factor(cov), cfg.sqrt_c1_evidence, cfg.delta_evidence,
                                       min(cfg.M_evidence, 64))
    ev = marginal_likelihood(target, family, cfg.evidence_mc_size or cfg.mc_size, Diffeomorphism(cfg.b_evidence), cfg.M_evidence,
                             cfg.seed, k, cfg.tail_run, cfg.tail_rtol, ratio_mode=cfg.ratio_mode,
                             workers=cfg.workers, backend=cfg.backend)
    return KFit(k, target, chain, mean, cov, ev.log_evidence, ev.shells_used)


def _mean_decomposition(fit):
    n = fit.chain.samples.shape[0]
    return ModalDecomposition([fit.mean], np.array([np.inf]), np.array([1.0]), [cholesky_factor(fit.cov)],
                              np.array([n]))


def vardim_decomposition(fit, cfg):
    """Decomposition for the posterior of one model index.

    ``mean`` uses a single family at the chain mean with the chain
    covariance; ``sweep`` finds modes and radii as for fixed-dimension
    targets; ``auto`` takes the mean family unless a probe shows its
    zero-minorization shells carry more than ``cfg.zero_mass_tol`` of the
    mass, and sweeps otherwise.
    """
    if cfg.vardim_modes in ("mean", "auto"):
        dec = _mean_decomposition(fit)
        if cfg.vardim_modes == "mean":
            return dec
        family = families_for(dec, cfg)[0]
        table = estimate_family(fit.target, Diffeomorphism(cfg.b), family, cfg.probe_mc_size or cfg.mc_size,
                                cfg.eta, cfg.seed, ratio_mode=cfg.ratio_mode, workers=cfg.workers,
                                backend=cfg.backend, stream_key=(TAG_PROBE, fit.k, 0))
        if zero_minorization_mass(table) <= cfg.zero_mass_tol:
            return dec
    modes, _ = find_modes(fit.chain.samples, cfg, fit.target)
    return decompose(fit.target, fit.chain.samples, modes, cfg)


def build_vardim(cfg, y=None, hyper=None):
    """Evidence for every configured k, then a VarDimModel whose samplers are built on demand."""
    if y is None or hyper is None:
        y, hyper = mixture_data(cfg)
    k_values = [int(k) for k in cfg.target.get("k_values", [1, 2, 3, 4, 5])]
    fits: Dict[int, KFit] = {k: fit_k(k, y, hyper, cfg) for k in k_values}
    log_prior = [hyper.log_prior_k(k) for k in k_values]
    log_ev = [fits[k].log_evidence for k in k_values]

    def factory(k):
        fit = fits[k]
        dec = vardim_decomposition(fit, cfg)
        return build_sampler(fit.target, dec, cfg, k=k)

    return VarDimModel(k_values, log_prior, log_ev, factory, seed=cfg.seed), fits


# ---------------------------------------------------------------- prediction


def predictive_grid(cfg):
    return cfg.grid_lo + cfg.grid_step * np.arange(cfg.grid_n)


def posterior_predictive(samples, grid):
    """Per-draw mixture densities on ``grid`` and their pointwise mean."""
    dens = np.array([predictive_density(MixtureModelParams.from_vector(s.theta), grid) for s in samples])
    return dens, dens.mean(axis=0)
