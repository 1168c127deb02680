import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from iidshell.diffeo import Diffeomorphism
from iidshell.errors import AllModelsImpossible, NoMassAnywhere
from iidshell.estimation import (
    DEFAULT_ETA,
    DEFAULT_MC_SIZE,
    estimate_family,
    estimate_shell,
    k_posterior,
    marginal_likelihood,
)
from iidshell.geometry import ScaleFactor, ShellFamily, cholesky_factor, sample_uniform_shell
from iidshell.targets import GaussianMixtureTarget, TargetDensity, gaussian_spec


def flat(d, c=0.0):
    return TargetDensity(d, lambda x: np.full(x.shape[0], c))


def gauss2():
    return GaussianMixtureTarget(gaussian_spec([0.2, -0.1], [[1.0, 0.4], [0.4, 0.8]]))


def conjugate_problem(n=20, seed=0):
    """``y_i ~ N(theta, 1)``, ``theta ~ N(0, 1)``: target, analytic log evidence, posterior moments."""
    y = np.random.default_rng(seed).normal(0.7, 1.0, size=n)

    def log_joint(theta):
        t = theta[:, 0]
        return (stats.norm.logpdf(y[None, :], t[:, None], 1.0).sum(axis=1) + stats.norm.logpdf(t))

    exact = stats.multivariate_normal(np.zeros(n), np.eye(n) + np.ones((n, n))).logpdf(y)
    post_mean, post_var = y.sum() / (n + 1), 1.0 / (n + 1)
    return TargetDensity(1, log_joint), float(exact), post_mean, post_var


def test_defaults():
    assert DEFAULT_ETA == 1e-10
    assert DEFAULT_MC_SIZE == 5000


def test_flat_target_mass_and_probability():
    fam = ShellFamily(np.zeros(3), cholesky_factor(np.diag([1.0, 2.0, 3.0])), np.array([0.0, 0.5, 2.0]))
    shell = fam.shell(2)
    est = estimate_shell(flat(3, np.log(2.5)), Diffeomorphism(0.3), shell, 500, rng=np.random.default_rng(0))
    assert_allclose(est.log_mass_hat, np.log(2.5) + shell.log_volume(), rtol=1e-12)
    assert_allclose(est.p_hat, 1 - 1e-10, rtol=1e-12)


def test_mass_identity_with_plain_uniform_mc():
    t = gauss2()
    fam = ShellFamily(np.zeros(2), ScaleFactor.identity(2), np.array([0.0, 0.3, 1.4]))
    shell = fam.shell(2)
    est = estimate_shell(t, Diffeomorphism(0.01), shell, 4000, rng=np.random.default_rng(5))
    pts = sample_uniform_shell(np.random.default_rng(5), shell, 4000)
    plain = np.exp(shell.log_volume()) * np.mean(np.exp(t(pts)))
    assert abs(np.exp(est.log_mass_hat) / plain - 1) < 1e-8


def test_proposal_ratio_extremes_and_mass_bound():
    t = gauss2()
    fam = ShellFamily(np.zeros(2), ScaleFactor.identity(2), np.array([0.0, 0.3, 1.4]))
    shell = fam.shell(2)
    est = estimate_shell(t, Diffeomorphism(0.3), shell, 3000, rng=np.random.default_rng(6))
    dens = t(sample_uniform_shell(np.random.default_rng(6), shell, 3000))
    assert abs(np.exp(est.log_S_hat - est.log_s_hat) / np.exp(dens.max() - dens.min()) - 1) < 1e-10
    vol = shell.log_volume()
    assert vol + dens.min() <= est.log_mass_hat <= vol + dens.max()
    assert est.log_s_hat <= est.log_S_hat
    assert_allclose(est.p_hat, max(np.exp(est.log_s_hat - est.log_S_hat) - est.eta, 0.0))


def test_ratio_modes_differ_only_by_jacobian():
    t = gauss2()
    shell = ShellFamily(np.zeros(2), ScaleFactor.identity(2), np.array([0.0, 0.3, 1.4])).shell(2)
    a = estimate_shell(t, Diffeomorphism(0.3), shell, 2000, rng=np.random.default_rng(1))
    b = estimate_shell(t, Diffeomorphism(0.3), shell, 2000, rng=np.random.default_rng(1),
                       ratio_mode="raw_pushforward")
    assert a.log_mass_hat == b.log_mass_hat
    assert a.p_hat != b.p_hat


def test_zero_density_shell_is_reported():
    t = TargetDensity(1, lambda x: np.full(x.shape[0], -np.inf))
    shell = ShellFamily(np.zeros(1), ScaleFactor.identity(1), np.array([0.0, 1.0])).shell(1)
    est = estimate_shell(t, Diffeomorphism(0.3), shell, 100, rng=np.random.default_rng(0))
    assert est.log_mass_hat == -np.inf and est.p_hat == 0.0


def test_family_single_shell_and_flat_volumes():
    diff = Diffeomorphism(0.3)
    one = ShellFamily(np.zeros(2), ScaleFactor.identity(2), np.array([0.0, 1.0]))
    assert_allclose(np.exp(estimate_family(flat(2), diff, one, 200).selection_log_probs()), [1.0])
    two = ShellFamily(np.zeros(2), ScaleFactor.identity(2), np.array([0.0, 1.0, 4.0]))
    probs = np.exp(estimate_family(flat(2), diff, two, 200).selection_log_probs())
    assert_allclose(probs, [1 / 4, 3 / 4], rtol=1e-12)


def test_family_no_mass_anywhere():
    t = TargetDensity(1, lambda x: np.full(x.shape[0], -np.inf))
    fam = ShellFamily.from_schedule(np.zeros(1), ScaleFactor.identity(1), 0.5, 0.5, 3)
    with pytest.raises(NoMassAnywhere):
        estimate_family(t, Diffeomorphism(0.3), fam, 100)


def test_family_determinism_across_workers():
    fam = ShellFamily.from_schedule(np.zeros(2), ScaleFactor.identity(2), 0.2, 0.2, 24)
    a = estimate_family(gauss2(), Diffeomorphism(0.01), fam, 300, seed=4, workers=1)
    b = estimate_family(gauss2(), Diffeomorphism(0.01), fam, 300, seed=4, workers=1)
    c = estimate_family(gauss2(), Diffeomorphism(0.01), fam, 300, seed=4, workers=4)
    assert a == b == c
    d = estimate_family(gauss2(), Diffeomorphism(0.01), fam, 300, seed=5)
    assert not a == d


def test_family_subset_matches_full_table():
    fam = ShellFamily.from_schedule(np.zeros(2), ScaleFactor.identity(2), 0.2, 0.2, 10)
    full = estimate_family(gauss2(), Diffeomorphism(0.3), fam, 300, seed=2)
    part = estimate_family(gauss2(), Diffeomorphism(0.3), fam, 300, seed=2, shells=range(6, 11))
    assert np.array_equal(full.log_mass_hat[5:], part.log_mass_hat)


def test_conjugate_evidence():
    target, exact, m, v = conjugate_problem()
    fam = ShellFamily.from_schedule(np.array([m]), cholesky_factor([[v]]), 0.05, 0.05, 2000)
    ev = marginal_likelihood(target, fam, 5000, Diffeomorphism(0.3), max_shells=2000, seed=1)
    assert abs(np.exp(ev.log_evidence - exact) - 1) < 0.02
    assert ev.stopped_by_tail_rule and ev.shells_used < 2000


def test_evidence_monotone_in_truncation():
    target, _, m, v = conjugate_problem(seed=3)
    fam = ShellFamily.from_schedule(np.array([m]), cholesky_factor([[v]]), 0.1, 0.1, 100)
    vals = [marginal_likelihood(target, fam, 500, max_shells=M, seed=0, tail_run=10**6).log_evidence
            for M in (5, 10, 20, 40, 80)]
    assert np.all(np.diff(vals) >= 0)


def test_evidence_of_impossible_model():
    t = TargetDensity(1, lambda x: np.full(x.shape[0], -np.inf))
    fam = ShellFamily.from_schedule(np.zeros(1), ScaleFactor.identity(1), 0.5, 0.5, 8)
    assert marginal_likelihood(t, fam, 100).log_evidence == -np.inf


def test_k_posterior_examples():
    prior = np.log(np.full(3, 1 / 3))
    assert_allclose(k_posterior(prior, np.log([2.0, 1.0, 1.0])), [0.5, 0.25, 0.25], rtol=1e-12)
    assert_allclose(k_posterior(prior, [-np.inf, 3.0, -np.inf]), [0.0, 1.0, 0.0])
    assert_allclose(k_posterior(prior, [-1e4, 0.0, -2e4]), [0.0, 1.0, 0.0])
    with pytest.raises(AllModelsImpossible):
        k_posterior(prior, [-np.inf] * 3)
