"""Self-contained quick checks of the sampler's building blocks.

Each check returns a dict with ``name``, ``passed`` and a few numbers. The
sizes are small so the whole suite runs in seconds; the test suite runs
the same ideas at full size.
"""

import numpy as np
from scipy import stats

from .diffeo import Diffeomorphism, f_inverse, f_prime, f_scalar, log_jacobian_at_theta
from .estimation import estimate_shell
from .geometry import ScaleFactor, ShellFamily, mahalanobis_sq, sample_uniform_shell
from .perfect import ShellSamplerContext, perfect_sample_shell, sample_geometric
from .targets import GaussianMixtureTarget, gaussian_spec


def check_diffeo(seed=0):
    b = 0.01
    knot_ok = abs(f_scalar(1 / b, b) - 2 * np.e / 3) < 1e-12 and abs(f_prime(1 / b, b) - b * np.e) < 1e-12
    x = np.random.default_rng(seed).uniform(0, 3 / b, 2000)
    err = float(np.max(np.abs(f_inverse(f_scalar(x, b), b) - x) / np.maximum(1.0, x)))
    return {"name": "diffeo_analytics", "passed": bool(knot_ok and err < 1e-10), "roundtrip_error": err}


def check_jacobian(seed=0, n=20):
    rng = np.random.default_rng(seed)
    diff = Diffeomorphism(0.3)
    worst = 0.0
    for d in (1, 2, 5):
        for _ in range(n):
            x = rng.normal(size=d) * rng.uniform(0.2, 6)
            h = 1e-6 * max(1.0, np.linalg.norm(x))
            J = np.column_stack([(diff.forward(x + h * e) - diff.forward(x - h * e)) / (2 * h) for e in np.eye(d)])
            fd = np.linalg.slogdet(J)[1]
            an = float(log_jacobian_at_theta(x, diff.b))
            worst = max(worst, abs(an - fd) / max(1.0, abs(fd)))
    return {"name": "jacobian", "passed": bool(worst < 1e-4), "max_relative_error": float(worst)}


def check_shell_volume(seed=0, n=200_000):
    rng = np.random.default_rng(seed)
    L = ScaleFactor(np.array([[1.0, 0.0], [0.4, 0.7]]))
    fam = ShellFamily(np.zeros(2), L, np.array([0.0, 0.5, 1.7]))
    shell = fam.shell(2)
    box = np.sqrt(shell.c_hi) * np.sqrt(np.diag(L.matrix)) * 1.01
    pts = rng.uniform(-box, box, size=(n, 2))
    m = mahalanobis_sq(pts, fam.center, L)
    hit = (m > shell.c_lo) & (m <= shell.c_hi)
    area = np.prod(2 * box)
    est, se = area * hit.mean(), area * hit.std() / np.sqrt(n)
    exact = float(np.exp(shell.log_volume()))
    r = np.sqrt(mahalanobis_sq(sample_uniform_shell(rng, shell, 20_000), fam.center, L))
    a, c = np.sqrt(shell.c_lo), np.sqrt(shell.c_hi)
    ks = stats.kstest(r, lambda t: (np.clip(t, a, c) ** 2 - a * a) / (c * c - a * a))
    return {"name": "shell_geometry", "passed": bool(abs(est - exact) < 3 * se and ks.pvalue > 0.01),
            "volume": exact, "mc_volume": est, "radius_ks_pvalue": ks.pvalue}


def check_geometric(seed=0, p=0.2, n=20_000):
    rng = np.random.default_rng(seed)
    T = np.array([sample_geometric(p, rng) for _ in range(n)])
    se = np.sqrt((1 - p) / p**2 / n)
    return {"name": "backward_time", "passed": bool(abs(T.mean() - 1 / p) < 3 * se and T.min() >= 1),
            "mean_T": float(T.mean()), "expected": 1 / p}


def check_single_shell(seed=0, n=3000):
    rng = np.random.default_rng(seed)
    target = GaussianMixtureTarget(gaussian_spec([0.0, 0.0], [[1.0, 0.3], [0.3, 0.5]]))
    fam = ShellFamily(np.zeros(2), ScaleFactor.identity(2), np.array([0.0, 0.3, 1.5]))
    shell = fam.shell(2)
    diff = Diffeomorphism(0.3)
    est = estimate_shell(target, diff, shell, 5000, 1e-10, rng)
    ctx = ShellSamplerContext(target, diff, shell, est)
    ours = np.array([perfect_sample_shell(ctx, rng).theta for _ in range(n)])
    top = target(np.zeros(2))
    oracle = []
    while len(oracle) < n:
        cand = sample_uniform_shell(rng, shell, 4 * n)
        keep = np.log(rng.random(cand.shape[0])) < target(cand) - top
        oracle.extend(cand[keep])
    oracle = np.array(oracle[:n])
    pv = [stats.ks_2samp(ours[:, i], oracle[:, i]).pvalue for i in range(2)]
    return {"name": "single_shell_exactness", "passed": bool(min(pv) > 0.01 / 2), "ks_pvalues": pv}


CHECKS = (check_diffeo, check_jacobian, check_shell_volume, check_geometric, check_single_shell)


def run_checks(seed=0):
    return [c(seed) for c in CHECKS]
