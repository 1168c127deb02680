import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from iidshell.diffeo import (
    Diffeomorphism,
    f_inverse,
    f_prime,
    f_scalar,
    h_forward,
    h_inverse,
    log_jacobian_at_theta,
    log_pushforward,
)

E = np.e


def test_f_knot_values():
    for b in (0.01, 0.3, 2.0):
        assert f_scalar(0.0, b) == 0.0
        assert abs(f_scalar(1 / b, b) - 2 * E / 3) < 1e-12
        assert abs(f_prime(1 / b, b) - b * E) < 1e-12


def test_f_c1_by_finite_difference():
    b = 0.01
    h = 1e-6 / b
    left = (f_scalar(1 / b, b) - f_scalar(1 / b - h, b)) / h
    right = (f_scalar(1 / b + h, b) - f_scalar(1 / b, b)) / h
    assert abs(left - b * E) < 1e-6 * b * E * 10
    assert abs(right - b * E) < 1e-6 * b * E * 10


def test_f_inverse_examples():
    b = 0.01
    assert f_inverse(0.0, b) == 0.0
    assert_allclose(f_inverse(2 * E / 3, b), 1 / b, rtol=1e-13)


def test_f_roundtrip_many_points():
    b = 0.01
    x = np.random.default_rng(0).uniform(0, 50 / b, 10_000)
    back = f_inverse(f_scalar(x, b), b)
    assert np.max(np.abs(back - x) / np.maximum(x, 1e-300)) < 1e-10


def test_f_strictly_increasing():
    x = np.linspace(0, 500, 100_001)
    assert np.all(np.diff(f_scalar(x, 0.01)) > 0)


def test_h_examples():
    b = 0.01
    assert_allclose(h_forward(np.zeros(3), b), np.zeros(3))
    assert_allclose(h_inverse(np.zeros(3), b), np.zeros(3))
    assert_allclose(h_forward(np.array([1 / b]), b), [2 * E / 3])
    rng = np.random.default_rng(1)
    th = rng.normal(size=(100, 4)) * 30
    g = h_forward(th, b)
    assert_allclose(np.linalg.norm(g, axis=1), f_scalar(np.linalg.norm(th, axis=1), b), rtol=1e-12)
    assert_allclose(g / np.linalg.norm(g, axis=1)[:, None], th / np.linalg.norm(th, axis=1)[:, None], atol=1e-12)


@pytest.mark.parametrize("d", [1, 2, 5, 50])
def test_h_roundtrip(d):
    b = 0.3
    th = np.random.default_rng(d).normal(size=(10_000, d)) * 5
    back = h_inverse(h_forward(th, b), b)
    rel = np.linalg.norm(back - th, axis=1) / np.linalg.norm(th, axis=1)
    assert rel.max() < 1e-9


def test_log_jacobian_examples():
    b = 0.01
    assert_allclose(log_jacobian_at_theta(np.array([1 / b]), b), np.log(b * E), rtol=1e-12)
    theta = np.array([1 / b, 0.0])
    assert_allclose(log_jacobian_at_theta(theta, b), np.log(2 * E**2 * b**2 / 3), rtol=1e-12)
    assert_allclose(np.exp(log_jacobian_at_theta(theta, b)), 4.9260e-4, rtol=1e-4)
    assert_allclose(log_jacobian_at_theta(np.zeros(3), b), 3 * np.log(b * E / 2))


@pytest.mark.parametrize("d", [1, 2, 5])
def test_log_jacobian_finite_difference(d):
    rng = np.random.default_rng(10 + d)
    diff = Diffeomorphism(0.3)
    for _ in range(40):
        x = rng.normal(size=d) * rng.uniform(0.3, 8)
        step = 1e-6
        J = np.column_stack([(diff.forward(x + step * e) - diff.forward(x - step * e)) / (2 * step)
                             for e in np.eye(d)])
        fd = np.linalg.slogdet(J)[1]
        assert abs(log_jacobian_at_theta(x, 0.3) - fd) <= 1e-4 * max(1.0, abs(fd))


def test_pushforward_flat_target():
    b = 0.3
    g = np.array([0.4, -1.1])
    flat = lambda th: np.zeros(np.atleast_2d(th).shape[0]) if np.ndim(th) > 1 else 0.0
    assert_allclose(log_pushforward(flat, g, b), -log_jacobian_at_theta(h_inverse(g, b), b))


def test_pushforward_near_origin():
    b = 0.3
    g = np.array([1e-4, 2e-4])
    target = lambda th: -0.5 * np.sum(np.square(th), axis=-1)
    th = h_inverse(g, b)
    assert_allclose(log_pushforward(target, g, b), target(th) - 2 * np.log(b * E / 2), atol=1e-6)


def test_pushforward_integrates_to_one():
    b = 0.3
    top = f_scalar(8.0, b)
    g = np.linspace(-top, top, 200_001)[:, None]
    log_norm = lambda th: -0.5 * np.sum(th**2, axis=-1) - 0.5 * np.log(2 * np.pi)
    dens = np.exp(log_pushforward(log_norm, g, b))
    assert abs(np.trapezoid(dens, g[:, 0]) - 1.0) < 1e-3


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-200, 200), min_size=1, max_size=6), st.floats(0.005, 3.0))
def test_collapse_identity(theta, b):
    theta = np.array(theta)
    if np.linalg.norm(theta) < 1e-6:
        return
    target = lambda th: -0.5 * np.sum(np.square(th), axis=-1) / 100.0
    with np.errstate(over="ignore"):
        g = h_forward(theta, b)
    # beyond b*|theta| of about 709 the image is not representable in float64
    assume(np.all(np.isfinite(g)))
    lhs = log_pushforward(target, g, b) + log_jacobian_at_theta(theta, b)
    assert abs(lhs - target(theta)) <= 1e-10 * max(1.0, abs(target(theta)))
