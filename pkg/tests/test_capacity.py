import math
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from capfoil.capacity import (
    StarDomain,
    ball_volume,
    capacity,
    ellipsoid_capacity_exact,
    first_variation_E0,
    first_variation_E1,
    mean_curvature,
    normal_flow,
)
from capfoil.sphere_basis import SphereField


@lru_cache(maxsize=1)
def _prolate():
    K = StarDomain.ellipsoid([1.2, 1.0, 1.0], L=4)
    return K, capacity(K)


@pytest.fixture(scope="module")
def ellipsoid():
    K = StarDomain.ellipsoid([1.3, 1.0, 1.0], L=8)
    return K, capacity(K)


def test_ball_volume():
    assert_allclose(ball_volume(3), 4 * math.pi / 3)
    assert_allclose(ball_volume(4), math.pi**2 / 2)


@pytest.mark.parametrize("n,R", [(3, 2.0), (4, 1.5)])
def test_ball_capacity(n, R):
    rep = capacity(StarDomain.ball(n, R))
    assert_allclose(rep.cap, R ** (n - 2), rtol=1e-9)
    assert_allclose(rep.volume, ball_volume(n) * R**n, rtol=1e-12)


def test_unit_ball_energies():
    rep = capacity(StarDomain.ball(3))
    assert_allclose(rep.E0, (4 * math.pi / 3) ** (-1 / 3), rtol=1e-9)
    assert_allclose(rep.Lambda, 1.0, rtol=1e-9)


def test_translation_invariance():
    a = capacity(StarDomain.ball(4, 1.5)).cap
    b = capacity(StarDomain.ball(4, 1.5, center=[0.1, 0.0, -0.3, 0.0])).cap
    assert_allclose(a, b, rtol=1e-12)


def test_scaling_law(ellipsoid):
    K, rep = ellipsoid
    assert_allclose(capacity(K.scaled(1.7)).cap, 1.7 * rep.cap, rtol=1e-10)


def test_ellipsoid_against_elliptic_integral(ellipsoid):
    _, rep = ellipsoid
    assert_allclose(rep.cap, ellipsoid_capacity_exact([1.3, 1.0, 1.0]), rtol=1e-6)
    assert_allclose(rep.cap_energy, rep.cap, rtol=1e-6)


def test_ball_minimises_normalised_energy(ellipsoid):
    _, rep = ellipsoid
    assert rep.E0 > capacity(StarDomain.ball(3)).E0


def test_ball_mean_curvature():
    assert_allclose(mean_curvature(StarDomain.ball(3, 2.0)), -1.0, atol=1e-12)
    assert_allclose(mean_curvature(StarDomain.ball(4, 0.5)), -6.0, atol=1e-12)


def test_ball_variations_vanish():
    K = StarDomain.ball(3, 1.0, L=4)
    rep = capacity(K)
    X = SphereField.from_function(K.basis, lambda x: 1.0 + 0.3 * x[:, 0] * x[:, 1] - 0.2 * x[:, 2] ** 3)
    assert abs(first_variation_E0(K, X, rep)) < 1e-10
    assert abs(first_variation_E1(K, X, rep)) < 1e-10


def test_variation_matches_difference(ellipsoid):
    K, rep = ellipsoid
    X = SphereField.from_function(K.basis, lambda x: 1.0 + 0.5 * x[:, 0] ** 2)
    t = 1e-3
    ep = capacity(normal_flow(K, X, t)).E0
    em = capacity(normal_flow(K, X, -t)).E0
    assert_allclose(first_variation_E0(K, X, rep), (ep - em) / (2 * t), rtol=2e-3)


@settings(max_examples=10)
@given(st.floats(-2, 2), st.floats(-2, 2))
def test_variation_is_linear_in_speed(a, c):
    K, rep = _prolate()
    X = SphereField.from_function(K.basis, lambda x: x[:, 0] ** 2)
    Y = SphereField.constant(K.basis, 1.0)
    for f in (first_variation_E0, first_variation_E1):
        lhs = f(K, X * a + Y * c, rep)
        rhs = a * f(K, X, rep) + c * f(K, Y, rep)
        assert_allclose(lhs, rhs, atol=1e-12)

