import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from capfoil.sphere_basis import (
    SphereBasis,
    SphereField,
    get_basis,
    laplace_sphere,
    pi_V1,
    pi_V1_perp,
    project,
    sphere_area,
    sphere_quadrature,
)

coeff = st.floats(-2.0, 2.0, allow_nan=False)


@pytest.mark.parametrize("n", [3, 4, 5])
def test_sphere_area(n):
    expected = {3: 4 * math.pi, 4: 2 * math.pi**2, 5: 8 * math.pi**2 / 3}[n]
    assert_allclose(sphere_area(n), expected, rtol=1e-14)


@pytest.mark.parametrize("n", [3, 4])
def test_quadrature_integrates_monomials(n):
    nodes, w = sphere_quadrature(n, 8)
    assert_allclose(np.linalg.norm(nodes, axis=1), 1.0, atol=1e-14)
    assert_allclose(w.sum(), sphere_area(n), rtol=1e-13)
    # <x_0^2> = 1/n and <x_0^4> = 3/(n(n+2)) on the sphere
    assert_allclose(w @ nodes[:, 0] ** 2, sphere_area(n) / n, rtol=1e-13)
    assert_allclose(w @ nodes[:, 0] ** 4, 3 * sphere_area(n) / (n * (n + 2)), rtol=1e-13)
    assert abs(w @ nodes[:, 0] ** 3) < 1e-13


@pytest.mark.parametrize("n,L", [(3, 8), (4, 8), (5, 6)])
def test_orthonormal(n, L):
    b = get_basis(n, L)
    gram = (b.Y * b.weights) @ b.Y.T
    assert_allclose(gram, np.eye(b.size), atol=1e-12)


def test_full_basis_size_n3():
    assert get_basis(3, 8).size == 81


def test_zonal_basis_size():
    b = get_basis(4, 6)
    # constant, four linear functions, zonal degrees 2..6
    assert b.size == 1 + 4 + 5


@pytest.mark.parametrize("n", [3, 4])
def test_laplace_eigenvalues(n):
    b = get_basis(n, 6)
    # trace of the 0-homogeneous Hessian is the sphere Laplacian
    lap = np.trace(b.HY, axis1=2, axis2=3)
    assert_allclose(lap, -b.eigenvalues[:, None] * b.Y, atol=1e-10)


def test_gradient_tangential(basis3):
    b = basis3
    assert_allclose(np.einsum("bpi,pi->bp", b.dY, b.nodes), 0.0, atol=1e-12)


def test_gradient_matches_finite_difference(basis3):
    b = basis3
    p = np.array([[0.3, -0.5, 0.7]])
    p /= np.linalg.norm(p)
    Y, dY, _ = b.tables(p)
    h = 1e-6
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd = (b.tables((p + e) / np.linalg.norm(p + e))[0] - b.tables((p - e) / np.linalg.norm(p - e))[0]) / (2 * h)
        # directional derivative along the projected step equals dY . e
        assert_allclose(fd[:, 0], dY[:, 0, i] - (dY[:, 0] @ p[0]) * p[0, i], atol=1e-6)


def test_linear_coordinates(basis3):
    f = SphereField.linear(basis3, [1.0, -2.0, 0.5])
    assert_allclose(f.nodal(), basis3.nodes @ np.array([1.0, -2.0, 0.5]), atol=1e-13)
    _, tau = pi_V1(f)
    assert_allclose(tau, [1.0, -2.0, 0.5], atol=1e-13)


def test_pi_V1_split(basis3, rng):
    f = SphereField(basis3, rng.normal(size=basis3.size))
    lin, _ = pi_V1(f)
    rest = pi_V1_perp(f)
    assert_allclose((lin + rest).coeffs, f.coeffs)
    assert np.all(rest.coeffs[basis3.degrees == 1] == 0)


def test_laplace_sphere(basis3, rng):
    f = SphereField(basis3, rng.normal(size=basis3.size))
    assert_allclose(laplace_sphere(f).coeffs, -basis3.eigenvalues * f.coeffs)


def test_projection_of_band_limited_is_exact(basis3, rng):
    f = SphereField(basis3, rng.normal(size=basis3.size))
    assert_allclose(project(f.nodal(), basis3).coeffs, f.coeffs, atol=1e-12)


def test_evaluate_off_nodes(basis3):
    f = SphereField.from_function(basis3, lambda x: x[:, 0] * x[:, 1])
    p = np.array([[0.6, 0.8, 0.0], [0.0, 0.0, 1.0]])
    assert_allclose(f(p), [0.48, 0.0], atol=1e-12)


def test_json_round_trip(basis3, rng):
    f = SphereField(basis3, rng.normal(size=basis3.size))
    g = SphereField.from_json(f.to_json())
    assert_allclose(g.coeffs, f.coeffs)
    assert g.basis.n == 3 and g.L == basis3.L


def test_constant_mean_and_norms(basis3):
    c = SphereField.constant(basis3, 2.0)
    assert_allclose(c.mean(), 2.0)
    assert_allclose(c.sup_norm(), 2.0)
    assert_allclose(c.l2_norm(), 2.0 * math.sqrt(basis3.area))


def test_invalid_basis():
    with pytest.raises(ValueError):
        SphereBasis(2, 4)
    with pytest.raises(ValueError):
        SphereBasis(3, 0)


@given(st.lists(coeff, min_size=4, max_size=4), st.lists(coeff, min_size=4, max_size=4), coeff)
def test_projection_is_linear(a, b, s):
    basis = get_basis(3, 4)

    def sample(c):
        x = basis.nodes
        return c[0] + c[1] * x[:, 0] * x[:, 2] + c[2] * x[:, 1] ** 3 + c[3] * np.exp(x[:, 0])

    lhs = project(sample(a) + s * sample(b), basis).coeffs
    rhs = project(sample(a), basis).coeffs + s * project(sample(b), basis).coeffs
    assert_allclose(lhs, rhs, atol=1e-11)


@given(st.lists(coeff, min_size=3, max_size=3))
def test_rotation_of_linear_field_keeps_norm(v):
    basis = get_basis(3, 2)
    f = SphereField.linear(basis, v)
    assert_allclose(f.l2_norm() ** 2, basis.area / 3 * np.dot(v, v), atol=1e-12)
