import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from capfoil.exterior_field import ExteriorField, RadialGrid, flat_laplacian
from capfoil.metric import (
    LaplaceBeltrami,
    MetricModel,
    Shape,
    ShapeGeometry,
    laplace_beltrami_apply,
    pullback_metric,
    unit_normal,
)
from capfoil.sphere_basis import SphereField, get_basis


def test_model_validation():
    with pytest.raises(ValueError):
        MetricModel(2)
    with pytest.raises(ValueError):
        MetricModel(3, h_profile="bogus")
    assert MetricModel(3).is_flat
    assert MetricModel(3, 0.0, 0.5, "none").is_flat
    assert not MetricModel(3, 0.1).is_flat


def test_default_direction_is_last_axis():
    assert MetricModel(4).direction == (0.0, 0.0, 0.0, 1.0)


def test_conformal_factor_gradient():
    m = MetricModel(3, 0.2, 0.3, "power", direction=(1.0, 2.0, 2.0))
    y = np.array([1.3, -0.7, 2.1])
    _, grad = m.conformal_factor(y, with_gradient=True)
    h = 1e-6
    fd = [(m.conformal_factor(y + h * e) - m.conformal_factor(y - h * e)) / (2 * h) for e in np.eye(3)]
    assert_allclose(grad, fd, rtol=1e-7)


def test_perturbation_is_h_part():
    m = MetricModel(3, 0.1, 0.2, "power")
    y = np.array([0.0, 0.0, 2.0])
    assert_allclose(m.perturbation(y), 0.2 * 2.0**-3 * 3.0)


def test_shape_validation(basis3):
    with pytest.raises(ValueError):
        Shape(1.0, np.zeros(2), SphereField.zeros(basis3))
    with pytest.raises(ValueError):
        Shape(-1.0, np.zeros(3), SphereField.zeros(basis3))
    with pytest.raises(ValueError):
        Shape(1.0, np.zeros(3), SphereField.constant(basis3, 0.6))


def test_trivial_flat_operator_is_flat_laplacian(basis3, rng):
    g = RadialGrid()
    u = ExteriorField(basis3, g, rng.normal(size=(basis3.size, 1)) * g.r[None, :] ** -2.0)
    lb = laplace_beltrami_apply(MetricModel(3), Shape.trivial(basis3, 5.0), u)
    assert_allclose(lb.profiles, flat_laplacian(u).profiles, atol=1e-10)


def test_dilated_sphere_scales_operator(basis3, rng):
    # w constant c: the map is x -> (1 + c) x, so Delta_g = (1 + c)^{-2} Delta_0
    g = RadialGrid()
    c = 0.2
    u = ExteriorField(basis3, g, rng.normal(size=(basis3.size, 1)) * g.r[None, :] ** -2.0)
    shape = Shape(5.0, np.zeros(3), SphereField.constant(basis3, c))
    lb = laplace_beltrami_apply(MetricModel(3), shape, u)
    assert_allclose(lb.profiles, flat_laplacian(u).profiles / (1 + c) ** 2, atol=1e-9)


def test_operator_matches_divergence_form():
    b = get_basis(3, 4)
    model = MetricModel(3, 0.3, 0.2, "power")
    w = SphereField.from_function(b, lambda x: 0.05 * x[:, 0] * x[:, 1] + 0.03 * x[:, 2] ** 2)
    shape = Shape(3.0, np.array([0.02, 0.0, -0.01]), w)
    g = RadialGrid()
    u = ExteriorField(b, g, np.outer(np.ones(b.size) * 0.3, g.r**-1.0))
    op = LaplaceBeltrami(model, shape, g)
    nodal = op.nodal(u.profiles)
    # reference from the exact metric at one sample point by nested differences
    i, p = 60, 5
    x0 = g.r[i] * b.nodes[p]

    def u_at(x):
        r = np.linalg.norm(x)
        return 0.3 * r**-1.0 * np.sum(b.values(x / r)[:, 0])

    def flux(x):
        m = pullback_metric(model, shape, x)
        h = 1e-5
        grad = np.array([(u_at(x + h * e) - u_at(x - h * e)) / (2 * h) for e in np.eye(3)])
        return m.sqrt_det * (m.g_inv @ grad)

    h = 1e-3
    div = sum((flux(x0 + h * e)[a] - flux(x0 - h * e)[a]) / (2 * h) for a, e in enumerate(np.eye(3)))
    ref = div / pullback_metric(model, shape, x0).sqrt_det
    assert_allclose(nodal[i, p], ref, rtol=1e-5)


def test_unit_normal_flat_trivial(basis3):
    th = np.array([0.0, 0.6, 0.8])
    nu = unit_normal(MetricModel(3), Shape.trivial(basis3, 2.0), th)
    assert_allclose(nu, -th, atol=1e-14)


def test_unit_normal_is_unit_in_metric(basis3):
    model = MetricModel(3, 0.2, 0.1, "power")
    w = SphereField.from_function(basis3, lambda x: 0.1 * x[:, 0] ** 2)
    shape = Shape(2.0, np.array([0.05, 0.0, 0.0]), w)
    th = np.array([0.48, 0.6, 0.64])
    nu = unit_normal(model, shape, th)
    g = pullback_metric(model, shape, th).g
    assert_allclose(nu @ g @ nu, 1.0, rtol=1e-12)
    with pytest.raises(ValueError):
        unit_normal(model, shape, np.array([1.0, 1.0, 0.0]))


def test_geometry_rejects_folded_shape(basis3):
    # det J = (1 + w)^n, so the map degenerates once w reaches -1
    shape = Shape(1.0, np.zeros(3), SphereField.constant(basis3, -1.2), check=False)
    with pytest.raises(ValueError):
        ShapeGeometry(shape)


@given(st.floats(0.0, 0.5), st.floats(2.0, 30.0))
def test_normal_factor_trivial_shape(sigma, rho):
    b = get_basis(3, 2)
    model = MetricModel(3, sigma)
    op = LaplaceBeltrami(model, Shape.trivial(b, rho), RadialGrid())
    phi = 1 + sigma * rho**-2
    # unit normal length of the radial covector for a conformal metric phi delta
    assert_allclose(op.normal_factor(), 1 / np.sqrt(phi), rtol=1e-12)
