import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from capfoil.dtn import DtnOperator, KernelObstruction, L_apply, L_invert, L_spectrum, harmonic_extension
from capfoil.exterior_field import RadialGrid
from capfoil.sphere_basis import SphereField, get_basis


@pytest.fixture(scope="module")
def op():
    return DtnOperator(get_basis(3, 8), RadialGrid())


def test_spectrum_is_k_minus_one(op):
    for k, (measured, analytic, err) in op.spectrum().items():
        assert analytic == k - 1
        assert err < 1e-6
    assert op.max_error() < 1e-8


def test_kernel_is_degree_one(op):
    b = op.basis
    w = SphereField.linear(b, [1.0, 2.0, -1.0])
    assert op.apply(w).l2_norm() < 1e-8


def test_constant_maps_to_minus_itself(op):
    c = SphereField.constant(op.basis, 1.0)
    assert_allclose(op.apply(c).coeffs, -c.coeffs, atol=1e-9)


def test_kelvin_route_agrees(op, rng):
    w = SphereField(op.basis, rng.normal(size=op.basis.size))
    assert_allclose(op.apply_kelvin(w).coeffs, op.apply(w).coeffs, atol=1e-8)


def test_invert_round_trip(op, rng):
    w = SphereField(op.basis, rng.normal(size=op.basis.size))
    w = w - w.degree_part([1])
    assert_allclose(op.invert(op.apply(w)).coeffs, w.coeffs, atol=1e-8)
    assert_allclose(op.invert(op.apply(w) * 3.0, scale=3.0).coeffs, w.coeffs, atol=1e-8)


def test_invert_rejects_kernel_content(op):
    with pytest.raises(KernelObstruction):
        op.invert(SphereField.linear(op.basis, [0.0, 1.0, 0.0]))


@pytest.mark.parametrize("n", [4, 5])
def test_zonal_spectrum(n):
    spec = L_spectrum(6, n)
    assert max(err for _, _, err in spec.values()) < 1e-6


def test_harmonic_extension_boundary(basis3, rng):
    w = SphereField(basis3, rng.normal(size=basis3.size))
    assert_allclose(harmonic_extension(w).boundary().coeffs, w.coeffs, atol=1e-14)


def test_module_wrappers(basis3, rng):
    w = SphereField(basis3, rng.normal(size=basis3.size))
    w = w - w.degree_part([1])
    assert_allclose(L_invert(L_apply(w)).coeffs, w.coeffs, atol=1e-8)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_apply_is_linear(a, c):
    b = get_basis(3, 4)
    op = DtnOperator(b, RadialGrid())
    u = SphereField(b, np.linspace(-1, 1, b.size))
    v = SphereField(b, np.cos(np.arange(b.size)))
    lhs = op.apply(u * a + v * c).coeffs
    rhs = a * op.apply(u).coeffs + c * op.apply(v).coeffs
    assert_allclose(lhs, rhs, atol=1e-9)
