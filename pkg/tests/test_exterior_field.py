import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from capfoil.exterior_field import (
    ExteriorField,
    RadialGrid,
    flat_laplacian,
    fornberg_weights,
    indicial_roots,
    kelvin,
    normal_trace,
    solve_flat,
    tail_exponents,
)
from capfoil.sphere_basis import SphereField, get_basis


def test_fornberg_centered_second_derivative():
    w = fornberg_weights(0.0, np.array([-1.0, 0.0, 1.0]), 2)
    assert_allclose(w[1], [-0.5, 0.0, 0.5])
    assert_allclose(w[2], [1.0, -2.0, 1.0])


def test_fornberg_exact_on_polynomials():
    x = np.linspace(-0.3, 0.5, 7)
    w = fornberg_weights(0.1, x, 2)
    assert_allclose(w[1] @ x**5, 5 * 0.1**4, atol=1e-12)
    assert_allclose(w[2] @ x**6, 30 * 0.1**4, atol=1e-11)


def test_grid_basic():
    g = RadialGrid()
    assert g.r[0] == 1.0 and abs(g.r[-1] - 50.0) < 1e-12
    assert np.all(np.diff(g.r) > 0)
    assert_allclose(g.ddr @ g.r**3, 3 * g.r**2, rtol=1e-9)


def test_grid_validation():
    with pytest.raises(ValueError):
        RadialGrid(r_max=5.0)


def test_grid_integrate():
    g = RadialGrid()
    # integral of r^{-2} over [1, 50]
    assert_allclose(g.integrate(g.r**-2), 1 - 1 / 50, rtol=1e-10)


@pytest.mark.parametrize("n,k", [(3, 0), (3, 2), (4, 3), (5, 1)])
def test_indicial_roots(n, k):
    gm, gp = indicial_roots(n, k)
    assert_allclose([gm, gp], [2 - n - k, k], atol=1e-14)


@pytest.mark.parametrize("n", [3, 4])
def test_decaying_harmonic_is_reproduced(n):
    b = get_basis(n, 4)
    g = RadialGrid()
    w = SphereField(b, np.linspace(0.2, 1.0, b.size))
    u = solve_flat(None, w, grid=g)
    expected = w.coeffs[:, None] * g.r[None, :] ** (2.0 - n - b.degrees[:, None])
    assert_allclose(u.profiles, expected, atol=1e-9)


def test_source_with_known_solution():
    # degree 0 in R^3: Laplacian of r^p is p (p + 1) r^{p-2}
    b = get_basis(3, 2)
    g = RadialGrid()
    p = -3.0
    prof = np.zeros((b.size, g.points))
    prof[0] = g.r**p
    lap = p * (p + 1) * g.r ** (p - 2)
    src = np.zeros_like(prof)
    src[0] = lap
    u = solve_flat(src, SphereField(b, prof[:, 0]), grid=g)
    assert_allclose(u.profiles[0], g.r**p, atol=1e-9)


def test_flat_laplacian_of_harmonic_vanishes():
    b = get_basis(3, 4)
    g = RadialGrid()
    u = solve_flat(None, SphereField(b, np.ones(b.size)), grid=g)
    assert np.max(np.abs(flat_laplacian(u).profiles[:, 1:-1])) < 1e-7


def test_kelvin_involution(rng):
    b = get_basis(3, 3)
    g = RadialGrid()
    u = ExteriorField(b, g, rng.normal(size=(b.size, 1)) * g.r[None, :] ** -1.5, nu=-0.5)
    kk = kelvin(kelvin(u))
    assert not kk.grid.inverted
    assert_allclose(kk.profiles, u.profiles, atol=1e-14)
    assert kk.nu == -0.5


def test_normal_trace_of_harmonic(basis3):
    w = SphereField(basis3, np.ones(basis3.size))
    u = solve_flat(None, w)
    # -d/dr r^{-1-k} = 1 + k at r = 1
    assert_allclose(normal_trace(u).coeffs, 1.0 + basis3.degrees, atol=1e-8)


def test_tail_exponents():
    g = RadialGrid()
    fp = np.vstack([g.r**-3.0, -2 * g.r**-4.5, np.sin(g.r)])
    p = tail_exponents(fp, g)
    assert_allclose(p[:2], [-3.0, -4.5], atol=1e-12)
    assert np.isnan(p[2])


def test_exterior_field_json_and_evaluate(basis3):
    g = RadialGrid()
    u = solve_flat(None, SphereField.constant(basis3, 1.0), grid=g)
    v = ExteriorField.from_json(u.to_json())
    assert_allclose(v.profiles, u.profiles)
    x = np.array([[0.0, 3.0, 4.0]])
    assert_allclose(u.evaluate(x), 1 / 5.0, rtol=1e-8)


def test_invalid_decay_weight(basis3):
    with pytest.raises(ValueError):
        solve_flat(None, SphereField.zeros(basis3), nu=0.5)


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_solve_flat_is_linear_with_frozen_exponents(a, c):
    b = get_basis(3, 2)
    g = RadialGrid()
    f1 = np.outer(np.ones(b.size), g.r**-3.0)
    f2 = np.outer(np.arange(b.size, dtype=float), g.r**-4.0)
    e = np.full(b.size, -3.0)
    d1 = SphereField(b, np.linspace(0, 1, b.size))
    d2 = SphereField.constant(b, 1.0)
    lhs = solve_flat(a * f1 + c * f2, d1 * a + d2 * c, grid=g, exponents=e).profiles
    rhs = a * solve_flat(f1, d1, grid=g, exponents=e).profiles + c * solve_flat(f2, d2, grid=g, exponents=e).profiles
    assert_allclose(lhs, rhs, atol=1e-12)


def test_threaded_solves_agree():
    from concurrent.futures import ThreadPoolExecutor

    b = get_basis(3, 6)
    g = RadialGrid()
    d = SphereField(b, np.linspace(-1, 1, b.size))
    src = np.outer(np.ones(b.size), g.r**-3.0)
    ref = solve_flat(src, d, grid=g).profiles

    def run(_):
        return all(np.array_equal(solve_flat(src, d, grid=g).profiles, ref) for _ in range(40))

    with ThreadPoolExecutor(4) as pool:
        assert all(pool.map(run, range(8)))
