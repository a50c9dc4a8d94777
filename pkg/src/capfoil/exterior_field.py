"""Mode-wise fields on the exterior of the unit ball and the flat exterior solver.

A field is u(x) = sum_b U_b(|x|) Y_b(x/|x|) with the radial profiles sampled on a
grid that is uniform in s = log r.  In that variable the flat Laplacian of one
mode of degree k reads

    r^2 (Delta_0 u)_k = U_ss + (n-2) U_s - k(k+n-2) U,

which is discretised with high-order finite differences.  The decaying branch
is selected by a Robin condition at the outer radius.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .sphere_basis import HarmonicIndex, SphereBasis, SphereField, get_basis

__all__ = [
    "fornberg_weights",
    "RadialGrid",
    "ExteriorField",
    "IndicialPair",
    "indicial_roots",
    "solve_flat",
    "flat_laplacian",
    "kelvin",
    "normal_trace",
]


def fornberg_weights(z: float, x: np.ndarray, m: int) -> np.ndarray:
    """Finite difference weights for derivatives 0..m at z on the stencil x.

    Returns an array of shape (m + 1, len(x)); row d holds the weights of the
    d-th derivative.
    """
    x = np.asarray(x, dtype=float)
    nx = len(x)
    c = np.zeros((nx, m + 1))
    c1, c4 = 1.0, x[0] - z
    c[0, 0] = 1.0
    for i in range(1, nx):
        mn = min(i, m)
        c2, c5, c4 = 1.0, c4, x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c.T


def _diff_matrices(s: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivative matrices of the given (even) accuracy order."""
    n = len(s)
    half = order // 2
    width = order + 2  # one-sided rows need an extra point for the second derivative
    D1 = np.zeros((n, n))
    D2 = np.zeros((n, n))
    for i in range(n):
        if half <= i < n - half:
            idx = np.arange(i - half, i + half + 1)
        elif i < half:
            idx = np.arange(0, width)
        else:
            idx = np.arange(n - width, n)
        w = fornberg_weights(s[i], s[idx], 2)
        D1[i, idx] = w[1]
        D2[i, idx] = w[2]
    return D1, D2


@dataclass(frozen=True)
class RadialGrid:
    """Log-graded samples of [1, r_max] (or of [1/r_max, 1] when inverted)."""

    points: int = 400
    r_max: float = 50.0
    order: int = 8
    inverted: bool = False

    def __post_init__(self):
        if self.r_max < 10.0:
            raise ValueError("r_max must be at least 10")
        if self.order % 2 or self.order < 2:
            raise ValueError("finite difference order must be a positive even integer")
        if self.points < self.order + 4:
            raise ValueError("too few radial points for the stencil")

    @cached_property
    def s(self) -> np.ndarray:
        smax = np.log(self.r_max)
        if self.inverted:
            return np.linspace(-smax, 0.0, self.points)
        return np.linspace(0.0, smax, self.points)

    @cached_property
    def r(self) -> np.ndarray:
        r = np.exp(self.s)
        r[-1 if self.inverted else 0] = 1.0
        return r

    @cached_property
    def _mats(self):
        return _diff_matrices(self.s, self.order)

    @property
    def D1(self) -> np.ndarray:
        """d/ds."""
        return self._mats[0]

    @property
    def D2(self) -> np.ndarray:
        """d^2/ds^2."""
        return self._mats[1]

    @cached_property
    def ddr(self) -> np.ndarray:
        return self.D1 / self.r[:, None]

    @cached_property
    def d2dr2(self) -> np.ndarray:
        return (self.D2 - self.D1) / self.r[:, None] ** 2

    def refined(self, factor: int = 2) -> "RadialGrid":
        return RadialGrid(factor * (self.points - 1) + 1, self.r_max, self.order, self.inverted)

    def flipped(self) -> "RadialGrid":
        return RadialGrid(self.points, self.r_max, self.order, not self.inverted)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Integral over r of values (last axis) using Simpson's rule in s."""
        from scipy.integrate import simpson

        return simpson(values * self.r, x=self.s, axis=-1)


class IndicialPair(NamedTuple):
    gamma_minus: float
    gamma_plus: float


def indicial_roots(n: int, k: int) -> IndicialPair:
    """Exponents of the homogeneous solutions r^gamma of a degree-k flat mode."""
    if n < 3 or k < 0:
        raise ValueError("need n >= 3 and k >= 0")
    lam = k * (k + n - 2)
    half = (n - 2) / 2.0
    disc = np.sqrt(half**2 + lam)
    return IndicialPair(float(-half - disc), float(-half + disc))


@dataclass(frozen=True, eq=False)
class ExteriorField:
    """Radial profiles (one row per basis function) on a RadialGrid."""

    basis: SphereBasis
    grid: RadialGrid
    profiles: np.ndarray
    nu: float | None = None

    def __post_init__(self):
        p = np.asarray(self.profiles, dtype=float)
        if p.shape != (self.basis.size, self.grid.points):
            raise ValueError(f"profiles must have shape {(self.basis.size, self.grid.points)}")
        object.__setattr__(self, "profiles", p)

    @property
    def n(self) -> int:
        return self.basis.n

    @property
    def L(self) -> int:
        return self.basis.L

    @classmethod
    def zeros(cls, basis: SphereBasis, grid: RadialGrid, nu=None) -> "ExteriorField":
        return cls(basis, grid, np.zeros((basis.size, grid.points)), nu)

    @classmethod
    def from_radial(cls, basis: SphereBasis, grid: RadialGrid, mode, func, nu=None) -> "ExteriorField":
        """Field with a single mode `mode` (basis slot) whose profile is func(r)."""
        out = np.zeros((basis.size, grid.points))
        out[mode] = func(grid.r)
        return cls(basis, grid, out, nu)

    def with_profiles(self, profiles: np.ndarray, nu=None) -> "ExteriorField":
        return ExteriorField(self.basis, self.grid, profiles, self.nu if nu is None else nu)

    def __add__(self, other: "ExteriorField") -> "ExteriorField":
        return self.with_profiles(self.profiles + other.profiles)

    def __sub__(self, other: "ExteriorField") -> "ExteriorField":
        return self.with_profiles(self.profiles - other.profiles)

    def __mul__(self, s: float) -> "ExteriorField":
        return self.with_profiles(self.profiles * float(s))

    __rmul__ = __mul__

    def boundary(self) -> SphereField:
        """Trace on the unit sphere."""
        j = -1 if self.grid.inverted else 0
        return SphereField(self.basis, self.profiles[:, j])

    def radial_derivative(self) -> np.ndarray:
        return self.profiles @ self.grid.ddr.T

    def second_radial_derivative(self) -> np.ndarray:
        return self.profiles @ self.grid.d2dr2.T

    def evaluate(self, x) -> np.ndarray:
        """Point values at Cartesian points inside the grid range (cubic interpolation in s)."""
        from scipy.interpolate import CubicSpline

        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.linalg.norm(x, axis=1)
        spline = CubicSpline(self.grid.s, self.profiles, axis=1)
        radial = spline(np.log(r))
        ang = self.basis.values(x / r[:, None])
        return np.sum(radial * ang, axis=0)

    def to_json(self) -> str:
        modes = {f"{i.degree},{i.order}": row.tolist() for i, row in zip(self.basis.indices, self.profiles)}
        return json.dumps(
            {
                "n": self.n,
                "L": self.L,
                "nu": self.nu,
                "grid": self.grid.r.tolist(),
                "grid_params": {
                    "points": self.grid.points,
                    "r_max": self.grid.r_max,
                    "order": self.grid.order,
                    "inverted": self.grid.inverted,
                },
                "modes": modes,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ExteriorField":
        d = json.loads(text)
        basis = get_basis(int(d["n"]), int(d["L"]))
        grid = RadialGrid(**d["grid_params"])
        prof = np.zeros((basis.size, grid.points))
        for key, row in d["modes"].items():
            k, m = (int(v) for v in key.split(","))
            prof[basis.indices.index(HarmonicIndex(k, m))] = row
        return cls(basis, grid, prof, d.get("nu"))


# per thread: lu_solve on a factorisation shared between threads corrupts memory
# with the bundled LAPACK, while separate factorisations are safe
_LU_LOCAL = threading.local()


def _mode_lu(grid: RadialGrid, n: int, k: int):
    cache = _LU_LOCAL.__dict__.setdefault("cache", {})
    key = (grid, n, k)
    lu = cache.get(key)
    if lu is None:
        lam = k * (k + n - 2)
        A = grid.D2 + (n - 2) * grid.D1 - lam * np.eye(grid.points)
        A[0] = 0.0
        A[0, 0] = 1.0
        A[-1] = grid.D1[-1]
        A[-1, -1] -= 2 - n - k
        lu = lu_factor(A)
        if len(cache) > 512:
            cache.clear()
        cache[key] = lu
    return lu


def tail_exponents(fp: np.ndarray, grid: RadialGrid, baseline: float = 0.5) -> np.ndarray:
    """Per-mode power-law exponent of a source near the outer radius (nan if unusable).

    The exponent is the log-slope between the last sample and the one `baseline`
    further in, in s = log r, which keeps round-off in the source from being
    amplified by the fine grid spacing.
    """
    ds = grid.s[1] - grid.s[0]
    m = int(min(max(1, round(baseline / ds)), grid.points - 2))
    a, b = fp[:, -1], fp[:, -1 - m]
    out = np.full(len(a), np.nan)
    ok = (a * b > 0) & (np.maximum(np.abs(a), np.abs(b)) > 1e-300)
    if m > 1:
        # a sign change inside the window also disqualifies the fit
        ok &= np.all(fp[:, -1 - m:] * a[:, None] > 0, axis=1)
    out[ok] = np.log(a[ok] / b[ok]) / (grid.s[-1] - grid.s[-1 - m])
    return out


def solve_flat(
    f,
    dirichlet: SphereField,
    nu: float | None = None,
    grid: RadialGrid | None = None,
    exponents: np.ndarray | None = None,
) -> ExteriorField:
    """Solve Delta_0 u = f on the exterior with u = dirichlet on the unit sphere.

    Parameters
    ----------
    f : ExteriorField, ndarray of shape (modes, points), or None
        Source term.  ``None`` means f = 0.
    dirichlet : SphereField
        Boundary values.
    nu : float, optional
        Decay weight, must lie in (2-n, 0).  Recorded on the result.
    grid : RadialGrid, optional
        Needed only when f is not an ExteriorField.
    exponents : ndarray, optional
        Frozen per-mode decay exponents of f for the outer closure.  When given
        the solve is linear in (f, dirichlet); otherwise they are fitted from f.
    """
    basis = dirichlet.basis
    n = basis.n
    if nu is None:
        nu = (2.0 - n) / 2.0
    if not (2 - n < nu < 0):
        raise ValueError(f"decay weight nu={nu} must lie in ({2 - n}, 0)")
    if isinstance(f, ExteriorField):
        grid = f.grid
        fp = f.profiles
    else:
        grid = grid or RadialGrid()
        fp = np.zeros((basis.size, grid.points)) if f is None else np.asarray(f, dtype=float)
    if grid.inverted:
        raise ValueError("solve_flat works on exterior grids")
    rhs = fp * grid.r[None, :] ** 2
    rhs[:, 0] = dirichlet.coeffs
    p = tail_exponents(fp, grid) if exponents is None else np.asarray(exponents, dtype=float)
    denom = p + 2.0 - basis.degrees
    ok = np.isfinite(denom) & (np.abs(denom) > 1e-6)
    rhs[:, -1] = 0.0
    rhs[ok, -1] = fp[ok, -1] * grid.r_max**2 / denom[ok]
    out = np.empty_like(rhs)
    for k in np.unique(basis.degrees):
        rows = basis.degrees == k
        out[rows] = lu_solve(_mode_lu(grid, n, int(k)), rhs[rows].T).T
    return ExteriorField(basis, grid, out, nu)


def _mode_operator(U: np.ndarray, grid: RadialGrid, n: int, lam: np.ndarray) -> np.ndarray:
    LU = U @ grid.D2.T + (n - 2) * (U @ grid.D1.T) - lam[:, None] * U
    return LU / grid.r[None, :] ** 2


def flat_laplacian(u: ExteriorField) -> ExteriorField:
    """Mode-wise flat Laplacian; stencil-accurate at every sample."""
    return u.with_profiles(_mode_operator(u.profiles, u.grid, u.n, u.basis.eigenvalues))


def kelvin(u: ExteriorField) -> ExteriorField:
    """|x|^{2-n} u(x/|x|^2), mapping exterior samples to interior ones and back."""
    g = u.grid
    new = g.flipped()
    prof = u.profiles[:, ::-1] * new.r[None, :] ** (2 - u.n)
    nu = None if u.nu is None else 2 - u.n - u.nu
    return ExteriorField(u.basis, new, prof, nu)


def normal_trace(u: ExteriorField) -> SphereField:
    """-d/dr u on the unit sphere (derivative along the inward normal of the exterior)."""
    if u.grid.points < u.grid.order + 2:
        raise ValueError("not enough radial points near the boundary")
    j = -1 if u.grid.inverted else 0
    return SphereField(u.basis, -(u.profiles @ u.grid.ddr[j]))
