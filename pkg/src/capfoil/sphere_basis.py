"""Real spherical harmonics on S^{n-1}, product quadrature and the V1 projections.

For n = 3 the full real basis up to degree L is available.  For n >= 4 the
basis holds the constant, the n linear coordinates and the zonal (Gegenbauer)
harmonics about the last axis, which is all the rest of the package needs.

Every basis function is stored as a homogeneous harmonic polynomial, so its
0-homogeneous extension q(x) = p(x) / |x|^k has exact Cartesian gradients and
Hessians anywhere in R^n \\ {0}.  Basis functions are orthonormal in L^2(S^{n-1}).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.special import gegenbauer, roots_gegenbauer, roots_legendre

__all__ = [
    "HarmonicIndex",
    "SphereBasis",
    "SphereField",
    "get_basis",
    "sphere_area",
    "sphere_quadrature",
    "evaluate",
    "project",
    "pi_V1",
    "laplace_sphere",
]


class HarmonicIndex(NamedTuple):
    degree: int
    order: int


def sphere_area(n: int) -> float:
    """Area of the unit sphere S^{n-1} in R^n."""
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


def sphere_quadrature(n: int, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Product Gauss rule on S^{n-1}, exact for polynomials up to `degree`.

    Built recursively: Gauss-Gegenbauer nodes in the last coordinate times a
    rule on S^{n-2}; the base case S^1 is the uniform rule.  The S^1 node count
    is rounded up to a multiple of 4 so the rule is invariant under quarter
    turns in the first coordinate plane.
    """
    if n < 2:
        raise ValueError("sphere quadrature needs n >= 2")
    if n == 2:
        m = degree + 1
        m += (-m) % 4
        ang = 2.0 * np.pi * np.arange(m) / m
        nodes = np.column_stack([np.cos(ang), np.sin(ang)])
        return nodes, np.full(m, 2.0 * np.pi / m)
    nt = degree // 2 + 1
    if n == 3:
        t, wt = roots_legendre(nt)
    else:
        t, wt = roots_gegenbauer(nt, (n - 2) / 2.0)
    sub_nodes, sub_w = sphere_quadrature(n - 1, degree)
    radial = np.sqrt(1.0 - t**2)
    nodes = np.concatenate(
        [np.column_stack([rt * sub_nodes, np.full(len(sub_w), ti)]) for ti, rt in zip(t, radial)]
    )
    weights = np.concatenate([wi * sub_w for wi in wt])
    return nodes, weights


# --- homogeneous polynomials as {exponent tuple: coefficient} -------------


def _poly_mul(a: dict, b: dict) -> dict:
    out: dict = {}
    for ea, ca in a.items():
        for eb, cb in b.items():
            e = tuple(i + j for i, j in zip(ea, eb))
            out[e] = out.get(e, 0.0) + ca * cb
    return out


def _poly_add(a: dict, b: dict, scale: float = 1.0) -> dict:
    out = dict(a)
    for e, c in b.items():
        out[e] = out.get(e, 0.0) + scale * c
    return out


def _monomial(n: int, powers: dict[int, int], coef: float = 1.0) -> dict:
    e = [0] * n
    for axis, p in powers.items():
        e[axis] = p
    return {tuple(e): coef}


@lru_cache(maxsize=None)
def _r2_power(n: int, j: int) -> tuple:
    """(x_1^2 + ... + x_n^2)^j as a frozen polynomial."""
    out = _monomial(n, {})
    r2: dict = {}
    for i in range(n):
        r2 = _poly_add(r2, _monomial(n, {i: 2}))
    for _ in range(j):
        out = _poly_mul(out, r2)
    return tuple(out.items())


def _zonal_part(n: int, coeffs_t: np.ndarray, k: int, axis: int) -> dict:
    """r^k * sum_p c_p (x_axis / r)^p, with only p = k mod 2 terms present."""
    out: dict = {}
    for p, c in enumerate(coeffs_t):
        if c == 0.0 or (k - p) % 2:
            continue
        term = _poly_mul(_monomial(n, {axis: p}, c), dict(_r2_power(n, (k - p) // 2)))
        out = _poly_add(out, term)
    return out


def _harmonic_poly_3d(k: int, m: int) -> dict:
    """Unnormalised real harmonic of degree k, order m in R^3 (no Condon-Shortley phase)."""
    am = abs(m)
    pk = npleg.leg2poly([0.0] * k + [1.0])
    dpk = np.polynomial.polynomial.polyder(pk, am) if am else pk
    dpk = np.asarray(dpk, dtype=float)
    # make sure parity-forbidden terms are exact zeros
    dpk = np.array([c if (k - am - p) % 2 == 0 else 0.0 for p, c in enumerate(dpk)])
    a = _zonal_part(3, dpk, k - am, axis=2)
    b: dict = {}
    for l in range(am + 1):
        if m >= 0 and l % 2 == 0:
            sign = (-1) ** (l // 2)
        elif m < 0 and l % 2 == 1:
            sign = (-1) ** ((l - 1) // 2)
        else:
            continue
        b = _poly_add(b, _monomial(3, {0: am - l, 1: l}, sign * math.comb(am, l)))
    if am == 0:
        b = _monomial(3, {})
    return _poly_mul(a, b)


def _zonal_poly(n: int, k: int) -> dict:
    c = np.asarray(gegenbauer(k, (n - 2) / 2.0).coeffs[::-1], dtype=float)
    c = np.array([v if (k - p) % 2 == 0 else 0.0 for p, v in enumerate(c)])
    return _zonal_part(n, c, k, axis=n - 1)


def _powers(x: np.ndarray, degree: int) -> np.ndarray:
    """x_i^k for k <= degree, shape (n, degree + 1, points)."""
    return np.ascontiguousarray(x.T[:, None, :] ** np.arange(degree + 1)[None, :, None])


class _Poly:
    """Vectorised evaluation of a homogeneous polynomial with derivatives."""

    def __init__(self, terms: dict, n: int, degree: int):
        items = [(e, c) for e, c in terms.items() if c != 0.0]
        self.n = n
        self.degree = degree
        self.exps = np.array([e for e, _ in items], dtype=int).reshape(-1, n)
        self.coefs = np.array([c for _, c in items], dtype=float)

    def scaled(self, s: float) -> "_Poly":
        out = object.__new__(_Poly)
        out.n, out.degree, out.exps, out.coefs = self.n, self.degree, self.exps, self.coefs * s
        return out

    def _eval(self, x: np.ndarray, exps: np.ndarray, coefs: np.ndarray, powers=None) -> np.ndarray:
        if len(coefs) == 0:
            return np.zeros(x.shape[0])
        # gather from per-coordinate power tables instead of raising to powers per term
        if powers is None:
            powers = _powers(x, self.degree)
        mono = powers[0][exps[:, 0]]
        for i in range(1, x.shape[1]):
            mono *= powers[i][exps[:, i]]
        return coefs @ mono

    def value(self, x: np.ndarray, powers=None) -> np.ndarray:
        return self._eval(x, self.exps, self.coefs, powers)

    def grad(self, x: np.ndarray, powers=None) -> np.ndarray:
        out = np.zeros(x.shape)
        for i in range(self.n):
            e = self.exps[:, i]
            keep = e > 0
            ex = self.exps[keep].copy()
            ex[:, i] -= 1
            out[:, i] = self._eval(x, ex, self.coefs[keep] * e[keep], powers)
        return out

    def hess(self, x: np.ndarray, powers=None) -> np.ndarray:
        out = np.zeros(x.shape + (self.n,))
        for i in range(self.n):
            for j in range(i, self.n):
                ex = self.exps.copy()
                c = self.coefs * ex[:, i]
                ex[:, i] -= 1
                c = c * ex[:, j]
                ex[:, j] -= 1
                keep = c != 0
                val = self._eval(x, ex[keep], c[keep], powers)
                out[:, i, j] = val
                out[:, j, i] = val
        return out


@dataclass(eq=False)
class SphereBasis:
    """Orthonormal harmonic basis of degree <= L plus a product quadrature.

    Attributes ``Y``, ``dY`` and ``HY`` hold, at the quadrature nodes, the basis
    values and the Cartesian gradient and Hessian of the 0-homogeneous
    extension x -> Y(x/|x|), evaluated on the unit sphere.
    """

    n: int
    L: int
    quad_degree: int | None = None
    indices: list = field(init=False)
    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("dimension must be >= 3")
        if self.L < 1:
            raise ValueError("truncation degree must be >= 1")
        if self.quad_degree is None:
            self.quad_degree = max(3 * self.L, 2 * self.L + 2)
        self.full = self.n == 3
        self.area = sphere_area(self.n)
        self.indices, polys = self._build_polys()
        self.degrees = np.array([idx.degree for idx in self.indices])
        self.eigenvalues = self.degrees * (self.degrees + self.n - 2.0)
        self.nodes, self.weights = sphere_quadrature(self.n, self.quad_degree)
        # normalise with an exact rule for the squares
        qn, qw = sphere_quadrature(self.n, 2 * self.L + 2)
        self._polys = []
        for p in polys:
            norm = math.sqrt(float(qw @ p.value(qn) ** 2))
            self._polys.append(p.scaled(1.0 / norm))
        self.Y, self.dY, self.HY = self.tables(self.nodes)
        self._wY = self.Y * self.weights[None, :]
        lin = [b for b, idx in enumerate(self.indices) if idx.degree == 1]
        self.degree1 = np.array(lin)
        # axis of each degree-1 member: Y_b = c1 * x_axis
        self.degree1_axis = np.array([int(np.argmax(np.abs(self._polys[b].exps[0]))) for b in lin])
        self.c1 = math.sqrt(self.n / self.area)

    def _build_polys(self):
        n = self.n
        indices, polys = [], []
        for k in range(self.L + 1):
            if self.full:
                for m in range(-k, k + 1):
                    indices.append(HarmonicIndex(k, m))
                    polys.append(_Poly(_harmonic_poly_3d(k, m), n, k))
            elif k == 0:
                indices.append(HarmonicIndex(0, 0))
                polys.append(_Poly(_monomial(n, {}), n, 0))
            elif k == 1:
                for i in range(n):
                    indices.append(HarmonicIndex(1, i))
                    polys.append(_Poly(_monomial(n, {i: 1}), n, 1))
            else:
                indices.append(HarmonicIndex(k, 0))
                polys.append(_Poly(_zonal_poly(n, k), n, k))
        return indices, polys

    @property
    def size(self) -> int:
        return len(self.indices)

    def tables(self, points: np.ndarray):
        """Values, gradients and Hessians of the 0-homogeneous basis at unit points."""
        x = np.atleast_2d(np.asarray(points, dtype=float))
        nb, npts, n = self.size, x.shape[0], self.n
        Y = np.empty((nb, npts))
        dY = np.empty((nb, npts, n))
        HY = np.empty((nb, npts, n, n))
        eye = np.eye(n)
        xx = x[:, :, None] * x[:, None, :]
        powers = _powers(x, self.L)
        for b, p in enumerate(self._polys):
            k = p.degree
            v, g, h = p.value(x, powers), p.grad(x, powers), p.hess(x, powers)
            Y[b] = v
            dY[b] = g - k * v[:, None] * x
            xg = x[:, :, None] * g[:, None, :]
            HY[b] = (
                h
                - k * (xg + np.swapaxes(xg, 1, 2))
                - k * v[:, None, None] * eye
                + k * (k + 2) * v[:, None, None] * xx
            )
        return Y, dY, HY

    def values(self, points: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(points, dtype=float))
        return np.array([p.value(x) for p in self._polys])

    def project_samples(self, samples: np.ndarray) -> np.ndarray:
        """Quadrature projection of node samples; the node axis is the last one."""
        samples = np.asarray(samples, dtype=float)
        if samples.shape[-1] != len(self.weights):
            raise ValueError(
                f"expected {len(self.weights)} samples at the quadrature nodes, got {samples.shape[-1]}"
            )
        return samples @ self._wY.T

    def degree_mask(self, degrees) -> np.ndarray:
        return np.isin(self.degrees, list(degrees))

    def index_of(self, degree: int, order: int) -> int:
        return self.indices.index(HarmonicIndex(degree, order))

    def linear_coordinate(self, axis: int) -> int:
        """Basis slot whose function is proportional to x_axis."""
        return int(self.degree1[list(self.degree1_axis).index(axis)])


@lru_cache(maxsize=32)
def get_basis(n: int, L: int, quad_degree: int | None = None) -> SphereBasis:
    return SphereBasis(n, L, quad_degree)


@dataclass(frozen=True, eq=False)
class SphereField:
    """Band-limited scalar function on S^{n-1} stored by orthonormal coefficients."""

    basis: SphereBasis
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (self.basis.size,):
            raise ValueError(f"expected {self.basis.size} coefficients, got shape {c.shape}")
        object.__setattr__(self, "coeffs", c)

    @property
    def n(self) -> int:
        return self.basis.n

    @property
    def L(self) -> int:
        return self.basis.L

    @classmethod
    def zeros(cls, basis: SphereBasis) -> "SphereField":
        return cls(basis, np.zeros(basis.size))

    @classmethod
    def constant(cls, basis: SphereBasis, c: float) -> "SphereField":
        coeffs = np.zeros(basis.size)
        coeffs[0] = c * math.sqrt(basis.area)
        return cls(basis, coeffs)

    @classmethod
    def linear(cls, basis: SphereBasis, vec) -> "SphereField":
        """The degree-1 field sum_i vec_i x_i."""
        coeffs = np.zeros(basis.size)
        for b, axis in zip(basis.degree1, basis.degree1_axis):
            coeffs[b] = vec[axis] / basis.c1
        return cls(basis, coeffs)

    @classmethod
    def from_function(cls, basis: SphereBasis, func) -> "SphereField":
        return project(func(basis.nodes), basis)

    def nodal(self) -> np.ndarray:
        return self.coeffs @ self.basis.Y

    def __call__(self, theta) -> np.ndarray:
        return self.coeffs @ self.basis.values(theta)

    def __add__(self, other: "SphereField") -> "SphereField":
        return SphereField(self.basis, self.coeffs + other.coeffs)

    def __sub__(self, other: "SphereField") -> "SphereField":
        return SphereField(self.basis, self.coeffs - other.coeffs)

    def __neg__(self) -> "SphereField":
        return SphereField(self.basis, -self.coeffs)

    def __mul__(self, s: float) -> "SphereField":
        return SphereField(self.basis, self.coeffs * float(s))

    __rmul__ = __mul__

    def mean(self) -> float:
        return self.coeffs[0] / math.sqrt(self.basis.area)

    def l2_norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.nodal())))

    def degree_part(self, degrees) -> "SphereField":
        return SphereField(self.basis, np.where(self.basis.degree_mask(degrees), self.coeffs, 0.0))

    def to_json(self) -> str:
        return json.dumps(
            {"n": self.n, "L": self.L, "convention": "orthonormal", "coeffs": self.coeffs.tolist()}
        )

    @classmethod
    def from_json(cls, text: str) -> "SphereField":
        d = json.loads(text)
        if d.get("convention", "orthonormal") != "orthonormal":
            raise ValueError("only the orthonormal convention is supported")
        return cls(get_basis(int(d["n"]), int(d["L"])), np.array(d["coeffs"], dtype=float))


def evaluate(f: SphereField, theta) -> float:
    """Value of f at the unit vector theta."""
    theta = np.asarray(theta, dtype=float)
    if abs(np.linalg.norm(theta) - 1.0) > 1e-12:
        raise ValueError("evaluation point must be a unit vector")
    return float(f(theta[None, :])[0])


def project(samples, basis: SphereBasis) -> SphereField:
    """Harmonic coefficients of samples given at the basis quadrature nodes."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape != (len(basis.weights),):
        raise ValueError(
            f"expected {len(basis.weights)} samples at the quadrature nodes, got {samples.shape}"
        )
    return SphereField(basis, basis.project_samples(samples))


def pi_V1(f: SphereField) -> tuple[SphereField, np.ndarray]:
    """Degree-1 part of f and its coordinates under x_i -> e_i."""
    basis = f.basis
    tau = np.zeros(basis.n)
    for b, axis in zip(basis.degree1, basis.degree1_axis):
        tau[axis] = f.coeffs[b] * basis.c1
    return f.degree_part([1]), tau


def pi_V1_perp(f: SphereField) -> SphereField:
    return f - f.degree_part([1])


def laplace_sphere(f: SphereField) -> SphereField:
    return SphereField(f.basis, -f.basis.eigenvalues * f.coeffs)
