"""Conformally flat metric model, the rescaled pullback and its Laplace-Beltrami operator.

The end is modelled as g(y) = phi(y) * delta with

    phi(y) = 1 + sigma |y|^{1-n} + eps |y|^{-n} a(y/|y|),    a(t) = 1 + <d,t> + <d,t>^2.

A shape (rho, tau, w) maps the exterior of the unit ball onto the exterior of a
perturbed sphere, x -> rho (tau + (1 + w(x/|x|)) x), and everything is pulled back
exactly through that map; no truncated expansion is used.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .exterior_field import ExteriorField, RadialGrid
from .sphere_basis import SphereBasis, SphereField

__all__ = [
    "MetricModel",
    "Shape",
    "MetricAtPoint",
    "ShapeGeometry",
    "LaplaceBeltrami",
    "pullback_metric",
    "laplace_beltrami_apply",
    "unit_normal",
]

H_PROFILES = ("none", "power")


@dataclass(frozen=True)
class MetricModel:
    """Conformal factor of the asymptotically flat end.

    Parameters
    ----------
    n : int
        Dimension, at least 3.
    sigma : float
        Mass parameter.
    h_amplitude : float
        Size of the |y|^{-n} anisotropic correction.
    h_profile : {"none", "power"}
        "none" switches the correction off whatever the amplitude.
    direction : tuple, optional
        Unit vector d of the anisotropy.  Defaults to the last axis, which keeps
        the problem axisymmetric so that the zonal basis used for n >= 4 suffices.
    """

    n: int
    sigma: float = 0.0
    h_amplitude: float = 0.0
    h_profile: str = "none"
    direction: tuple | None = None

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("dimension must be >= 3")
        if self.h_profile not in H_PROFILES:
            raise ValueError(f"h_profile must be one of {H_PROFILES}")
        d = np.zeros(self.n) if self.direction is None else np.asarray(self.direction, dtype=float)
        if self.direction is None:
            d[-1] = 1.0
        if d.shape != (self.n,):
            raise ValueError("direction must have n components")
        object.__setattr__(self, "direction", tuple(d / np.linalg.norm(d)))

    @property
    def eps(self) -> float:
        return 0.0 if self.h_profile == "none" else float(self.h_amplitude)

    @property
    def is_flat(self) -> bool:
        return self.sigma == 0.0 and self.eps == 0.0

    def conformal_factor(self, y: np.ndarray, with_gradient: bool = False):
        """phi at points y (last axis of length n) and optionally its gradient."""
        y = np.asarray(y, dtype=float)
        n = self.n
        r = np.linalg.norm(y, axis=-1)
        phi = 1.0 + self.sigma * r ** (1 - n)
        grad = (self.sigma * (1 - n) * r ** (-1 - n))[..., None] * y
        if self.eps:
            d = np.asarray(self.direction)
            yh = y / r[..., None]
            c = yh @ d
            a = 1.0 + c + c**2
            phi = phi + self.eps * r ** (-n) * a
            dc = (d - c[..., None] * yh) / r[..., None]
            grad = grad + self.eps * (
                (-n * r ** (-n - 2) * a)[..., None] * y + (r ** (-n) * (1 + 2 * c))[..., None] * dc
            )
        if with_gradient:
            return phi, grad
        return phi

    def metric(self, y: np.ndarray) -> np.ndarray:
        return self.conformal_factor(y)[..., None, None] * np.eye(self.n)

    def perturbation(self, y: np.ndarray) -> np.ndarray:
        """The h part of phi, i.e. phi - 1 - sigma |y|^{1-n}."""
        y = np.asarray(y, dtype=float)
        return self.conformal_factor(y) - 1.0 - self.sigma * np.linalg.norm(y, axis=-1) ** (1 - self.n)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "sigma": self.sigma,
            "h_amplitude": self.h_amplitude,
            "h_profile": self.h_profile,
            "direction": list(self.direction),
        }


@dataclass(frozen=True, eq=False)
class Shape:
    """Perturbed sphere x -> rho (tau + (1 + w(x/|x|)) x) restricted to |x| = 1."""

    rho: float
    tau: np.ndarray
    w: SphereField
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        if tau.shape != (self.w.n,):
            raise ValueError("tau must have n components")
        object.__setattr__(self, "tau", tau)
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.check and self.w.sup_norm() >= 0.5:
            raise ValueError("shape deformation too large: sup|w| must stay below 1/2")

    @property
    def n(self) -> int:
        return self.w.n

    @property
    def basis(self) -> SphereBasis:
        return self.w.basis

    @classmethod
    def trivial(cls, basis: SphereBasis, rho: float) -> "Shape":
        return cls(rho, np.zeros(basis.n), SphereField.zeros(basis))

    def replace(self, **kw) -> "Shape":
        d = {"rho": self.rho, "tau": self.tau, "w": self.w, "check": self.check}
        d.update(kw)
        return Shape(**d)

    def to_dict(self) -> dict:
        return {"rho": self.rho, "tau": self.tau.tolist(), "w": {"n": self.n, "L": self.w.L, "coeffs": self.w.coeffs.tolist()}}


class MetricAtPoint(NamedTuple):
    g: np.ndarray
    g_inv: np.ndarray
    sqrt_det: float
    a: np.ndarray
    b: np.ndarray


def _jacobian(W, dW, theta):
    """J_ia = (1+W) delta_ia + theta_i dW_a for stacks of points."""
    n = theta.shape[-1]
    return (1.0 + W)[..., None, None] * np.eye(n) + theta[..., :, None] * dW[..., None, :]


def _shape_fields(shape: Shape, theta: np.ndarray):
    """w, its 0-homogeneous gradient and Hessian at unit points (explicit points)."""
    Y, dY, HY = shape.basis.tables(theta)
    c = shape.w.coeffs
    return c @ Y, np.einsum("b,bpi->pi", c, dY), np.einsum("b,bpij->pij", c, HY)


def _flat_drift(M, dW, HW, theta):
    """Flat Laplacian of the coordinates x_b seen as functions of z, times r."""
    n = theta.shape[-1]
    eye = np.eye(n)
    # dJ[p, a, i, j] = r * d_a J_ij
    dJ = (
        dW[:, :, None, None] * eye[None, None, :, :]
        + eye[None, :, :, None] * dW[:, None, None, :]
        + theta[:, None, :, None] * HW[:, :, None, :]
    )
    return -np.einsum("pai,pbc,pacd,pdi->pb", M, M, dJ, M)


class ShapeGeometry:
    """Angular tables of the shape map at the quadrature nodes."""

    def __init__(self, shape: Shape, basis: SphereBasis | None = None):
        basis = basis or shape.basis
        self.shape = shape
        self.basis = basis
        c = shape.w.coeffs
        theta = basis.nodes
        self.theta = theta
        self.W = c @ basis.Y
        self.dW = np.einsum("b,bpi->pi", c, basis.dY)
        self.HW = np.einsum("b,bpij->pij", c, basis.HY)
        self.J = _jacobian(self.W, self.dW, theta)
        self.detJ = np.linalg.det(self.J)
        if np.any(self.detJ <= 0):
            raise ValueError("degenerate shape: the parameterisation is not an immersion")
        self.M = np.linalg.inv(self.J)
        self.B = self.M @ np.swapaxes(self.M, 1, 2)  # (J^T J)^{-1}
        self.drift = _flat_drift(self.M, self.dW, self.HW, theta)

    def z(self, r: np.ndarray) -> np.ndarray:
        """Points tau + (1+w) r theta, shape (len(r), nodes, n)."""
        return self.shape.tau + ((1.0 + self.W)[None, :, None] * self.theta[None]) * r[:, None, None]


class LaplaceBeltrami:
    """The Laplace-Beltrami operator of the rescaled pullback metric on a radial grid.

    Acts on mode profiles of shape (basis size, grid points) and returns the
    projected profiles of the result.  All angular work is done once per shape.
    """

    def __init__(self, model: MetricModel, shape: Shape, grid: RadialGrid):
        if model.n != shape.n:
            raise ValueError("model and shape dimensions differ")
        self.model, self.shape, self.grid = model, shape, grid
        basis = shape.basis
        self.basis = basis
        geo = ShapeGeometry(shape)
        self.geo = geo
        n = model.n
        th = geo.theta
        Y, dY, HY = basis.Y, basis.dY, basis.HY
        B = geo.B
        xBx = np.einsum("pi,pij,pj->p", th, B, th)
        trB = np.trace(B, axis1=1, axis2=2)
        self.a1 = Y * xBx
        self.a2 = Y * (trB - xBx) + 2.0 * np.einsum("pi,pij,bpj->bp", th, B, dY)
        self.a3 = np.einsum("pij,bpij->bp", B, HY)
        self.b1 = Y * np.einsum("pi,pi->p", th, geo.drift)
        self.b2 = np.einsum("bpi,pi->bp", dY, geo.drift)
        r = grid.r
        z = geo.z(r)
        phi, dphi = model.conformal_factor(shape.rho * z, with_gradient=True)
        self.phi = phi  # (points, nodes)
        if model.is_flat:
            self.conf = None
        else:
            glog = shape.rho * dphi / phi[..., None]
            self.conf = 0.5 * (n - 2) * np.einsum("pai,rpi->rpa", geo.M, glog)
        self._wY = basis.Y * basis.weights

    def nodal(self, profiles: np.ndarray) -> np.ndarray:
        """Apply the operator and return values on (grid points, nodes)."""
        g = self.grid
        U = profiles
        U1 = U @ g.ddr.T
        U2 = U @ g.d2dr2.T
        r = g.r[:, None]
        out = U2.T @ self.a1 + (U1.T / r) @ self.a2 + (U.T / r**2) @ self.a3
        out += ((U1.T @ self.b1) + (U.T @ self.b2) / r) / r
        if self.conf is not None:
            th = self.geo.theta
            radial = U1.T @ self.basis.Y  # (r, p)
            ang = np.einsum("br,bpi->rpi", U, self.basis.dY) / r[..., None]
            grad = radial[..., None] * th[None] + ang
            out += np.einsum("rpi,rpi->rp", self.conf, grad)
        return out / self.phi

    def apply(self, profiles: np.ndarray) -> np.ndarray:
        return (self.nodal(profiles) @ self._wY.T).T

    def normal_factor(self) -> np.ndarray:
        """sqrt(theta^T g^{-1} theta) on the unit sphere at the quadrature nodes."""
        th = self.geo.theta
        return np.sqrt(np.einsum("pi,pij,pj->p", th, self.geo.B, th) / self.phi[0])


def pullback_metric(model: MetricModel, shape: Shape, x) -> MetricAtPoint:
    """Exact components of the rescaled pullback metric at a point with |x| >= 1."""
    x = np.asarray(x, dtype=float)
    r = float(np.linalg.norm(x))
    if r < 1.0 - 1e-12:
        raise ValueError("point must lie outside the unit ball")
    theta = (x / r)[None, :]
    W, dW, HW = _shape_fields(shape, theta)
    J = _jacobian(W, dW, theta)
    det = np.linalg.det(J)[0]
    if det <= 0:
        raise ValueError("degenerate shape: singular parameterisation Jacobian")
    M = np.linalg.inv(J)
    z = shape.tau + (1.0 + W[0]) * x
    phi, dphi = model.conformal_factor(shape.rho * z, with_gradient=True)
    A = J[0].T @ J[0]
    B = M[0] @ M[0].T
    g = phi * A
    g_inv = B / phi
    n = model.n
    drift = _flat_drift(M, dW, HW, theta)[0] / r
    conf = 0.5 * (n - 2) * M[0] @ (shape.rho * dphi / phi)
    return MetricAtPoint(g, g_inv, float(phi ** (n / 2) * abs(det)), g_inv, (drift + conf) / phi)


def laplace_beltrami_apply(model: MetricModel, shape: Shape, u: ExteriorField) -> ExteriorField:
    """Laplace-Beltrami operator of the rescaled pullback applied to u."""
    op = LaplaceBeltrami(model, shape, u.grid)
    return u.with_profiles(op.apply(u.profiles))


def unit_normal(model: MetricModel, shape: Shape, theta) -> np.ndarray:
    """Unit normal to the unit sphere for the pullback metric, pointing into the ball."""
    theta = np.asarray(theta, dtype=float)
    if abs(np.linalg.norm(theta) - 1.0) > 1e-12:
        raise ValueError("theta must be a unit vector")
    m = pullback_metric(model, shape, theta)
    v = m.g_inv @ theta
    return -v / np.sqrt(theta @ v)
