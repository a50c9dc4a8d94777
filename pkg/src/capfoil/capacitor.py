"""Equilibrium potential of a perturbed sphere and the reduced residual map.

Given a metric model and a shape, the potential u_hat = v + psi solves the
pulled-back Laplace equation outside the unit ball with u_hat = 1 on the sphere.
The explicit part v = |x|^{2-n} (1 + w)^{2-n} carries the boundary value and psi
is found with the flat exterior solver as preconditioner.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .exterior_field import (
    ExteriorField,
    RadialGrid,
    flat_laplacian,
    solve_flat,
    tail_exponents,
)
from .metric import LaplaceBeltrami, MetricModel, Shape
from .sphere_basis import SphereBasis, SphereField, project

__all__ = [
    "ConvergenceError",
    "PotentialBundle",
    "AuxKField",
    "approx_v",
    "PotentialSolver",
    "solve_correction",
    "neumann_trace_g",
    "solve_K",
    "mass_coefficient",
    "ReducedMap",
    "G_tilde",
]

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """The correction iteration did not converge."""

    def __init__(self, message, contraction=None, iterations=None):
        super().__init__(message)
        self.contraction = contraction
        self.iterations = iterations


def mass_coefficient(n: int) -> float:
    """Coefficient of sigma rho^{1-n} r^{1-2n} in the Laplacian of |x|^{2-n}."""
    return (n - 1) * (n - 2) ** 2 / 2.0


@dataclass
class PotentialBundle:
    v: ExteriorField
    psi: ExteriorField
    u: ExteriorField
    residual: float
    iterations: int
    contraction: float | None = None
    history: list = field(default_factory=list)


@dataclass(frozen=True)
class AuxKField:
    field: ExteriorField
    dK1: float
    residual: float


def _v_angular(shape: Shape) -> SphereField:
    basis = shape.basis
    W = shape.w.nodal()
    return project((1.0 + W) ** (2 - basis.n), basis)


def approx_v(shape: Shape, grid: RadialGrid | None = None) -> ExteriorField:
    """|x|^{2-n} (1 + w)^{2-n}, the angular factor projected to the basis."""
    grid = grid or RadialGrid()
    V = _v_angular(shape)
    n = shape.n
    return ExteriorField(shape.basis, grid, np.outer(V.coeffs, grid.r ** (2.0 - n)), nu=2.0 - n)


class PotentialSolver:
    """Solver for the potential of one (model, shape) pair.

    Parameters
    ----------
    model, shape
        Metric and perturbed sphere.
    grid : RadialGrid
        Radial discretisation.
    """

    def __init__(self, model: MetricModel, shape: Shape, grid: RadialGrid | None = None, exponents=None):
        self.model = model
        self.shape = shape
        self.grid = grid or RadialGrid()
        self.basis = shape.basis
        self.op = LaplaceBeltrami(model, shape, self.grid)
        self.V = _v_angular(shape)
        n = shape.n
        self.v = ExteriorField(self.basis, self.grid, np.outer(self.V.coeffs, self.grid.r ** (2.0 - n)), 2.0 - n)
        self.lap_v = self.op.apply(self.v.profiles)
        self.dirichlet = SphereField.constant(self.basis, 1.0) - self.V
        # far-field decay rates of the source are frozen from -Delta_g v, so the
        # outer closure is linear in the iterate and smooth in the shape
        if exponents is None:
            exponents = tail_exponents(-self.lap_v, self.grid)
        self.exponents = np.where(np.isfinite(exponents), exponents, -float(n))

    def _flat_lap(self, P):
        return flat_laplacian(self.v.with_profiles(P)).profiles

    def source(self, psi: np.ndarray) -> np.ndarray:
        """Right-hand side of the preconditioned iteration at psi."""
        return self._flat_lap(psi) - self.op.apply(psi) - self.lap_v

    def residual(self, psi: np.ndarray) -> float:
        """Scale-free harmonicity residual max r^2 |Delta_g u| over interior samples."""
        res = (self.op.apply(psi) + self.lap_v) * self.grid.r**2
        return float(np.max(np.abs(res[:, 1:-1])))

    def fixed_point(self, psi0=None, tol=1e-10, max_iter=50) -> PotentialBundle:
        nu = (2.0 - self.shape.n) / 2.0
        psi = np.zeros((self.basis.size, self.grid.points)) if psi0 is None else np.array(psi0, dtype=float)
        history = []
        contraction = None
        for it in range(1, max_iter + 1):
            new = solve_flat(self.source(psi), self.dirichlet, nu=nu, grid=self.grid,
                             exponents=self.exponents).profiles
            step = float(np.max(np.abs(new - psi)))
            history.append(step)
            psi = new
            if len(history) >= 2 and history[-2] > 0:
                contraction = history[-1] / history[-2]
            if step < tol:
                break
            # stalled at round-off
            if len(history) >= 3 and step >= 0.5 * history[-2] and step < 1e3 * np.finfo(float).eps:
                break
        else:
            raise ConvergenceError(
                f"correction iteration did not converge in {max_iter} steps (last step {step:.3e}, "
                f"contraction {contraction})",
                contraction,
                max_iter,
            )
        return self._bundle(psi, it, contraction, history)

    def krylov(self, tol=1e-11, max_iter=200, psi0=None) -> PotentialBundle:
        """GMRES on the preconditioned linear system with a frozen far-field closure."""
        nu = (2.0 - self.shape.n) / 2.0
        shape2 = (self.basis.size, self.grid.points)
        zero_bc = SphereField.zeros(self.basis)
        base_src = -self.lap_v
        expo = self.exponents
        c = solve_flat(base_src, self.dirichlet, nu=nu, grid=self.grid, exponents=expo).profiles

        def matvec(x):
            P = x.reshape(shape2)
            KP = solve_flat(self._flat_lap(P) - self.op.apply(P), zero_bc, nu=nu, grid=self.grid, exponents=expo)
            return (P - KP.profiles).ravel()

        A = LinearOperator((c.size, c.size), matvec=matvec, dtype=float)
        count = [0]

        def cb(_):
            count[0] += 1

        x0 = None if psi0 is None else np.asarray(psi0).ravel()
        sol, info = gmres(A, c.ravel(), x0=x0, rtol=tol, atol=0.0, restart=60, maxiter=max_iter, callback=cb,
                          callback_type="pr_norm")
        if info != 0:
            raise ConvergenceError(f"GMRES did not converge (info={info})", iterations=count[0])
        psi = sol.reshape(shape2)
        return self._bundle(psi, count[0], None, [])

    def _bundle(self, psi, iterations, contraction, history) -> PotentialBundle:
        P = self.v.with_profiles(psi, nu=(2.0 - self.shape.n) / 2.0)
        return PotentialBundle(self.v, P, self.v + P, self.residual(psi), iterations, contraction, history)

    def neumann_nodal(self, bundle: PotentialBundle) -> np.ndarray:
        """Inward normal derivative of u_hat for the pulled-back metric, at the nodes."""
        n = self.shape.n
        dpsi = bundle.psi.profiles @ self.grid.ddr[0]
        dr = ((2.0 - n) * self.V.coeffs + dpsi) @ self.basis.Y
        return -dr * self.op.normal_factor()

    def neumann(self, bundle: PotentialBundle) -> SphereField:
        return project(self.neumann_nodal(bundle), self.basis)


def solve_correction(
    model: MetricModel,
    shape: Shape,
    grid: RadialGrid | None = None,
    tol: float = 1e-10,
    max_iter: int = 50,
    method: str = "fixed_point",
    psi0=None,
) -> PotentialBundle:
    """Potential bundle (v, psi, u_hat) for the given model and shape."""
    solver = PotentialSolver(model, shape, grid)
    if method == "fixed_point":
        return solver.fixed_point(psi0, tol, max_iter)
    if method == "gmres":
        return solver.krylov(tol=tol, max_iter=max_iter, psi0=psi0)
    raise ValueError(f"unknown method {method!r}")


def neumann_trace_g(model: MetricModel, shape: Shape, bundle: PotentialBundle) -> tuple[SphereField, SphereField]:
    """Neumann trace in the rescaled metric and in physical units (divided by rho)."""
    N = PotentialSolver(model, shape, bundle.u.grid).neumann(bundle)
    return N, N * (1.0 / shape.rho)


@lru_cache(maxsize=16)
def solve_K(n: int, grid: RadialGrid | None = None) -> AuxKField:
    """Decaying radial solution of Delta K = r^{1-2n} outside the ball with K = 0 on the sphere."""
    from .sphere_basis import get_basis

    grid = grid or RadialGrid()
    basis = get_basis(n, 1)
    src = np.zeros((basis.size, grid.points))
    y0 = math.sqrt(basis.area)  # the degree-0 basis function is 1/y0
    src[0] = grid.r ** (1.0 - 2 * n) * y0
    K = solve_flat(src, SphereField.zeros(basis), grid=grid)
    res = flat_laplacian(K).profiles[0, 1:-1] - src[0, 1:-1]
    dK1 = float(K.profiles[0] @ grid.ddr[0]) / y0
    return AuxKField(K, dK1, float(np.max(np.abs(res / y0))))


class ReducedMap:
    """The reduced residual in the small-parameter convention.

    With rt = 1/rho the unknowns are tau and a rescaled deformation wG, the
    geometric deformation being w = rt^{n-1} wG.  The map is

        G~ = rt^{1-n} (N - (n-2)(1 - sigma rt^{n-1}/2)) - c sigma K'(1),

    with N the Neumann trace in the rescaled metric and c = (n-1)(n-2)^2/2.
    """

    def __init__(self, model: MetricModel, basis: SphereBasis, grid: RadialGrid | None = None,
                 tol: float = 1e-13, max_iter: int = 50):
        self.model = model
        self.basis = basis
        self.grid = grid or RadialGrid()
        self.tol = tol
        self.max_iter = max_iter
        self.K = solve_K(model.n, self.grid)
        self.last_bundle: PotentialBundle | None = None
        self.last_neumann: np.ndarray | None = None
        self._exponents: dict = {}

    def exponents(self, rho: float) -> np.ndarray:
        """Far-field source exponents, frozen per radius from the round sphere.

        Freezing them makes the map smooth in (tau, wG); refitting per shape lets
        round-off in the far-field source leak into the residual.
        """
        if rho not in self._exponents:
            trivial = Shape.trivial(self.basis, rho)
            self._exponents[rho] = PotentialSolver(self.model, trivial, self.grid).exponents
        return self._exponents[rho]

    def shape(self, rho: float, tau, wG: SphereField) -> Shape:
        rt = 1.0 / rho
        return Shape(rho, np.asarray(tau, dtype=float), wG * rt ** (self.model.n - 1))

    def __call__(self, rho: float, tau, wG: SphereField, psi0=None) -> SphereField:
        n = self.model.n
        rt = 1.0 / rho
        shape = self.shape(rho, tau, wG)
        solver = PotentialSolver(self.model, shape, self.grid, self.exponents(rho))
        bundle = solver.fixed_point(psi0, self.tol, self.max_iter)
        N = solver.neumann_nodal(bundle)
        self.last_bundle = bundle
        self.last_neumann = N
        self.last_shape = shape
        sigma = self.model.sigma
        target = (n - 2) * (1.0 - 0.5 * sigma * rt ** (n - 1))
        nodal = (N - target) * rt ** (1 - n) - mass_coefficient(n) * sigma * self.K.dK1
        return project(nodal, self.basis)


def G_tilde(model: MetricModel, rho: float, tau, wG: SphereField, grid: RadialGrid | None = None) -> SphereField:
    """Reduced residual at physical radius rho with rescaled deformation wG."""
    return ReducedMap(model, wG.basis, grid)(rho, tau, wG)
