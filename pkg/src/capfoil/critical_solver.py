"""Block quasi-Newton solve of the reduced residual and sweeps over the radius.

The degree-1 part of the residual is cleared by a translation update using a
finite-difference Jacobian; the rest is cleared by a deformation update that
inverts the diagonal DtN operator.  Both blocks are updated from the same
residual evaluation.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .capacitor import ConvergenceError, ReducedMap, mass_coefficient
from .dtn import DtnOperator
from .exterior_field import RadialGrid
from .metric import MetricModel, Shape
from .sphere_basis import SphereBasis, SphereField, get_basis, pi_V1

__all__ = ["SolverOptions", "SolveReport", "CriticalSolver", "solve_at", "sweep", "default_L", "tau_jacobian_reference"]

log = logging.getLogger(__name__)


def default_L(n: int) -> int:
    return 8 if n == 3 else 4


def tau_jacobian_reference(n: int, sigma: float) -> float:
    """Translation-block constant as published, kept only for comparison."""
    return (n - 1) * (n - 2) / 2.0 * (1.0 + (n - 2) * (n - 4) / 2.0) * sigma


@dataclass
class SolverOptions:
    L: int | None = None
    points: int = 400
    r_max: float = 50.0
    order: int = 8
    tol: float | None = None  # defaults to 1e-9 (n-2)
    max_iter: int = 30
    damping: float = 0.5
    fd_step: float = 1e-3
    inner_tol: float = 1e-13
    inner_max_iter: int = 50

    def grid(self) -> RadialGrid:
        return RadialGrid(self.points, self.r_max, self.order)


@dataclass
class SolveReport:
    rho: float
    shape: Shape
    wG: SphereField
    neumann_constant: float
    constancy_residual: float
    iterations: int
    evaluations: int
    jacobian_tau: np.ndarray
    residual_norm: float
    converged: bool
    certificates: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)
    message: str = ""
    seconds: float = 0.0

    @property
    def tau(self) -> np.ndarray:
        return self.shape.tau

    @property
    def tau_norm(self) -> float:
        return float(np.linalg.norm(self.shape.tau))

    @property
    def w_norm(self) -> float:
        """L2 norm of the geometric deformation."""
        return self.shape.w.l2_norm()

    @property
    def wG_norm(self) -> float:
        """L2 norm of the rescaled deformation wG = rho^{n-1} w."""
        return self.wG.l2_norm()

    def row(self) -> dict:
        d = {"rho": self.rho}
        for i, t in enumerate(self.shape.tau):
            d[f"tau_{i}"] = float(t)
        d.update(
            w_norm=self.w_norm,
            wG_norm=self.wG_norm,
            neumann_constant=self.neumann_constant,
            residual=self.residual_norm,
            constancy=self.constancy_residual,
            iters=self.iterations,
            converged=self.converged,
        )
        return d


class CriticalSolver:
    """Reusable solver for one metric model and discretisation."""

    def __init__(self, model: MetricModel, opts: SolverOptions | None = None):
        self.model = model
        self.opts = opts or SolverOptions()
        n = model.n
        self.L = self.opts.L or default_L(n)
        self.basis: SphereBasis = get_basis(n, self.L)
        self.grid = self.opts.grid()
        self.map = ReducedMap(model, self.basis, self.grid, self.opts.inner_tol, self.opts.inner_max_iter)
        self.dtn = DtnOperator(self.basis, self.grid)
        self.tol = self.opts.tol if self.opts.tol is not None else 1e-9 * (n - 2)
        self.evaluations = 0

    def _G(self, rho, tau, wG, psi0=None):
        self.evaluations += 1
        G = self.map(rho, tau, wG, psi0)
        return G, self.map.last_bundle

    def _sup(self, G: SphereField) -> float:
        return float(np.max(np.abs(G.coeffs @ self.basis.Y)))

    def tau_jacobian(self, rho, tau, wG, psi0=None) -> np.ndarray:
        """Central-difference derivative of all residual coefficients in tau, shape (modes, n)."""
        n = self.model.n
        h = self.opts.fd_step
        J = np.zeros((self.basis.size, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            gp, _ = self._G(rho, tau + e, wG, psi0)
            gm, _ = self._G(rho, tau - e, wG, psi0)
            J[:, j] = (gp.coeffs - gm.coeffs) / (2 * h)
        return J

    def degree1_block(self, J: np.ndarray) -> np.ndarray:
        """n x n block of a full tau-Jacobian in the coordinates x_i -> e_i."""
        b = self.basis
        out = np.zeros((self.model.n, J.shape[1]))
        for slot, axis in zip(b.degree1, b.degree1_axis):
            out[axis] = J[slot] * b.c1
        return out

    def _tau_step(self, J, g1):
        if not np.any(g1):
            return np.zeros_like(g1)
        if np.linalg.norm(J) < 1e-12:
            return np.zeros_like(g1)
        try:
            if np.linalg.cond(J) < 1e12:
                return -np.linalg.solve(J, g1)
        except np.linalg.LinAlgError:
            pass
        return -np.linalg.lstsq(J, g1, rcond=1e-10)[0]

    def _w_step(self, G: SphereField, J: np.ndarray, dtau: np.ndarray) -> SphereField:
        # account for the effect of the translation step on the other modes
        pred = SphereField(self.basis, G.coeffs + J @ dtau)
        rest = pred - pred.degree_part([1])
        return -self.dtn.invert(rest, scale=self.model.n - 2)

    def solve(self, rho: float, tau0=None, wG0: SphereField | None = None, jacobian=None, psi0=None) -> SolveReport:
        start = time.perf_counter()
        n = self.model.n
        self.evaluations = 0
        tau = np.zeros(n) if tau0 is None else np.array(tau0, dtype=float)
        wG = SphereField.zeros(self.basis) if wG0 is None else wG0
        wG = wG - wG.degree_part([1])
        trace = []
        message = ""
        converged = False
        G, bundle = self._G(rho, tau, wG, psi0)
        res = self._sup(G)
        trace.append(res)
        it = 0
        J = jacobian
        fresh = False
        while True:
            if res < self.tol:
                converged = True
                break
            if it >= self.opts.max_iter:
                message = f"no convergence after {it} iterations (residual {res:.3e})"
                break
            if J is None:
                J = self.tau_jacobian(rho, tau, wG, bundle.psi.profiles)
                fresh = True
            _, g1 = pi_V1(G)
            dtau = self._tau_step(self.degree1_block(J), g1)
            dw = self._w_step(G, J, dtau)
            step = 1.0
            while True:
                t_new, w_new = tau + step * dtau, wG + step * dw
                try:
                    G_new, b_new = self._G(rho, t_new, w_new, bundle.psi.profiles)
                    r_new = self._sup(G_new)
                except (ConvergenceError, ValueError) as exc:
                    G_new, r_new = None, np.inf
                    log.debug("trial step failed: %s", exc)
                if r_new <= res or step < 1e-3:
                    break
                step *= self.opts.damping
            if G_new is None:
                message = "correction solve failed on every damped step"
                break
            # a reused Jacobian that no longer gives fast convergence is refreshed
            if not fresh and r_new > 0.05 * res:
                J = None
            tau, wG, G, bundle, res = t_new, w_new, G_new, b_new, r_new
            it += 1
            trace.append(res)
        shape = self.map.shape(rho, tau, wG)
        N = self.map.last_neumann if self.map.last_bundle is bundle else None
        if N is None:
            self._G(rho, tau, wG, bundle.psi.profiles)
            N, bundle = self.map.last_neumann, self.map.last_bundle
        J1 = np.zeros((n, n)) if J is None else self.degree1_block(J)
        report = SolveReport(
            rho=float(rho),
            shape=shape,
            wG=wG,
            neumann_constant=self._mean(N) / rho,
            constancy_residual=float(np.max(np.abs(N - self._mean(N))) / abs(self._mean(N))),
            iterations=it,
            evaluations=self.evaluations,
            jacobian_tau=J1,
            residual_norm=res,
            converged=converged,
            certificates=self._certificates(bundle, N),
            trace=trace,
            message=message,
            seconds=time.perf_counter() - start,
        )
        report._psi = bundle.psi.profiles  # warm start data
        report._jacobian = J
        return report

    def _mean(self, nodal) -> float:
        return float(self.basis.weights @ nodal / self.basis.area)

    def _certificates(self, bundle, N) -> dict:
        n = self.model.n
        u = bundle.u.profiles
        dirichlet = float(np.max(np.abs(u[:, 0] @ self.basis.Y - 1.0)))
        far = np.abs(u[:, -1] @ self.basis.Y) * self.grid.r_max ** (n - 2)
        return {
            "harmonic_residual": bundle.residual,
            "dirichlet_residual": dirichlet,
            "decay_envelope": float(np.max(far)),
            "constancy": float(np.max(np.abs(N - self._mean(N))) / abs(self._mean(N))),
            "inner_iterations": bundle.iterations,
        }


def solve_at(model: MetricModel, rho: float, opts: SolverOptions | None = None, **kw) -> SolveReport:
    """Critical shape at physical radius rho."""
    return CriticalSolver(model, opts).solve(rho, **kw)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("CAPFOIL_THREADS", "0")) or (os.cpu_count() or 1))
    except ValueError:
        return 1


def sweep(model: MetricModel, rhos, opts: SolverOptions | None = None, warm_start: bool = True,
          solver: CriticalSolver | None = None) -> list[SolveReport]:
    """Solve on an increasing radius grid.

    With warm starts the previous solutions seed the next one (linear
    extrapolation in 1/rho once two are available) and the translation
    Jacobian is reused.  Without warm starts the radii are independent and are
    solved on a thread pool capped by CAPFOIL_THREADS.  Failures are recorded
    in the reports and do not stop the sweep.
    """
    rhos = [float(r) for r in rhos]
    if any(b <= a for a, b in zip(rhos, rhos[1:])):
        raise ValueError("radius grid must be strictly increasing")
    solver = solver or CriticalSolver(model, opts)

    def failed(rho, exc):
        shape = Shape.trivial(solver.basis, rho)
        return SolveReport(rho, shape, SphereField.zeros(solver.basis), float("nan"), float("nan"), 0, 0,
                           np.zeros((model.n, model.n)), float("nan"), False, message=str(exc))

    if not warm_start:
        def one(rho):
            local = CriticalSolver(model, solver.opts)
            try:
                return local.solve(rho)
            except (ConvergenceError, ValueError) as exc:
                return failed(rho, exc)

        with ThreadPoolExecutor(max_workers=min(_threads(), len(rhos))) as pool:
            return list(pool.map(one, rhos))

    reports: list[SolveReport] = []
    J = None
    for rho in rhos:
        ok = [r for r in reports if r.converged]
        tau0, wG0, psi0 = None, None, None
        if ok:
            tau0, wG0, psi0 = ok[-1].tau, ok[-1].wG, ok[-1]._psi
        if len(ok) >= 2:
            a, b = ok[-2], ok[-1]
            s = (1.0 / rho - 1.0 / b.rho) / (1.0 / b.rho - 1.0 / a.rho)
            tau0 = b.tau + s * (b.tau - a.tau)
            wG0 = b.wG + s * (b.wG - a.wG)
        try:
            rep = solver.solve(rho, tau0, wG0, jacobian=J, psi0=psi0)
        except (ConvergenceError, ValueError) as exc:
            rep = failed(rho, exc)
        if rep.converged and np.any(rep.jacobian_tau):
            J = rep._jacobian
        reports.append(rep)
    return reports
