"""The shifted Dirichlet-to-Neumann operator w -> -d_r(psi_w) - (n-1) w of the unit ball's exterior.

It is diagonal on spherical harmonics.  The eigenvalue table used for inversion
is measured from the discrete exterior solver, so the Newton iteration and the
discretisation stay consistent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exterior_field import ExteriorField, RadialGrid, kelvin, normal_trace, solve_flat
from .sphere_basis import SphereBasis, SphereField, get_basis

__all__ = ["DtnOperator", "KernelObstruction", "harmonic_extension", "L_apply", "L_spectrum", "L_invert"]

log = logging.getLogger(__name__)


class KernelObstruction(ValueError):
    """Raised when a right-hand side has content in the kernel (degree 1)."""


def harmonic_extension(w: SphereField, grid: RadialGrid | None = None) -> ExteriorField:
    """Decaying flat harmonic function equal to w on the unit sphere."""
    return solve_flat(None, w, grid=grid or RadialGrid())


@dataclass
class DtnOperator:
    """Measured eigenvalue table of the shifted DtN map on a given discretisation."""

    basis: SphereBasis
    grid: RadialGrid = field(default_factory=RadialGrid)

    def __post_init__(self):
        n = self.basis.n
        self.degrees = np.unique(self.basis.degrees)
        measured = {}
        for k in self.degrees:
            slot = int(np.flatnonzero(self.basis.degrees == k)[0])
            e = np.zeros(self.basis.size)
            e[slot] = 1.0
            trace = normal_trace(harmonic_extension(SphereField(self.basis, e), self.grid))
            measured[int(k)] = trace.coeffs[slot] - (n - 1)
        self.measured = measured
        self.eigenvalues = np.array([measured[int(k)] for k in self.basis.degrees])

    @property
    def n(self) -> int:
        return self.basis.n

    def apply(self, w: SphereField) -> SphereField:
        ext = harmonic_extension(w, self.grid)
        return normal_trace(ext) - (self.n - 1) * w

    def apply_kelvin(self, w: SphereField) -> SphereField:
        """Same operator computed through the interior (Kelvin-transformed) problem.

        For psi harmonic outside, K(psi) is harmonic inside with K(psi) = w on the
        sphere, and x . grad K(psi) = -x . grad psi + (2-n) w there.
        """
        inner = kelvin(harmonic_extension(w, self.grid))
        radial_out = inner.profiles @ inner.grid.ddr[-1]
        return SphereField(self.basis, radial_out) - w

    def spectrum(self) -> dict:
        """Degree -> (measured, analytic, abs error)."""
        return {k: (lam, k - 1.0, abs(lam - (k - 1.0))) for k, lam in self.measured.items()}

    def max_error(self) -> float:
        return max(err for _, _, err in self.spectrum().values())

    def invert(self, rhs: SphereField, scale: float = 1.0, rtol: float = 1e-9) -> SphereField:
        """Solve scale * L(w) = rhs for w without degree-1 content."""
        mask = self.basis.degrees == 1
        norm = np.linalg.norm(rhs.coeffs)
        lin = np.linalg.norm(rhs.coeffs[mask])
        if lin > rtol * max(norm, 1e-300) and lin > 0:
            raise KernelObstruction(f"right-hand side has degree-1 content {lin:.3e} (relative {lin / norm:.3e})")
        out = np.zeros(self.basis.size)
        keep = ~mask
        out[keep] = rhs.coeffs[keep] / (scale * self.eigenvalues[keep])
        return SphereField(self.basis, out)


_CACHE: dict = {}


def _operator(basis: SphereBasis, grid: RadialGrid | None = None) -> DtnOperator:
    grid = grid or RadialGrid()
    key = (basis.n, basis.L, grid)
    if key not in _CACHE:
        _CACHE[key] = DtnOperator(basis, grid)
    return _CACHE[key]


def L_apply(w: SphereField, grid: RadialGrid | None = None) -> SphereField:
    return _operator(w.basis, grid).apply(w)


def L_spectrum(L: int, n: int = 3, grid: RadialGrid | None = None) -> dict:
    return _operator(get_basis(n, L), grid).spectrum()


def L_invert(rhs: SphereField, grid: RadialGrid | None = None) -> SphereField:
    return _operator(rhs.basis, grid).invert(rhs)
