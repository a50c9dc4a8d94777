"""Critical capacitors in asymptotically flat ends: spectral solvers and verification tools."""

from .capacitor import ReducedMap, solve_correction, solve_K
from .capacity import StarDomain, capacity, first_variation_E0, first_variation_E1
from .critical_solver import CriticalSolver, SolverOptions, SolveReport, solve_at, sweep
from .dtn import DtnOperator
from .exterior_field import ExteriorField, RadialGrid, kelvin, solve_flat
from .foliation import FoliationTable, build_table, leaf_graph, monotonicity_check
from .metric import MetricModel, Shape
from .sphere_basis import SphereBasis, SphereField, get_basis

__version__ = "0.1.0"

__all__ = [
    "CriticalSolver",
    "DtnOperator",
    "ExteriorField",
    "FoliationTable",
    "MetricModel",
    "RadialGrid",
    "ReducedMap",
    "Shape",
    "SolveReport",
    "SolverOptions",
    "SphereBasis",
    "SphereField",
    "StarDomain",
    "build_table",
    "capacity",
    "first_variation_E0",
    "first_variation_E1",
    "get_basis",
    "kelvin",
    "leaf_graph",
    "monotonicity_check",
    "solve_K",
    "solve_at",
    "solve_correction",
    "solve_flat",
    "sweep",
]
