"""Leaves of the solved family as radial graphs, and a check that they foliate the end.

A solved shape at radius rho has boundary points rho (tau + (1 + w(theta)) theta).
Its leaf graph is the physical radius of that surface in each direction y,
found by inverting the direction map theta -> p / |p| with p = tau + (1 + w) theta.
Radii are Euclidean in the flat coordinates.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .metric import Shape
from .sphere_basis import SphereBasis, SphereField, project

__all__ = ["FoldError", "FoliationTable", "leaf_graph", "leaf_nodal", "fold_margin", "build_table",
           "monotonicity_check"]


class FoldError(ValueError):
    """The direction map of a leaf folds, so the leaf is not a radial graph."""


def _surface(shape: Shape, theta: np.ndarray):
    """Points p(theta), radial function 1 + w and its sphere gradient."""
    b = shape.basis
    Y, dY, _ = b.tables(theta)
    R = 1.0 + shape.w.coeffs @ Y
    dR = np.einsum("b,bpi->pi", shape.w.coeffs, dY)
    return shape.tau + R[:, None] * theta, R, dR


def fold_margin(shape: Shape, theta: np.ndarray | None = None) -> float:
    """Smallest value of <p, Theta - grad R / R> over the sample directions.

    Positive exactly when the surface is star-shaped about the origin at those
    points, i.e. the direction map has positive Jacobian there.
    """
    theta = shape.basis.nodes if theta is None else theta
    p, R, dR = _surface(shape, theta)
    normal = theta - dR / R[:, None]
    return float(np.min(np.einsum("pi,pi->p", p, normal)))


def leaf_nodal(shape: Shape, y: np.ndarray | None = None, tol: float = 1e-10, max_iter: int = 200,
               damping: float = 1.0) -> np.ndarray:
    """Physical radius of the leaf in the unit directions y (default: the quadrature nodes)."""
    y = shape.basis.nodes if y is None else np.atleast_2d(np.asarray(y, dtype=float))
    margin = fold_margin(shape)
    if margin <= 0:
        raise FoldError(f"direction map folds (star-shape margin {margin:.3e})")
    theta = y - shape.tau
    theta /= np.linalg.norm(theta, axis=1, keepdims=True)
    for _ in range(max_iter):
        p, _, _ = _surface(shape, theta)
        size = np.linalg.norm(p, axis=1)
        err = float(np.max(np.linalg.norm(p / size[:, None] - y, axis=1)))
        if err < tol:
            return shape.rho * size
        # (1 + w) theta = |p| y - tau at the solution
        new = size[:, None] * y - shape.tau
        new /= np.linalg.norm(new, axis=1, keepdims=True)
        theta = (1.0 - damping) * theta + damping * new
        theta /= np.linalg.norm(theta, axis=1, keepdims=True)
    raise FoldError(f"direction map inversion did not converge (residual {err:.3e})")


def leaf_graph(shape: Shape, basis: SphereBasis | None = None, tol: float = 1e-10) -> SphereField:
    """The leaf as a radial graph over directions, projected onto the basis."""
    basis = basis or shape.basis
    return project(leaf_nodal(shape, basis.nodes, tol), basis)


@dataclass
class FoliationTable:
    """Leaf graphs on an increasing radius grid.

    ``nodal[i]`` holds the leaf radius at the quadrature nodes and ``margins[i]``
    the minimum over directions of leaf i+1 minus leaf i.
    """

    rhos: np.ndarray
    leaves: list
    nodal: np.ndarray
    margins: np.ndarray = field(init=False)

    def __post_init__(self):
        self.rhos = np.asarray(self.rhos, dtype=float)
        self.nodal = np.asarray(self.nodal, dtype=float)
        self.margins = np.min(np.diff(self.nodal, axis=0), axis=1)

    def slopes(self) -> np.ndarray:
        """Mean over directions of the difference quotient of leaf radius in rho."""
        return np.mean(np.diff(self.nodal, axis=0), axis=1) / np.diff(self.rhos)

    def rows(self) -> list[dict]:
        """One row per grid interval: left radius, min margin, slope estimate."""
        return [{"rho": float(r), "min_margin": float(m), "slope_estimate": float(s)}
                for r, m, s in zip(self.rhos[:-1], self.margins, self.slopes())]

    def leaves_json(self) -> str:
        return json.dumps([{"rho": float(r), "graph": json.loads(f.to_json())}
                           for r, f in zip(self.rhos, self.leaves)])


def build_table(shapes, threads: int = 1) -> FoliationTable:
    """Foliation table from solved shapes ordered by radius."""
    shapes = list(shapes)

    def one(s):
        return leaf_nodal(s)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            nodal = list(pool.map(one, shapes))
    else:
        nodal = [one(s) for s in shapes]
    leaves = [project(v, s.basis) for v, s in zip(nodal, shapes)]
    return FoliationTable(np.array([s.rho for s in shapes]), leaves, np.array(nodal))


def monotonicity_check(table: FoliationTable) -> dict:
    """Margins and the radial slope of the leaves.

    The slope of the leaf radius in rho should be 1 up to a correction that
    shrinks as rho grows; the deviation is reported per interval along with a
    power-law fit of its decay.
    """
    if len(table.rhos) < 3:
        raise ValueError("need at least three leaves")
    slopes = table.slopes()
    dev = np.abs(slopes - 1.0)
    mid = 0.5 * (table.rhos[1:] + table.rhos[:-1])
    good = dev > 0
    order = float("nan")
    if np.count_nonzero(good) >= 2:
        order = float(-np.polyfit(np.log(mid[good]), np.log(dev[good]), 1)[0])
    min_margin = float(np.min(table.margins))
    return {
        "min_margin": min_margin,
        "margins": table.margins.tolist(),
        "slopes": slopes.tolist(),
        "slope_deviation": dev.tolist(),
        "deviation_order": order,
        "deviation_decreasing": bool(np.all(np.diff(dev) <= 1e-12)),
        "foliates": min_margin > 0,
    }
