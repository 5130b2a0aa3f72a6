"""Parameter grids, densities on grids, and quadrature-based functionals.

A density is stored by its values at the grid nodes (not by node masses), and
every integral over the parameter is the trapezoid rule on the stored nodes.
Pushforward grids under monotone maps are generally non-uniform, so the rule is
implemented for arbitrary increasing nodes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Union

import numpy as np

from .errors import (
    AllZeroInputError,
    GridMismatchError,
    InvalidGridError,
    LengthMismatchError,
    NonMonotoneMapError,
    SupportViolationError,
)

if TYPE_CHECKING:
    from .models import Diffeomorphism

NORMALIZATION_TOL = 1e-8


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    """Trapezoid weights on increasing nodes: half-intervals at the ends."""
    gaps = np.diff(nodes)
    w = np.zeros_like(nodes)
    w[:-1] += gaps / 2
    w[1:] += gaps / 2
    return w


@dataclass(frozen=True, eq=False)
class Grid:
    """Ordered quadrature nodes on a compact interval.

    Parameters
    ----------
    nodes : array_like
        Strictly increasing parameter values, at least two.
    weights : array_like
        Positive quadrature weights, one per node.
    """

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = _frozen(self.nodes)
        weights = _frozen(self.weights)
        if nodes.ndim != 1 or nodes.size < 2:
            raise InvalidGridError("a grid needs at least two nodes")
        if not np.all(np.isfinite(nodes)):
            raise InvalidGridError("grid nodes must be finite")
        if np.any(np.diff(nodes) <= 0):
            raise InvalidGridError("grid nodes must be strictly increasing")
        if weights.shape != nodes.shape:
            raise LengthMismatchError(
                f"{weights.size} weights for {nodes.size} nodes")
        if np.any(weights <= 0):
            raise InvalidGridError("quadrature weights must be positive")
        length = nodes[-1] - nodes[0]
        if abs(weights.sum() - length) > 1e-12 * max(length, abs(nodes).max()):
            raise InvalidGridError("weights must sum to the interval length")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.nodes.size

    @property
    def bounds(self) -> tuple[float, float]:
        return float(self.nodes[0]), float(self.nodes[-1])

    def __len__(self):
        return self.size

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return (np.array_equal(self.nodes, other.nodes)
                and np.array_equal(self.weights, other.weights))

    __hash__ = None


def make_uniform_grid(a: float, b: float, J: int) -> Grid:
    """Equidistant grid with trapezoid weights.

    >>> g = make_uniform_grid(0, 2, 3)
    >>> g.weights.tolist()
    [0.5, 1.0, 0.5]
    """
    if not (np.isfinite(a) and np.isfinite(b)) or a >= b:
        raise InvalidGridError(f"invalid bounds: need a < b, got ({a}, {b})")
    if int(J) != J or J < 2:
        raise InvalidGridError(f"invalid node count {J}: need J >= 2")
    J = int(J)
    nodes = np.linspace(a, b, J)
    h = (b - a) / (J - 1)
    weights = np.full(J, h)
    weights[0] = weights[-1] = h / 2
    return Grid(nodes, weights)


def make_nonuniform_grid(nodes) -> Grid:
    """Grid on arbitrary strictly increasing nodes with trapezoid weights."""
    nodes = np.asarray(nodes, dtype=float)
    if nodes.ndim != 1 or nodes.size < 2:
        raise InvalidGridError("a grid needs at least two nodes")
    if np.any(np.diff(nodes) <= 0):
        raise InvalidGridError("non-monotone nodes: must be strictly increasing")
    return Grid(nodes, trapezoid_weights(nodes))


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Nonnegative density values at the nodes of a grid.

    The values integrate to one under the grid quadrature; construction fails
    otherwise. Use :func:`normalize` to build a density from arbitrary
    nonnegative values.
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.shape != self.grid.nodes.shape:
            raise LengthMismatchError(
                f"{values.size} values for a grid of {self.grid.size} nodes")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("density values must be finite and nonnegative")
        total = float(values @ self.grid.weights)
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"density integrates to {total!r}, not 1")
        object.__setattr__(self, "values", values)

    @property
    def masses(self) -> np.ndarray:
        """Quadrature masses ``values * weights`` (sum to one)."""
        return self.values * self.grid.weights

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    def to_csv(self, path) -> None:
        write_density_csv(self, path)


DensityLike = Union[GridDensity, np.ndarray]


def integrate(d: DensityLike, g: Grid | None = None) -> float:
    """Trapezoid integral ``sum_j v_j * weight_j``.

    ``d`` may be a :class:`GridDensity` (its own grid is used unless ``g`` is
    given) or a plain array of node values together with ``g``.
    """
    if isinstance(d, GridDensity):
        if g is None:
            g = d.grid
        values = d.values
    else:
        if g is None:
            raise TypeError("a grid is required to integrate raw values")
        values = np.asarray(d, dtype=float)
    if values.shape != g.nodes.shape:
        raise LengthMismatchError(
            f"{values.size} values for a grid of {g.size} nodes")
    return float(values @ g.weights)


def normalize(values, g: Grid) -> GridDensity:
    """Scale nonnegative node values so they integrate to one on ``g``."""
    values = np.asarray(values, dtype=float)
    if values.shape != g.nodes.shape:
        raise LengthMismatchError(
            f"{values.size} values for a grid of {g.size} nodes")
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise ValueError("values must be finite and nonnegative")
    total = values @ g.weights
    if not total > 0:
        raise AllZeroInputError("cannot normalize: no positive values")
    return GridDensity(g, values / total)


def uniform_density(g: Grid) -> GridDensity:
    return normalize(np.ones(g.size), g)


def _check_same_grid(p: GridDensity, q: GridDensity) -> None:
    if p.grid is not q.grid and p.grid != q.grid:
        raise GridMismatchError("densities live on different grids")


def _xlogy_ratio(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    # p * log(p / q) with 0 log 0 = 0
    out = np.zeros_like(p)
    pos = p > 0
    out[pos] = p[pos] * (np.log(p[pos]) - np.log(q[pos]))
    return out


def kl_divergence(p: GridDensity, q: GridDensity) -> float:
    """Kullback-Leibler divergence ``int p log(p/q)`` by trapezoid quadrature."""
    _check_same_grid(p, q)
    if np.any((p.values > 0) & (q.values <= 0)):
        raise SupportViolationError("p has mass where q vanishes")
    return float(_xlogy_ratio(p.values, q.values) @ p.grid.weights)


def tv_distance(p: GridDensity, q: GridDensity) -> float:
    """Total variation distance ``0.5 * int |p - q|``."""
    _check_same_grid(p, q)
    return float(0.5 * np.abs(p.values - q.values) @ p.grid.weights)


def neg_entropy(p: GridDensity) -> float:
    """Negative differential entropy ``int p log p`` with ``0 log 0 = 0``."""
    v = p.values
    out = np.zeros_like(v)
    pos = v > 0
    out[pos] = v[pos] * np.log(v[pos])
    return float(out @ p.grid.weights)


def pushforward_density(p: GridDensity, phi: "Diffeomorphism", *,
                        return_mass: bool = False):
    """Transport a density through an increasing diffeomorphism.

    The new grid has nodes ``phi(theta_j)`` with trapezoid weights; values are
    ``w_j / phi'(theta_j)``, renormalized on the new grid.

    Parameters
    ----------
    p : GridDensity
    phi : Diffeomorphism
    return_mass : bool, default False
        Also return the integral before renormalization. It differs from one
        only by the trapezoid error of the change of variables.

    Returns
    -------
    GridDensity or (GridDensity, float)
    """
    theta = p.grid.nodes
    deriv = np.asarray(phi.derivative(theta), dtype=float)
    if np.any(~(deriv > 0)):
        raise NonMonotoneMapError("map derivative must be positive on the grid")
    new_nodes = np.asarray(phi.forward(theta), dtype=float)
    if np.any(np.diff(new_nodes) <= 0):
        raise NonMonotoneMapError("mapped nodes are not increasing")
    new_grid = make_nonuniform_grid(new_nodes)
    raw = p.values / deriv
    mass = float(raw @ new_grid.weights)
    out = GridDensity(new_grid, raw / mass)
    if return_mass:
        return out, mass
    return out


def write_density_csv(p: GridDensity, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theta", "density"])
        for t, v in zip(p.grid.nodes, p.values):
            w.writerow([f"{t:.17g}", f"{v:.17g}"])


def read_density_csv(path) -> GridDensity:
    """Read a ``theta,density`` CSV; trapezoid weights are rebuilt from nodes."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    nodes = np.array([float(r["theta"]) for r in rows])
    values = np.array([float(r["density"]) for r in rows])
    g = make_nonuniform_grid(nodes)
    return normalize(values, g)
