"""Structured quad meshes, Gauss quadrature and the built-in test cases.

Meshes are uniform, axis-aligned grids of identical bilinear quads. An
active-element mask supports non-rectangular domains (L-brackets); masked
elements carry no Gauss points and never enter an assembly loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

# 2x2 Gauss rule on [-1, 1]^2; points ordered counter-clockwise from (-,-).
# fem.unit_element_stiffness emits one matrix per point in this same order.
_G = 1.0 / math.sqrt(3.0)
GAUSS_2X2 = np.array([(-_G, -_G), (_G, -_G), (_G, _G), (-_G, _G)])

CANTILEVER = "cantilever"
LSHAPE = "lshape"


@dataclass(frozen=True)
class Grid:
    """Uniform quad mesh with an active-element mask.

    Element e = iy + ix*ny (iy fastest); node n = (ny+1)*ix + iy; node n
    carries dofs (2n, 2n+1) for (x, y) displacement. Connectivity is
    counter-clockwise starting at the lower-left corner.
    """

    width: float
    height: float
    nx: int
    ny: int
    origin: tuple[float, float]
    nodes: np.ndarray          # (n_nodes, 2) coordinates
    elements: np.ndarray       # (n_elems, 4) CCW node indices
    element_dofs: np.ndarray   # (n_elems, 8)
    active: np.ndarray         # (n_elems,) bool

    @property
    def dx(self) -> float:
        return self.width / self.nx

    @property
    def dy(self) -> float:
        return self.height / self.ny

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def ndof(self) -> int:
        return 2 * self.n_nodes

    @property
    def n_active(self) -> int:
        return int(np.count_nonzero(self.active))

    @property
    def active_area(self) -> float:
        return self.n_active * self.dx * self.dy

    def element_centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    def active_element_indices(self) -> np.ndarray:
        return np.flatnonzero(self.active)

    def element_grid_index(self, e: int) -> tuple[int, int]:
        """(ix, iy) of element e."""
        return divmod(e, self.ny)


@dataclass(frozen=True)
class GaussPointSet:
    """2x2 Gauss points of the active elements, weights include the Jacobian."""

    coords: np.ndarray         # (n, 2)
    weights: np.ndarray        # (n,)
    element_index: np.ndarray  # (n,) parent element id

    @property
    def n(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class BoundarySpec:
    """Fixed dofs and nodal point loads.

    loads is a tuple of (node index, direction 0|1, magnitude).
    """

    fixed_dofs: np.ndarray
    loads: tuple[tuple[int, int, float], ...]

    def force_vector(self, ndof: int) -> np.ndarray:
        f = np.zeros(ndof)
        for node, direction, magnitude in self.loads:
            f[2 * node + direction] += magnitude
        return f

    def validate(self, grid: Grid) -> None:
        if len(self.fixed_dofs) < 3:
            raise ValueError("at least 3 fixed dofs are required to pin rigid-body modes")
        if np.any(self.fixed_dofs < 0) or np.any(self.fixed_dofs >= grid.ndof):
            raise ValueError("fixed dof index out of range")
        for node, direction, _ in self.loads:
            if not (0 <= node < grid.n_nodes) or direction not in (0, 1):
                raise ValueError(f"invalid load target (node={node}, direction={direction})")


def _int_count(value: float, what: str) -> int:
    rounded = round(value)
    if abs(value - rounded) > 1e-9 * max(1.0, abs(value)):
        raise ValueError(f"{what} = {value} is not an integer element count")
    return int(rounded)


def build_grid(width: float, height: float, elems_per_unit: int,
               origin: tuple[float, float] = (0.0, 0.0)) -> Grid:
    """Build a uniform all-active grid with elems_per_unit elements per unit length."""
    if width <= 0 or height <= 0:
        raise ValueError(f"domain dimensions must be positive, got {width} x {height}")
    if elems_per_unit < 1:
        raise ValueError(f"elems_per_unit must be >= 1, got {elems_per_unit}")
    nx = _int_count(elems_per_unit * width, "elems_per_unit * width")
    ny = _int_count(elems_per_unit * height, "elems_per_unit * height")

    x0, y0 = origin
    xs = x0 + np.arange(nx + 1) * (width / nx)
    ys = y0 + np.arange(ny + 1) * (height / ny)
    # node n = (ny+1)*ix + iy
    nodes = np.column_stack([np.repeat(xs, ny + 1), np.tile(ys, nx + 1)])

    ix = np.repeat(np.arange(nx), ny)
    iy = np.tile(np.arange(ny), nx)
    n1 = (ny + 1) * ix + iy            # lower left
    n2 = (ny + 1) * (ix + 1) + iy      # lower right
    elements = np.column_stack([n1, n2, n2 + 1, n1 + 1]).astype(np.int64)

    dofs = np.empty((len(elements), 8), dtype=np.int64)
    dofs[:, 0::2] = 2 * elements
    dofs[:, 1::2] = 2 * elements + 1

    return Grid(width=float(width), height=float(height), nx=nx, ny=ny,
                origin=(float(x0), float(y0)), nodes=nodes, elements=elements,
                element_dofs=dofs, active=np.ones(len(elements), dtype=bool))


def apply_lshape_mask(grid: Grid, cut_xmin: float, cut_ymin: float) -> Grid:
    """Deactivate elements whose centroid falls in [cut_xmin, xmax] x [cut_ymin, ymax].

    The cut edges must coincide with element boundaries.
    """
    x0, y0 = grid.origin
    for value, lo, step, name in ((cut_xmin, x0, grid.dx, "cut_xmin"),
                                  (cut_ymin, y0, grid.dy, "cut_ymin")):
        ratio = (value - lo) / step
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(f"{name} = {value} does not align with element boundaries")

    centroids = grid.element_centroids()
    in_cut = (centroids[:, 0] >= cut_xmin) & (centroids[:, 1] >= cut_ymin)
    active = grid.active & ~in_cut
    if not active.any():
        raise ValueError("cut removes every element; no active domain left")
    return replace(grid, active=active)


def gauss_points(grid: Grid) -> GaussPointSet:
    """2x2 Gauss points for every active element; weight = element area / 4."""
    act = grid.active_element_indices()
    if len(act) == 0:
        raise ValueError("grid has no active elements")
    centroids = grid.element_centroids()[act]
    offsets = GAUSS_2X2 * np.array([grid.dx / 2.0, grid.dy / 2.0])
    coords = (centroids[:, None, :] + offsets[None, :, :]).reshape(-1, 2)
    weights = np.full(len(coords), grid.dx * grid.dy / 4.0)
    element_index = np.repeat(act, 4)
    return GaussPointSet(coords=coords, weights=weights, element_index=element_index)


def _nearest_node(grid: Grid, x: float, y: float) -> int:
    d2 = (grid.nodes[:, 0] - x) ** 2 + (grid.nodes[:, 1] - y) ** 2
    return int(np.argmin(d2))  # argmin breaks ties toward the lower index


def preset_case(name: str, elems_per_unit: int) -> tuple[Grid, BoundarySpec]:
    """Built-in test cases.

    cantilever: 1 x 2 domain with (x, y) in [0, 1] x [-1, 1], clamped along
    x = 0, unit downward load at the node nearest (1, 0).

    lshape: unit square minus the [0.4, 1] x [0.4, 1] block, clamped along
    the top edge of the vertical leg (y = 1, x <= 0.4), unit downward load
    at the node nearest (1, 0.4).
    """
    if name == CANTILEVER:
        grid = build_grid(1.0, 2.0, elems_per_unit, origin=(0.0, -1.0))
        left = np.flatnonzero(np.abs(grid.nodes[:, 0] - 0.0) < 1e-12)
        fixed = np.sort(np.concatenate([2 * left, 2 * left + 1]))
        load_node = _nearest_node(grid, 1.0, 0.0)
        bc = BoundarySpec(fixed_dofs=fixed, loads=((load_node, 1, -1.0),))
    elif name == LSHAPE:
        grid = build_grid(1.0, 1.0, elems_per_unit)
        grid = apply_lshape_mask(grid, 0.4, 0.4)
        top = np.flatnonzero((np.abs(grid.nodes[:, 1] - 1.0) < 1e-12)
                             & (grid.nodes[:, 0] <= 0.4 + 1e-12))
        fixed = np.sort(np.concatenate([2 * top, 2 * top + 1]))
        load_node = _nearest_node(grid, 1.0, 0.4)
        bc = BoundarySpec(fixed_dofs=fixed, loads=((load_node, 1, -1.0),))
    else:
        raise ValueError(f"unknown preset case {name!r}")
    bc.validate(grid)
    return grid, bc
