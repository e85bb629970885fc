"""Mass-node components and the kernel density field they induce.

A mass node is a movable, rotatable rectangle described by five variables
(center x, y, orientation theta, full dimensions lx, ly). Each node spreads
its mass m = beta*lx*ly over a compact support through a tensor-product
cubic spline kernel; the density at a point is the sum of the nodal
contributions. All derivatives of the field with respect to the node
variables are analytic.
"""

from __future__ import annotations

import enum
import itertools
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Grid

VARIABLES = ("x", "y", "theta", "lx", "ly")


class NodeKind(enum.Enum):
    MASS_NODE = "mass_node"
    UNDEFORMABLE_MEMBER = "undeformable_member"
    DEFORMABLE_MEMBER = "deformable_member"


OPTIMIZABLE = {
    NodeKind.MASS_NODE: ("x", "y"),
    NodeKind.UNDEFORMABLE_MEMBER: ("x", "y", "theta"),
    NodeKind.DEFORMABLE_MEMBER: VARIABLES,
}

_REVISIONS = itertools.count(1)


def normalize_angle(theta: float) -> float:
    """Fold an angle into (-pi/2, pi/2]; a rectangle is invariant under theta + pi."""
    t = math.remainder(theta, math.pi)
    if t <= -math.pi / 2:
        t += math.pi
    return t


@dataclass
class MassNode:
    """One rectangular component: center, orientation and full dimensions.

    kind controls which variables an optimizer may touch: plain mass nodes
    move only (x, y); undeformable members also rotate; deformable members
    expose all five variables.
    """

    x: float
    y: float
    theta: float
    lx: float
    ly: float
    kind: NodeKind = NodeKind.DEFORMABLE_MEMBER

    def __post_init__(self):
        if isinstance(self.kind, str):
            self.kind = NodeKind(self.kind)
        if self.lx <= 0 or self.ly <= 0:
            raise ValueError(f"node dimensions must be positive, got lx={self.lx}, ly={self.ly}")
        self.theta = normalize_angle(self.theta)

    @property
    def optimizable(self) -> tuple[str, ...]:
        return OPTIMIZABLE[self.kind]

    def mass(self, beta: float) -> float:
        return beta * self.lx * self.ly


def default_beta(d_rho: float) -> float:
    """Mass density constant making an isolated node's center density exactly one."""
    return 9.0 * d_rho * d_rho / 64.0


@dataclass
class MaterialLayout:
    """An ordered set of mass nodes plus the shared material constants.

    beta scales nodal mass (m = beta*lx*ly); d_rho stretches each kernel
    support to d_rho/2 times the node dimensions. revision is bumped on any
    node replacement so downstream caches can detect staleness.
    """

    nodes: list[MassNode]
    beta: float
    d_rho: float = 1.5
    revision: int = field(default_factory=lambda: next(_REVISIONS))

    def __post_init__(self):
        if len(self.nodes) < 1:
            raise ValueError("a layout needs at least one node")
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.d_rho < 1:
            raise ValueError(f"d_rho must be >= 1, got {self.d_rho}")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def total_mass(self) -> float:
        return self.beta * sum(n.lx * n.ly for n in self.nodes)

    def with_nodes(self, nodes: list[MassNode]) -> "MaterialLayout":
        return replace(self, nodes=list(nodes), revision=next(_REVISIONS))


# ---------------------------------------------------------------------------
# cubic spline kernel

def kernel_1d(r, d: float):
    """Cubic spline weight with smoothing length d.

    Supported on r in [0, 1] (r is the normalized distance |x|/d); the 2/d
    prefactor makes the 1D kernel integrate to one over [-d, d].
    """
    r_in = np.asarray(r, dtype=float)
    if d <= 0:
        raise ValueError(f"smoothing length must be positive, got {d}")
    if np.any(r_in < 0):
        raise ValueError("normalized distance r must be non-negative")
    c = 2.0 / d
    out = np.select(
        [r_in <= 0.5, r_in <= 1.0],
        [c * (2.0 / 3.0 - 4.0 * r_in**2 + 4.0 * r_in**3),
         c * (4.0 / 3.0 - 4.0 * r_in + 4.0 * r_in**2 - 4.0 / 3.0 * r_in**3)],
        default=0.0,
    )
    return float(out) if np.isscalar(r) else out


def kernel_1d_derivative(r, d: float):
    """d(kernel_1d)/dr. At the branch points r = 1/2 and r = 1 the
    right-branch value is used (the kernel is C1 there anyway)."""
    r_in = np.asarray(r, dtype=float)
    if d <= 0:
        raise ValueError(f"smoothing length must be positive, got {d}")
    if np.any(r_in < 0):
        raise ValueError("normalized distance r must be non-negative")
    c = 2.0 / d
    out = np.select(
        [r_in < 0.5, r_in <= 1.0],
        [c * (-8.0 * r_in + 12.0 * r_in**2),
         c * (-4.0 + 8.0 * r_in - 4.0 * r_in**2)],
        default=0.0,
    )
    return float(out) if np.isscalar(r) else out


# ---------------------------------------------------------------------------
# per-node field evaluation

def local_coords(point, node: MassNode, d_rho: float):
    """Rotated coordinates of a point in a node's frame, normalized by the
    support half-widths d_rho*lx/2 and d_rho*ly/2. |xi| <= 1 and |eta| <= 1
    exactly on the support."""
    pts = np.asarray(point, dtype=float)
    cx, cy = pts[..., 0] - node.x, pts[..., 1] - node.y
    c, s = math.cos(node.theta), math.sin(node.theta)
    hx = d_rho * node.lx / 2.0
    hy = d_rho * node.ly / 2.0
    xi = (cx * c + cy * s) / hx
    eta = (-cx * s + cy * c) / hy
    return xi, eta


def node_weight(point, node: MassNode, d_rho: float):
    """Tensor-product kernel weight of one node; integrates to one over its
    support and vanishes identically outside it."""
    xi, eta = local_coords(point, node, d_rho)
    hx = d_rho * node.lx / 2.0
    hy = d_rho * node.ly / 2.0
    return kernel_1d(np.abs(xi), hx) * kernel_1d(np.abs(eta), hy)


def _weight_partials(points: np.ndarray, node: MassNode, d_rho: float,
                     variables=()):
    """Kernel weight W at points plus its partials for the requested node
    variables. Points must be an (m, 2) array."""
    cx = points[:, 0] - node.x
    cy = points[:, 1] - node.y
    c, s = math.cos(node.theta), math.sin(node.theta)
    hx = d_rho * node.lx / 2.0
    hy = d_rho * node.ly / 2.0
    u = cx * c + cy * s
    v = -cx * s + cy * c
    xi = u / hx
    eta = v / hy
    ax, ay = np.abs(xi), np.abs(eta)
    wx = kernel_1d(ax, hx)
    wy = kernel_1d(ay, hy)
    weight = wx * wy
    partials = {}
    if variables:
        dwx = kernel_1d_derivative(ax, hx) * np.sign(xi)   # d wx / d xi
        dwy = kernel_1d_derivative(ay, hy) * np.sign(eta)  # d wy / d eta
        for var in variables:
            if var == "x":
                d = dwx * (-c / hx) * wy + wx * dwy * (s / hy)
            elif var == "y":
                d = dwx * (-s / hx) * wy + wx * dwy * (-c / hy)
            elif var == "theta":
                d = dwx * (v / hx) * wy + wx * dwy * (-u / hy)
            elif var == "lx":
                # both the normalization 2/hx and xi depend on lx
                d = -(ax * kernel_1d_derivative(ax, hx) + wx) / node.lx * wy
            elif var == "ly":
                d = -wx * (ay * kernel_1d_derivative(ay, hy) + wy) / node.ly
            else:
                raise ValueError(f"unknown variable {var!r}")
            partials[var] = d
    return weight, partials


def raw_density(point, layout: MaterialLayout):
    """Superposed density rho = sum_I m_I * W_I evaluated at point(s)."""
    pts = np.atleast_2d(np.asarray(point, dtype=float))
    rho = np.zeros(len(pts))
    for node in layout.nodes:
        weight, _ = _weight_partials(pts, node, layout.d_rho)
        rho += node.mass(layout.beta) * weight
    if np.asarray(point).ndim == 1:
        return float(rho[0])
    return rho


def raw_density_gradient(point, layout: MaterialLayout, node_index: int, variable: str):
    """Analytic d rho / d(variable of node node_index) at point(s).

    The mass factor contributes only through lx and ly; position and angle
    act through the kernel alone.
    """
    node = layout.nodes[node_index]
    if variable not in node.optimizable:
        raise ValueError(
            f"variable {variable!r} is not optimizable for a {node.kind.value} node")
    pts = np.atleast_2d(np.asarray(point, dtype=float))
    weight, partials = _weight_partials(pts, node, layout.d_rho, (variable,))
    m = node.mass(layout.beta)
    grad = m * partials[variable]
    if variable == "lx":
        grad = grad + layout.beta * node.ly * weight
    elif variable == "ly":
        grad = grad + layout.beta * node.lx * weight
    if np.asarray(point).ndim == 1:
        return float(grad[0])
    return grad


# ---------------------------------------------------------------------------
# initial layouts and serialization

def _row_col_split(n: int, width: float, height: float) -> tuple[int, int]:
    # divisor pair (rows, cols) whose aspect best matches the domain;
    # ties go to the flatter arrangement (fewer rows)
    target = math.log(height / width)
    best = None
    for rows in range(1, n + 1):
        if n % rows:
            continue
        cols = n // rows
        score = abs(math.log(rows / cols) - target)
        if best is None or score < best[0] - 1e-12:
            best = (score, rows, cols)
    return best[1], best[2]


def initialize_layout(grid: Grid, n_nodes: int, v_frac: float,
                      kind: NodeKind = NodeKind.DEFORMABLE_MEMBER,
                      d_rho: float = 1.5, beta: float | None = None) -> MaterialLayout:
    """Regularly sampled starting layout.

    Nodes sit at the cell centers of an r x c grid over the domain bounding
    box, all with theta = 0, aspect lx/ly = 2 and identical dimensions such
    that the summed rectangle area equals v_frac times the active area.
    """
    if n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")
    if not 0 < v_frac <= 1:
        raise ValueError(f"v_frac must lie in (0, 1], got {v_frac}")
    if n_nodes > grid.n_active:
        warnings.warn(
            f"{n_nodes} nodes on {grid.n_active} active elements: the mesh cannot "
            "resolve the components (each support should span two elements)",
            stacklevel=2)
    if beta is None:
        beta = default_beta(d_rho)

    rows, cols = _row_col_split(n_nodes, grid.width, grid.height)
    x0, y0 = grid.origin
    area_per_node = v_frac * grid.active_area / n_nodes
    ly = math.sqrt(area_per_node / 2.0)
    lx = 2.0 * ly
    nodes = []
    for i in range(rows):
        for j in range(cols):
            nodes.append(MassNode(
                x=x0 + (j + 0.5) * grid.width / cols,
                y=y0 + (i + 0.5) * grid.height / rows,
                theta=0.0, lx=lx, ly=ly, kind=kind))
    return MaterialLayout(nodes=nodes, beta=beta, d_rho=d_rho)


def save_layout(path, layout: MaterialLayout) -> None:
    """Write the member table (one node per line: x y theta Lx Ly kind)."""
    with open(path, "w") as fh:
        fh.write(f"# beta = {layout.beta!r}\n")
        fh.write(f"# d_rho = {layout.d_rho!r}\n")
        fh.write("# x y theta Lx Ly kind\n")
        for n in layout.nodes:
            fh.write(f"{n.x!r} {n.y!r} {n.theta!r} {n.lx!r} {n.ly!r} {n.kind.value}\n")


def load_layout(path) -> MaterialLayout:
    """Read a member table written by save_layout."""
    beta = None
    d_rho = 1.5
    nodes = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                for key in ("beta", "d_rho"):
                    if body.startswith(key):
                        _, _, value = body.partition("=")
                        if key == "beta":
                            beta = float(value)
                        else:
                            d_rho = float(value)
                continue
            x, y, theta, lx, ly, kind = line.split()
            nodes.append(MassNode(float(x), float(y), float(theta),
                                  float(lx), float(ly), NodeKind(kind)))
    if not nodes:
        raise ValueError(f"no nodes found in {path}")
    if beta is None:
        beta = default_beta(d_rho)
    return MaterialLayout(nodes=nodes, beta=beta, d_rho=d_rho)
