"""Density-to-stiffness pipeline: filter, saturation, floor and penalization.

The raw kernel density is turned into a Young-modulus field in stages:

    raw density -> Gauss-point convolution filter -> saturation -> floored
    power law

Every stage carries its derivative so the sparse table d(E)/d(node variable)
comes out of one chain-rule sweep.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .density import VARIABLES, MaterialLayout, _weight_partials
from .geometry import GaussPointSet

SMOOTH_CLAMP = "smooth_clamp"
ASYMPTOTIC = "asymptotic"   # rational saturating transform, see saturate()

FLOOR_YOUNG = "young_modulus"
FLOOR_DENSITY = "density"


@dataclass(frozen=True)
class PipelineConfig:
    """Stage parameters for the density-to-modulus transform.

    Exactly one stiffness floor is active: either a minimum Young modulus
    e_min (default) or a minimum density rho_min folded into the power law.
    """

    rho_max: float = 1.2
    use_saturation: bool = True
    saturation_mode: str = SMOOTH_CLAMP
    r_min: float = 0.0
    e0: float = 1.0
    e_min: float = 1e-9
    rho_min: float = 1e-3
    floor: str = FLOOR_YOUNG
    p: float = 3.0

    def __post_init__(self):
        if self.rho_max <= 1:
            raise ValueError(f"rho_max must exceed 1, got {self.rho_max}")
        if self.saturation_mode not in (SMOOTH_CLAMP, ASYMPTOTIC):
            raise ValueError(f"unknown saturation mode {self.saturation_mode!r}")
        if self.floor not in (FLOOR_YOUNG, FLOOR_DENSITY):
            raise ValueError(f"unknown floor mechanism {self.floor!r}")
        if not (self.e0 > self.e_min >= 0):
            raise ValueError(f"need e0 > e_min >= 0, got e0={self.e0}, e_min={self.e_min}")
        if self.floor == FLOOR_DENSITY and not 0 < self.rho_min < 1:
            raise ValueError(f"rho_min must lie in (0, 1), got {self.rho_min}")
        if self.p < 1:
            raise ValueError(f"penalization exponent must be >= 1, got {self.p}")
        if self.r_min < 0:
            raise ValueError(f"filter radius must be >= 0, got {self.r_min}")

    @property
    def floor_modulus(self) -> float:
        """Smallest Young modulus the pipeline can emit."""
        if self.floor == FLOOR_YOUNG:
            return self.e_min
        return self.e0 * self.rho_min ** self.p


@dataclass(frozen=True)
class FieldEvaluation:
    """Per-Gauss-point Young modulus and its sparse design derivatives.

    d_young has one row per Gauss point and one column per (node, variable)
    pair, column index 5*node + VARIABLES.index(variable); only variables
    that are optimizable for the node's kind are populated. effective_mass
    is the quadrature of the post-filter, post-saturation density over the
    active domain.
    """

    young: np.ndarray
    d_young: sp.csr_matrix
    effective_mass: float
    layout_revision: int
    n_design_nodes: int

    def gradient_column(self, node_index: int, variable: str) -> int:
        return 5 * node_index + VARIABLES.index(variable)


def filter_matrix(points: GaussPointSet, r_min: float) -> sp.csr_matrix:
    """Symmetric convolution weights H_kl = r_min - min(r_min, |x_k - x_l|),
    stored sparsely over point pairs closer than r_min."""
    n = points.n
    if r_min <= 0:
        return sp.csr_matrix((n, n))
    tree = cKDTree(points.coords)
    pairs = tree.query_pairs(r_min, output_type="ndarray")
    if len(pairs):
        d = np.linalg.norm(points.coords[pairs[:, 0]] - points.coords[pairs[:, 1]], axis=1)
        vals = r_min - d
        rows = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(n)])
        cols = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(n)])
        data = np.concatenate([vals, vals, np.full(n, r_min)])
    else:
        rows = cols = np.arange(n)
        data = np.full(n, r_min)
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def apply_filter(values, h: sp.csr_matrix):
    """Row-normalized convolution; values may be a vector or a sparse matrix
    of per-point derivatives (both get the same row-stochastic weights)."""
    if h is None or h.nnz == 0:
        return values
    rowsum = np.asarray(h.sum(axis=1)).ravel()
    smooth = sp.diags(1.0 / rowsum) @ h
    return smooth @ values


def saturate(rho, config: PipelineConfig):
    """Saturating transform bounding the density by rho_max, with derivative.

    smooth_clamp: rho / (1 + (rho/rho_max)^q)^(1/q) with q = 8; monotone,
    asymptote rho_max, near-identity well below rho_max.

    asymptotic: the rational form a*rho / (rho^b + a) with
    b = 1/(1 - rho_max) - 1 and a = rho_max^b / (rho_max - 1), which maps
    rho_max to exactly one. Kept for auditability; note that with
    rho_max > 1 it crushes small densities instead of acting linearly.
    """
    rho_in = np.asarray(rho, dtype=float)
    if np.any(rho_in < 0):
        raise ValueError("density must be non-negative")
    if not config.use_saturation:
        out, der = rho_in.copy(), np.ones_like(rho_in)
    elif config.saturation_mode == SMOOTH_CLAMP:
        q = 8.0
        s = (rho_in / config.rho_max) ** q
        out = rho_in * (1.0 + s) ** (-1.0 / q)
        der = (1.0 + s) ** (-1.0 - 1.0 / q)
    else:
        b = 1.0 / (1.0 - config.rho_max) - 1.0
        a = config.rho_max ** b / (config.rho_max - 1.0)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            t = rho_in ** b
            out = a * rho_in / (t + a)
            der = (a * (1.0 - b) * t + a * a) / (t + a) ** 2
        # b < 0 makes rho^b blow up at 0; the limit of both value and slope is 0
        out = np.where(np.isfinite(out), out, 0.0)
        der = np.where(np.isfinite(der), der, 0.0)
    if np.isscalar(rho):
        return float(out), float(der)
    return out, der


def young_modulus(rho, config: PipelineConfig):
    """Floored power law E(rho) and dE/drho for the configured floor."""
    rho_in = np.asarray(rho, dtype=float)
    if config.floor == FLOOR_YOUNG:
        e = config.e_min + (config.e0 - config.e_min) * rho_in ** config.p
        der = config.p * (config.e0 - config.e_min) * rho_in ** (config.p - 1.0)
    else:
        floored = config.rho_min + (1.0 - config.rho_min) * rho_in
        e = config.e0 * floored ** config.p
        der = config.e0 * config.p * floored ** (config.p - 1.0) * (1.0 - config.rho_min)
    if np.isscalar(rho):
        return float(e), float(der)
    return e, der


def evaluate_field(layout: MaterialLayout, points: GaussPointSet,
                   config: PipelineConfig) -> FieldEvaluation:
    """Run the full pipeline at every Gauss point.

    Returns the modulus vector, the chained sparse derivative table (only
    kind-optimizable variables get columns) and the effective mass.
    """
    n = points.n
    rho = np.zeros(n)
    rows, cols, vals = [], [], []
    for i, node in enumerate(layout.nodes):
        weight, partials = _weight_partials(points.coords, node, layout.d_rho,
                                            node.optimizable)
        support = np.flatnonzero(weight > 0.0)
        m = node.mass(layout.beta)
        rho += m * weight
        for var in node.optimizable:
            d = m * partials[var]
            if var == "lx":
                d = d + layout.beta * node.ly * weight
            elif var == "ly":
                d = d + layout.beta * node.lx * weight
            nz = support[d[support] != 0.0]
            rows.append(nz)
            cols.append(np.full(len(nz), 5 * i + VARIABLES.index(var)))
            vals.append(d[nz])
    shape = (n, 5 * layout.n_nodes)
    if rows:
        d_rho_table = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=shape)
    else:
        d_rho_table = sp.csr_matrix(shape)

    if config.r_min > 0:
        h = filter_matrix(points, config.r_min)
        rho = apply_filter(rho, h)
        d_rho_table = sp.csr_matrix(apply_filter(d_rho_table, h))

    rho_sat, d_sat = saturate(rho, config)
    young, d_young_drho = young_modulus(rho_sat, config)
    chain = d_sat * d_young_drho
    d_young = sp.csr_matrix(sp.diags(chain) @ d_rho_table)
    effective_mass = float(points.weights @ rho_sat)
    return FieldEvaluation(young=young, d_young=d_young,
                           effective_mass=effective_mass,
                           layout_revision=layout.revision,
                           n_design_nodes=layout.n_nodes)
