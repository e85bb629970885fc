"""Structural-element recognition: merge similar nodes, suppress useless
ones, export the surviving members as an explicit beam assembly.

Members are compared in their long-axis form: orientation folded into
(-pi/2, pi/2], length = the larger dimension, thickness = the smaller one.
Merging conserves mass exactly; suppression is gated by a re-solve so load
paths survive.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .density import MassNode, MaterialLayout, NodeKind, normalize_angle
from .fem import static_solve, unit_element_stiffness
from .geometry import BoundarySpec, Grid, gauss_points
from .material import PipelineConfig, evaluate_field


class EmptyStructureError(ValueError):
    """Suppression would remove every node."""


@dataclass(frozen=True)
class MergeTolerances:
    tol_theta: float = math.radians(5.0)  # orientation difference, radians
    tol_l: float = 0.25                   # relative thickness difference
    tol_d: float = 0.1                    # slack on the center-distance bound
    r_rho: float = 0.37                   # density-level ratio in the distance bound
    tol_l_absolute: bool = False          # interpret tol_l in length units

    def __post_init__(self):
        if min(self.tol_theta, self.tol_l, self.tol_d, self.r_rho) <= 0:
            raise ValueError("merge tolerances must be positive")
        if self.tol_theta >= math.pi / 2:
            raise ValueError("tol_theta must be below pi/2")


@dataclass(frozen=True)
class Beam:
    x: float
    y: float
    theta: float
    length: float
    thickness: float
    mass: float
    provenance: tuple[int, ...]
    outside_domain: bool = False


@dataclass(frozen=True)
class BeamAssembly:
    members: tuple[Beam, ...]
    total_mass: float


def _long_axis(node: MassNode) -> tuple[float, float, float]:
    """(axis angle in (-pi/2, pi/2], length, thickness) of a node."""
    if node.lx >= node.ly:
        return normalize_angle(node.theta), node.lx, node.ly
    return normalize_angle(node.theta + math.pi / 2.0), node.ly, node.lx


def _angle_distance(a: float, b: float) -> float:
    """Shortest angular distance modulo pi (axis orientations)."""
    return abs(math.remainder(a - b, math.pi))


def should_merge(a: MassNode, b: MassNode, tol: MergeTolerances) -> bool:
    """All three merge conditions: near-parallel axes, similar thickness,
    centers closer than (1 + tol_d) * r_rho times the mean length."""
    theta_a, len_a, thick_a = _long_axis(a)
    theta_b, len_b, thick_b = _long_axis(b)
    if _angle_distance(theta_a, theta_b) > tol.tol_theta:
        return False
    bound = tol.tol_l if tol.tol_l_absolute else tol.tol_l * max(thick_a, thick_b)
    if abs(thick_a - thick_b) > bound:
        return False
    distance = math.hypot(a.x - b.x, a.y - b.y)
    return distance <= (1.0 + tol.tol_d) * tol.r_rho * 0.5 * (len_a + len_b)


_KIND_RANK = {NodeKind.MASS_NODE: 0, NodeKind.UNDEFORMABLE_MEMBER: 1,
              NodeKind.DEFORMABLE_MEMBER: 2}


def merge(a: MassNode, b: MassNode) -> MassNode:
    """Mass-conserving replacement of two similar members by one.

    Center: mass-weighted mean. Axis: mass-weighted circular mean modulo pi.
    Length: span of the four member endpoints projected on the merged axis.
    Thickness: whatever conserves the summed mass.
    """
    m_a, m_b = a.lx * a.ly, b.lx * b.ly
    total = m_a + m_b
    cx = (m_a * a.x + m_b * b.x) / total
    cy = (m_a * a.y + m_b * b.y) / total

    theta_a, len_a, _ = _long_axis(a)
    theta_b, len_b, _ = _long_axis(b)
    # angle doubling turns the mod-pi mean into an ordinary circular mean
    theta = 0.5 * math.atan2(m_a * math.sin(2 * theta_a) + m_b * math.sin(2 * theta_b),
                             m_a * math.cos(2 * theta_a) + m_b * math.cos(2 * theta_b))

    ux, uy = math.cos(theta), math.sin(theta)
    spans = []
    for node, axis, length in ((a, theta_a, len_a), (b, theta_b, len_b)):
        ex = 0.5 * length * math.cos(axis)
        ey = 0.5 * length * math.sin(axis)
        for sign in (-1.0, 1.0):
            px = node.x + sign * ex - cx
            py = node.y + sign * ey - cy
            spans.append(px * ux + py * uy)
    length = max(spans) - min(spans)
    kind = a.kind if _KIND_RANK[a.kind] >= _KIND_RANK[b.kind] else b.kind
    return MassNode(x=cx, y=cy, theta=theta, lx=length, ly=total / length, kind=kind)


def _merge_pass(layout: MaterialLayout, tol: MergeTolerances,
                provenance: list[set[int]] | None = None):
    nodes = list(layout.nodes)
    prov = provenance if provenance is not None else [{i} for i in range(len(nodes))]
    while True:
        best = None
        for i in range(len(nodes)):
            for j in range(i + 1, len(nodes)):
                if should_merge(nodes[i], nodes[j], tol):
                    d = math.hypot(nodes[i].x - nodes[j].x, nodes[i].y - nodes[j].y)
                    if best is None or d < best[0] - 1e-15:
                        best = (d, i, j)
        if best is None:
            break
        _, i, j = best
        nodes[i] = merge(nodes[i], nodes[j])
        prov[i] = prov[i] | prov[j]
        del nodes[j], prov[j]
    return layout.with_nodes(nodes), prov


def merge_pass(layout: MaterialLayout, tol: MergeTolerances) -> MaterialLayout:
    """Greedy pairwise merging to a fixed point, closest centers first."""
    merged, _ = _merge_pass(layout, tol)
    return merged


def _support_overlap(node: MassNode, d_rho: float, grid: Grid, probes: int = 10):
    """Largest fraction of any active element covered by the node support."""
    ticks = (np.arange(probes) + 0.5) / probes
    px, py = np.meshgrid(ticks * grid.dx, ticks * grid.dy)
    offsets = np.column_stack([px.ravel(), py.ravel()])
    corners = grid.nodes[grid.elements[:, 0]]
    c, s = math.cos(node.theta), math.sin(node.theta)
    hx = d_rho * node.lx / 2.0
    hy = d_rho * node.ly / 2.0
    worst = 0.0
    for e in grid.active_element_indices():
        pts = corners[e] + offsets
        dx = pts[:, 0] - node.x
        dy = pts[:, 1] - node.y
        inside = (np.abs(dx * c + dy * s) <= hx) & (np.abs(-dx * s + dy * c) <= hy)
        worst = max(worst, float(np.count_nonzero(inside)) / len(pts))
        if worst >= 1.0:
            break
    return worst


def suppress_isolated(layout: MaterialLayout, grid: Grid, boundary: BoundarySpec,
                      pipeline: PipelineConfig, min_dim: float,
                      overlap_threshold: float = 0.05, tol_c: float = 1e-6,
                      nu: float = 0.3, extra_candidates=()) -> MaterialLayout:
    """Drop degenerate and isolated nodes that a re-solve proves harmless.

    Candidates: nodes thinner than min_dim, nodes whose support covers less
    than overlap_threshold of every active element, and any extra indices
    handed over by the optimizer. Each removal must change the compliance by
    less than tol_c (relative), checked one re-solve at a time.
    """
    kept_layout, _ = _suppress(layout, grid, boundary, pipeline, min_dim,
                               overlap_threshold, tol_c, nu, extra_candidates)
    return kept_layout


def _suppress(layout: MaterialLayout, grid: Grid, boundary: BoundarySpec,
              pipeline: PipelineConfig, min_dim: float,
              overlap_threshold: float, tol_c: float,
              nu: float, extra_candidates):
    points = gauss_points(grid)
    ke = unit_element_stiffness(nu, grid.dx, grid.dy)

    def solve_for(candidate: MaterialLayout) -> float:
        field = evaluate_field(candidate, points, pipeline)
        return static_solve(grid, boundary, field, ke).compliance

    candidates = set(extra_candidates)
    for i, node in enumerate(layout.nodes):
        if min(node.lx, node.ly) < min_dim:
            candidates.add(i)
        elif _support_overlap(node, layout.d_rho, grid) < overlap_threshold:
            candidates.add(i)

    current = layout
    kept = list(range(layout.n_nodes))
    c_current = solve_for(current) if candidates else None
    for index in sorted(candidates):
        pos = kept.index(index) if index in kept else None
        if pos is None:
            continue
        if current.n_nodes == 1:
            raise EmptyStructureError("suppression would remove the last node")
        trial_nodes = [n for k, n in enumerate(current.nodes) if k != pos]
        trial = current.with_nodes(trial_nodes)
        c_trial = solve_for(trial)
        if abs(c_trial - c_current) / max(abs(c_current), 1e-300) < tol_c:
            current = trial
            c_current = c_trial
            del kept[pos]
    return current, kept


def export_beams(layout: MaterialLayout, provenance=None) -> BeamAssembly:
    """Long-axis-normalized member list with masses and provenance.

    Members reaching outside the domain are flagged, not clipped; the part
    outside contributes no stiffness anyway.
    """
    members = []
    for i, node in enumerate(layout.nodes):
        theta, length, thickness = _long_axis(node)
        prov = tuple(sorted(provenance[i])) if provenance is not None else (i,)
        members.append(Beam(x=node.x, y=node.y, theta=theta, length=length,
                            thickness=thickness,
                            mass=node.mass(layout.beta), provenance=prov))
    return BeamAssembly(members=tuple(members), total_mass=layout.total_mass())


def flag_outside(assembly: BeamAssembly, grid: Grid) -> BeamAssembly:
    """Mark members whose nominal rectangle pokes out of the active domain."""
    x0, y0 = grid.origin
    x1, y1 = x0 + grid.width, y0 + grid.height
    centroids = grid.element_centroids()
    inactive = centroids[~grid.active] if (~grid.active).any() else None
    members = []
    for beam in assembly.members:
        c, s = math.cos(beam.theta), math.sin(beam.theta)
        half_l, half_t = beam.length / 2.0, beam.thickness / 2.0
        outside = False
        for sl, st in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
            px = beam.x + sl * half_l * c - st * half_t * s
            py = beam.y + sl * half_l * s + st * half_t * c
            if not (x0 - 1e-12 <= px <= x1 + 1e-12 and y0 - 1e-12 <= py <= y1 + 1e-12):
                outside = True
                break
            if inactive is not None:
                ex = min(int((px - x0) / grid.dx), grid.nx - 1)
                ey = min(int((py - y0) / grid.dy), grid.ny - 1)
                if not grid.active[ey + ex * grid.ny]:
                    outside = True
                    break
        members.append(replace(beam, outside_domain=outside))
    return BeamAssembly(members=tuple(members), total_mass=assembly.total_mass)


def recognize_layout(layout: MaterialLayout, grid: Grid, boundary: BoundarySpec,
                     pipeline: PipelineConfig, tol: MergeTolerances,
                     min_dim: float | None = None, overlap_threshold: float = 0.05,
                     tol_c: float = 1e-6, nu: float = 0.3, extra_candidates=()):
    """Full recognition pass: merge, suppress, export with provenance."""
    if min_dim is None:
        min_dim = min(grid.dx, grid.dy)
    merged, prov = _merge_pass(layout, tol)
    extra = {k for k, p in enumerate(prov)
             if any(orig in extra_candidates for orig in p)}
    suppressed, kept = _suppress(
        merged, grid, boundary, pipeline, min_dim, overlap_threshold, tol_c,
        nu, sorted(extra))
    kept_prov = [prov[k] for k in kept]
    assembly = flag_outside(export_beams(suppressed, kept_prov), grid)
    return suppressed, assembly


def save_beams_text(path, assembly: BeamAssembly) -> None:
    """One member per line: x y theta length thickness mass provenance."""
    with open(path, "w") as fh:
        fh.write("# x y theta length thickness mass provenance outside_domain\n")
        fh.write(f"# total_mass = {assembly.total_mass!r}\n")
        for b in assembly.members:
            prov = ",".join(map(str, b.provenance))
            fh.write(f"{b.x!r} {b.y!r} {b.theta!r} {b.length!r} {b.thickness!r} "
                     f"{b.mass!r} {prov} {int(b.outside_domain)}\n")


def save_beams_json(path, assembly: BeamAssembly) -> None:
    payload = {
        "total_mass": assembly.total_mass,
        "members": [
            {"center": [b.x, b.y], "theta": b.theta, "length": b.length,
             "thickness": b.thickness, "mass": b.mass,
             "provenance": list(b.provenance), "outside_domain": b.outside_domain}
            for b in assembly.members
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
