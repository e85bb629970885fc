"""Mass-constrained steepest descent over the node variables.

One iteration: evaluate the modulus field, solve equilibrium, form the
compliance gradient, take a clamped descent step on the optimizable
variables, clamp dimensions, project back onto the mass budget, record.
Gradients are normalized per variable class (domain diagonal for lengths,
pi/2 for angles) so the step-norm clamp treats positions, dimensions and
orientations on the same footing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .density import NodeKind, MassNode, MaterialLayout
from .fem import compliance_gradient, static_solve, unit_element_stiffness
from .geometry import BoundarySpec, GaussPointSet, Grid, gauss_points
from .material import PipelineConfig, evaluate_field


class InfeasibleConfigurationError(ValueError):
    """The mass budget cannot be met even at the minimum dimensions."""


@dataclass(frozen=True)
class OptimizerConfig:
    iter_max: int = 1000
    tol_c: float = 1e-6
    tol_x: float = 1e-6
    tol_m: float = 1e-6
    max_step_norm: float = 0.4
    step_shrink: float = 0.5
    min_dims: tuple[float, float] | None = None   # None: one element size
    eta0: float | None = None                     # None: max_step_norm
    continuation: bool = True
    snapshot_every: int = 10
    recognize_every: int = 0                      # 0: only after convergence

    def __post_init__(self):
        if min(self.tol_c, self.tol_x, self.tol_m) <= 0:
            raise ValueError("tolerances must be positive")
        if not 0 < self.step_shrink < 1:
            raise ValueError(f"step_shrink must lie in (0, 1), got {self.step_shrink}")
        if self.max_step_norm <= 0:
            raise ValueError(f"max_step_norm must be positive, got {self.max_step_norm}")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    compliance: float
    vfrac: float
    mass_slack: float
    step_norm: float
    n_nodes: int


@dataclass(frozen=True)
class Problem:
    grid: Grid
    boundary: BoundarySpec
    layout: MaterialLayout
    pipeline: PipelineConfig
    m_max: float
    nu: float = 0.3


def problem_for(grid: Grid, boundary: BoundarySpec, layout: MaterialLayout,
                pipeline: PipelineConfig, v_frac: float, nu: float = 0.3) -> Problem:
    """Problem with the mass budget tied to a target volume fraction."""
    m_max = v_frac * grid.active_area * layout.beta
    return Problem(grid=grid, boundary=boundary, layout=layout,
                   pipeline=pipeline, m_max=m_max, nu=nu)


@dataclass
class DescentResult:
    layout: MaterialLayout
    history: list[IterationRecord]
    termination: str
    snapshots: list[tuple[int, MaterialLayout]] = field(default_factory=list)
    pinned: list[int] = field(default_factory=list)


def mass_constraint(layout: MaterialLayout, m_max: float):
    """Slack g = m_max - sum(beta*lx*ly) and its gradient over (node, var).

    Only the dimension columns are nonzero; positions and angles do not
    change mass.
    """
    if m_max <= 0:
        raise ValueError(f"m_max must be positive, got {m_max}")
    g = m_max - layout.total_mass()
    grad = np.zeros((layout.n_nodes, 5))
    for i, node in enumerate(layout.nodes):
        grad[i, 3] = -layout.beta * node.ly
        grad[i, 4] = -layout.beta * node.lx
    return g, grad


def project_mass(layout: MaterialLayout, m_max: float,
                 min_dims: tuple[float, float] = (0.0, 0.0)) -> MaterialLayout:
    """Scale deformable members' dimensions down onto the mass budget.

    The quadratic mass makes the projection a scaling: with no clamps a
    single square root lands exactly on the budget; a dimension hitting
    min_dims freezes there and the remaining scale solves the induced
    quadratic, re-checked for at most a handful of rounds. Non-deformable
    nodes keep their dimensions.
    """
    if layout.total_mass() <= m_max * (1.0 + 1e-12):
        return layout
    min_lx, min_ly = min_dims
    nodes = list(layout.nodes)
    deform = [i for i, n in enumerate(nodes) if n.kind is NodeKind.DEFORMABLE_MEMBER]
    fixed_mass = layout.beta * sum(
        n.lx * n.ly for n in nodes if n.kind is not NodeKind.DEFORMABLE_MEMBER)
    frozen_lx = {i: False for i in deform}
    frozen_ly = {i: False for i in deform}

    for _ in range(5):
        # both-frozen nodes contribute a constant; one frozen dimension makes
        # the node's mass linear in the scale, none makes it quadratic
        const = quad = lin = 0.0
        for i in deform:
            lx = min_lx if frozen_lx[i] else nodes[i].lx
            ly = min_ly if frozen_ly[i] else nodes[i].ly
            if frozen_lx[i] and frozen_ly[i]:
                const += lx * ly
            elif frozen_lx[i] or frozen_ly[i]:
                lin += lx * ly
            else:
                quad += lx * ly
        goal = m_max / layout.beta - fixed_mass / layout.beta - const
        if goal <= 0 or (quad == 0.0 and lin == 0.0):
            raise InfeasibleConfigurationError(
                f"mass cannot be projected below m_max = {m_max:.6g} without "
                "violating the minimum dimensions")
        if quad > 0:
            s = (-lin + math.sqrt(lin * lin + 4.0 * quad * goal)) / (2.0 * quad)
        else:
            s = goal / lin
        # s >= 1 means the freezes alone brought the mass under budget
        s = min(s, 1.0)
        newly_frozen = False
        for i in deform:
            if not frozen_lx[i] and nodes[i].lx * s < min_lx:
                frozen_lx[i] = True
                newly_frozen = True
            if not frozen_ly[i] and nodes[i].ly * s < min_ly:
                frozen_ly[i] = True
                newly_frozen = True
        if not newly_frozen:
            nodes = [replace(n,
                             lx=min_lx if frozen_lx[i] else n.lx * s,
                             ly=min_ly if frozen_ly[i] else n.ly * s)
                     if i in frozen_lx else n
                     for i, n in enumerate(nodes)]
            return layout.with_nodes(nodes)
    raise InfeasibleConfigurationError(
        f"mass projection did not settle onto m_max = {m_max:.6g}; the minimum "
        "dimensions leave too little slack")


def check_discretization(layout: MaterialLayout, grid: Grid) -> list[str]:
    """Good-practice check: every support should span two elements per
    direction. Returns one warning string per violating node; never aborts."""
    h = max(grid.dx, grid.dy)
    messages = []
    for i, node in enumerate(layout.nodes):
        support = min(layout.d_rho * node.lx / 2.0, layout.d_rho * node.ly / 2.0)
        if support < h:
            messages.append(
                f"node {i}: support half-width {support:.4g} is below the "
                f"element size {h:.4g}; the mesh cannot resolve it")
    return messages


# per-variable normalization scales: index into (x, y, theta, lx, ly)
def _variable_scales(grid: Grid) -> np.ndarray:
    diag = math.hypot(grid.width, grid.height)
    return np.array([diag, diag, math.pi / 2.0, diag, diag])


def _pack_spec(layout: MaterialLayout):
    """(node index, variable slot, scale) for every optimizable variable."""
    entries = []
    for i, node in enumerate(layout.nodes):
        for var in node.optimizable:
            slot = ("x", "y", "theta", "lx", "ly").index(var)
            entries.append((i, slot))
    return entries


def _pack(layout: MaterialLayout, entries, scales) -> np.ndarray:
    attrs = ("x", "y", "theta", "lx", "ly")
    return np.array([getattr(layout.nodes[i], attrs[slot]) / scales[slot]
                     for i, slot in entries])


def _apply(layout: MaterialLayout, entries, scales, z: np.ndarray,
           min_dims: tuple[float, float]) -> MaterialLayout:
    attrs = ("x", "y", "theta", "lx", "ly")
    updates: dict[int, dict[str, float]] = {}
    for (i, slot), value in zip(entries, z):
        updates.setdefault(i, {})[attrs[slot]] = value * scales[slot]
    nodes = []
    for i, node in enumerate(layout.nodes):
        fields = updates.get(i)
        if fields:
            if "lx" in fields:
                fields["lx"] = max(min_dims[0], fields["lx"])
            if "ly" in fields:
                fields["ly"] = max(min_dims[1], fields["ly"])
            node = replace(node, **fields)
        nodes.append(node)
    return layout.with_nodes(nodes)


def descend(problem: Problem, config: OptimizerConfig,
            recognizer=None) -> DescentResult:
    """Fixed-max-step steepest descent with oscillation damping.

    Stops once the relative compliance change, the relative variable change
    and the mass violation are all inside their tolerances, or at iter_max.
    The step length starts at max_step_norm and halves whenever the
    compliance rises twice in a row. With config.recognize_every > 0 the
    recognizer callable simplifies the layout every so many iterations.
    """
    grid, boundary, pipeline = problem.grid, problem.boundary, problem.pipeline
    points = gauss_points(grid)
    ke = unit_element_stiffness(problem.nu, grid.dx, grid.dy)
    min_dims = config.min_dims if config.min_dims is not None else (grid.dx, grid.dy)
    scales = _variable_scales(grid)

    layout = problem.layout
    entries = _pack_spec(layout)
    z = _pack(layout, entries, scales)
    eta = config.eta0 if config.eta0 is not None else config.max_step_norm

    history: list[IterationRecord] = []
    snapshots: list[tuple[int, MaterialLayout]] = []
    pinned_streak = np.zeros(layout.n_nodes, dtype=int)
    pinned: set[int] = set()
    prev_c = None
    prev_z = None
    increase_streak = 0
    termination = "max_iter"

    for it in range(config.iter_max):
        p_target = pipeline.p
        if config.continuation and p_target > 1.0:
            p_now = min(p_target, 1.0 + 0.5 * (it // 50))
            stage = replace(pipeline, p=p_now)
        else:
            stage = pipeline
        field_eval = evaluate_field(layout, points, stage)
        solution = static_solve(grid, boundary, field_eval, ke)
        c = solution.compliance
        g, _ = mass_constraint(layout, problem.m_max)
        vfrac = field_eval.effective_mass / grid.active_area

        if config.snapshot_every > 0 and it % config.snapshot_every == 0:
            snapshots.append((it, layout))

        if prev_c is not None:
            rel_dc = abs(c - prev_c) / max(abs(c), 1e-300)
            rel_dz = (np.linalg.norm(z - prev_z) / max(np.linalg.norm(z), 1e-300)
                      if len(z) == len(prev_z) else np.inf)
            violation = max(0.0, -g) / problem.m_max
            if rel_dc < config.tol_c and rel_dz < config.tol_x and violation < config.tol_m:
                history.append(IterationRecord(it, c, vfrac, g, 0.0, layout.n_nodes))
                termination = "tolerance"
                break
            # two increase events since the last halving shrink the step; a
            # consecutive-only trigger never fires on alternating oscillation.
            # Each halving restarts from the best iterate so the oscillation
            # cannot run away with the design.
            if c > prev_c:
                increase_streak += 1
                if increase_streak >= 2:
                    eta *= config.step_shrink
                    increase_streak = 0
                    if best is not None and best[0] < c:
                        layout = best[1]
                        z = _pack(layout, entries, scales)
                        prev_c = prev_z = None
                        continue

        grad = compliance_gradient(grid, solution, field_eval, ke)
        grad_z = np.array([grad[i, slot] * scales[slot] for i, slot in entries])
        step = -eta * grad_z
        norm = np.linalg.norm(step)
        if norm > config.max_step_norm:
            step *= config.max_step_norm / norm

        prev_c, prev_z = c, z
        new_layout = _apply(layout, entries, scales, z + step, min_dims)
        new_layout = project_mass(new_layout, problem.m_max, min_dims)
        new_z = _pack(new_layout, entries, scales)
        history.append(IterationRecord(it, c, vfrac, g,
                                       float(np.linalg.norm(new_z - z)),
                                       layout.n_nodes))
        layout, z = new_layout, new_z

        for i, node in enumerate(layout.nodes):
            if node.kind is NodeKind.DEFORMABLE_MEMBER and (
                    node.lx <= min_dims[0] * (1 + 1e-9)
                    or node.ly <= min_dims[1] * (1 + 1e-9)):
                pinned_streak[i] += 1
                if pinned_streak[i] >= 10:
                    pinned.add(i)
            else:
                pinned_streak[i] = 0

        if recognizer is not None and config.recognize_every > 0 \
                and it > 0 and (it + 1) % config.recognize_every == 0:
            simplified = recognizer(layout)
            if simplified.n_nodes != layout.n_nodes:
                layout = simplified
                entries = _pack_spec(layout)
                z = _pack(layout, entries, scales)
                prev_c = prev_z = None
                pinned_streak = np.zeros(layout.n_nodes, dtype=int)
                pinned.clear()
            else:
                layout = simplified
                z = _pack(layout, entries, scales)

    snapshots.append((history[-1].iteration if history else 0, layout))
    return DescentResult(layout=layout, history=history, termination=termination,
                         snapshots=snapshots, pinned=sorted(pinned))
