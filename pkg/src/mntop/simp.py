"""Implicit per-element baseline: power-law penalization, sensitivity
filter and optimality-criteria updates on the shared mesh and FEM kernels,
so compliance comparisons against the node-based method use identical
discretizations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .fem import compliance, solve, unit_element_stiffness
from .geometry import BoundarySpec, Grid


@dataclass
class SimpState:
    """Element densities of the active elements plus the update parameters."""

    densities: np.ndarray
    v_frac: float
    p: float
    r_min: float
    rho_floor: float = 1e-3
    move: float = 0.2
    bisection_lo: float = 0.0
    bisection_hi: float = 1e9


@dataclass
class SimpRecord:
    iteration: int
    compliance: float
    vfrac: float
    change: float


@dataclass
class SimpResult:
    densities: np.ndarray            # per element, 0 on inactive ones
    history: list[SimpRecord] = field(default_factory=list)

    @property
    def final_compliance(self) -> float:
        return self.history[-1].compliance


def _sensitivity_filter(grid: Grid, active: np.ndarray, r_min: float) -> sp.csr_matrix:
    centroids = grid.element_centroids()[active]
    n = len(centroids)
    tree = cKDTree(centroids)
    pairs = tree.query_pairs(r_min, output_type="ndarray")
    rows = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(n)]) if len(pairs) \
        else np.arange(n)
    cols = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(n)]) if len(pairs) \
        else np.arange(n)
    if len(pairs):
        d = np.linalg.norm(centroids[pairs[:, 0]] - centroids[pairs[:, 1]], axis=1)
        data = np.concatenate([r_min - d, r_min - d, np.full(n, r_min)])
    else:
        data = np.full(n, r_min)
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def _oc_update(x: np.ndarray, dc: np.ndarray, v_frac: float, state: SimpState) -> np.ndarray:
    """Optimality-criteria step with bisection on the volume multiplier.

    The final multiplier is taken from the feasible side of the bracket so
    the mean density never exceeds the target.
    """
    lo, hi = state.bisection_lo, state.bisection_hi

    def candidate(lam: float) -> np.ndarray:
        ratio = np.sqrt(np.maximum(-dc, 0.0) / lam)
        xn = np.clip(x * ratio, x - state.move, x + state.move)
        return np.clip(xn, state.rho_floor, 1.0)

    if candidate(max(lo, 1e-300)).mean() <= v_frac:
        return candidate(max(lo, 1e-300))
    while (hi - lo) / (hi + lo) > 1e-8:
        mid = 0.5 * (lo + hi)
        if candidate(mid).mean() > v_frac:
            lo = mid
        else:
            hi = mid
    return candidate(hi)


def simp_run(grid: Grid, boundary: BoundarySpec, v_frac: float, p: float = 3.0,
             r_min: float | None = None, iter_max: int = 1000, tol_x: float = 0.01,
             e0: float = 1.0, e_min: float = 1e-9, nu: float = 0.3,
             move: float = 0.2, rho_floor: float = 1e-3) -> SimpResult:
    """Classic density-based compliance minimization on the active elements.

    E_e = e_min + (e0 - e_min) * rho_e^p, sensitivities run through the
    mesh-independency filter, densities through the OC update with a move
    limit; stops when the largest density change drops below tol_x.
    """
    if not 0 < v_frac <= 1:
        raise ValueError(f"v_frac must lie in (0, 1], got {v_frac}")
    if r_min is None:
        r_min = 1.5 * grid.dx
    active = grid.active
    act_idx = grid.active_element_indices()
    n_act = len(act_idx)
    ke_gp = unit_element_stiffness(nu, grid.dx, grid.dy)
    ke = ke_gp.sum(axis=0)
    dofs = grid.element_dofs[active]
    i_k = np.repeat(dofs, 8, axis=1).ravel()
    j_k = np.tile(dofs, (1, 8)).ravel()
    h = _sensitivity_filter(grid, active, r_min)
    h_sum = np.asarray(h.sum(axis=1)).ravel()
    f = boundary.force_vector(grid.ndof)

    state = SimpState(densities=np.full(n_act, v_frac), v_frac=v_frac, p=p,
                      r_min=r_min, rho_floor=rho_floor, move=move)
    x = state.densities
    history: list[SimpRecord] = []
    for it in range(iter_max):
        e_el = e_min + (e0 - e_min) * x ** p
        s_k = (ke.ravel()[None, :] * e_el[:, None]).ravel()
        k = sp.coo_matrix((s_k, (i_k, j_k)), shape=(grid.ndof, grid.ndof)).tocsc()
        k = (k + k.T) * 0.5
        u = solve(k, f, boundary.fixed_dofs)
        c = compliance(f, u)
        u_el = u[dofs]
        elastic_energy = np.einsum("ei,ij,ej->e", u_el, ke, u_el)
        dc = -p * (e0 - e_min) * x ** (p - 1.0) * elastic_energy
        dc = np.asarray(h @ (x * dc)).ravel() / (np.maximum(x, 1e-3) * h_sum)

        x_new = _oc_update(x, dc, v_frac, state)
        change = float(np.max(np.abs(x_new - x)))
        x = x_new
        history.append(SimpRecord(it, c, float(x.mean()), change))
        if change < tol_x:
            break

    densities = np.zeros(grid.n_elements)
    densities[act_idx] = x
    state.densities = x
    return SimpResult(densities=densities, history=history)
