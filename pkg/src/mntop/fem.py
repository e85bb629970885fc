"""Plane-stress FEM: assembly, static solve, compliance and its gradient.

The mesh is uniform so a single set of four per-Gauss-point unit-modulus
element matrices serves every element; assembly scales them by the local
Young modulus. The compliance gradient is self-adjoint, so no extra solve
is needed beyond the equilibrium one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .geometry import GAUSS_2X2, BoundarySpec, Grid
from .material import FieldEvaluation

_CORNERS = np.array([(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)])


class SingularSystemError(RuntimeError):
    """The reduced stiffness matrix could not be factorized or solved."""


class StaleEvaluationError(RuntimeError):
    """Solution and field evaluation come from different layout revisions."""


def unit_element_stiffness(nu: float, dx: float, dy: float) -> np.ndarray:
    """Per-Gauss-point 8x8 element matrices for a unit Young modulus.

    Bilinear quad, plane stress, unit thickness. Each matrix already carries
    the Jacobian dx*dy/4, so summing the four gives the fully integrated
    element matrix and scaling each by the local modulus gives the
    Gauss-resolved assembly contribution.
    """
    if not 0 <= nu < 0.5:
        raise ValueError(f"Poisson ratio must lie in [0, 0.5), got {nu}")
    d = np.array([[1.0, nu, 0.0],
                  [nu, 1.0, 0.0],
                  [0.0, 0.0, (1.0 - nu) / 2.0]]) / (1.0 - nu * nu)
    det_j = dx * dy / 4.0
    ke = np.empty((4, 8, 8))
    for k, (xi, eta) in enumerate(GAUSS_2X2):
        dn_dxi = 0.25 * _CORNERS[:, 0] * (1.0 + _CORNERS[:, 1] * eta)
        dn_deta = 0.25 * _CORNERS[:, 1] * (1.0 + _CORNERS[:, 0] * xi)
        dn_dx = dn_dxi * 2.0 / dx
        dn_dy = dn_deta * 2.0 / dy
        b = np.zeros((3, 8))
        b[0, 0::2] = dn_dx
        b[1, 1::2] = dn_dy
        b[2, 0::2] = dn_dy
        b[2, 1::2] = dn_dx
        ke[k] = b.T @ d @ b * det_j
    return ke


def assemble(grid: Grid, young: np.ndarray, ke: np.ndarray) -> sp.csc_matrix:
    """Global stiffness from the per-Gauss-point modulus of active elements."""
    n_active = grid.n_active
    if young.shape != (4 * n_active,):
        raise ValueError(
            f"expected {4 * n_active} Gauss-point moduli, got {young.shape}")
    dofs = grid.element_dofs[grid.active]
    k_el = np.einsum("ek,kab->eab", young.reshape(n_active, 4), ke)
    i_k = np.repeat(dofs, 8, axis=1).ravel()
    j_k = np.tile(dofs, (1, 8)).ravel()
    k = sp.coo_matrix((k_el.ravel(), (i_k, j_k)),
                      shape=(grid.ndof, grid.ndof)).tocsc()
    return (k + k.T) * 0.5


def solve(k: sp.csc_matrix, f: np.ndarray, fixed_dofs: np.ndarray) -> np.ndarray:
    """Direct sparse solve of the constrained system; fixed dofs stay zero.

    Dofs without any stiffness (nodes of fully masked regions) are dropped
    from the reduced system; loading one of them is a singularity error.
    """
    ndof = k.shape[0]
    free = np.setdiff1d(np.arange(ndof), fixed_dofs)
    diag = k.diagonal()
    dangling = free[diag[free] == 0.0]
    if np.any(f[dangling] != 0.0):
        loaded = dangling[f[dangling] != 0.0]
        raise SingularSystemError(
            f"load applied to dofs {loaded.tolist()} which carry no stiffness")
    active = free[diag[free] != 0.0]
    if len(active) == 0:
        raise SingularSystemError("no unconstrained dofs with stiffness remain")

    k_ff = k[np.ix_(active, active)].tocsc()
    f_f = f[active]
    try:
        lu = splu(k_ff)
        u_f = lu.solve(f_f)
    except RuntimeError as exc:
        small = active[np.argsort(diag[active])[:4]]
        raise SingularSystemError(
            f"factorization failed ({exc}); smallest diagonal entries at dofs "
            f"{small.tolist()}") from exc
    f_norm = np.linalg.norm(f_f)
    if f_norm > 0:
        # normwise backward error; the plain |Ku-f|/|f| form is unattainable in
        # double precision once the void/solid contrast makes |u| >> |f|
        k_norm = float(np.abs(k_ff).sum(axis=0).max())

        def backward_error(u):
            return np.linalg.norm(k_ff @ u - f_f) / (k_norm * np.linalg.norm(u) + f_norm)

        residual = backward_error(u_f)
        for _ in range(4):
            if not np.isfinite(residual) or residual <= 1e-12:
                break
            refined = u_f + lu.solve(f_f - k_ff @ u_f)
            improved = backward_error(refined)
            if not improved < residual:
                break
            u_f, residual = refined, improved
        if not np.isfinite(residual) or residual > 1e-10:
            raise SingularSystemError(
                f"backward error {residual:.3e} exceeds 1e-10; system is "
                "numerically singular")
    u = np.zeros(ndof)
    u[active] = u_f
    return u


def compliance(f: np.ndarray, u: np.ndarray) -> float:
    """External work f . u (equals the strain energy u'Ku at equilibrium)."""
    return float(f @ u)


@dataclass(frozen=True)
class StaticSolution:
    u: np.ndarray
    compliance: float
    k: sp.csc_matrix
    layout_revision: int


def static_solve(grid: Grid, boundary: BoundarySpec, field: FieldEvaluation,
                 ke: np.ndarray) -> StaticSolution:
    """Assemble, solve and evaluate compliance for one field evaluation."""
    f = boundary.force_vector(grid.ndof)
    k = assemble(grid, field.young, ke)
    u = solve(k, f, boundary.fixed_dofs)
    return StaticSolution(u=u, compliance=compliance(f, u), k=k,
                          layout_revision=field.layout_revision)


def compliance_gradient(grid: Grid, solution: StaticSolution,
                        field: FieldEvaluation, ke: np.ndarray) -> np.ndarray:
    """d(compliance)/d(design variable) as an (n_nodes, 5) array.

    Uses -u' dK u with dK expanded per Gauss point through the sparse
    modulus-derivative table. Columns of variables that are not optimizable
    for a node's kind are identically zero.
    """
    if solution.layout_revision != field.layout_revision:
        raise StaleEvaluationError(
            f"solution is for layout revision {solution.layout_revision}, "
            f"field evaluation for {field.layout_revision}")
    u_el = solution.u[grid.element_dofs[grid.active]]
    energy = np.einsum("ei,kij,ej->ek", u_el, ke, u_el).ravel()
    grad = -(field.d_young.T @ energy)
    return np.asarray(grad).reshape(field.n_design_nodes, 5)
