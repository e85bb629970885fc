"""Run artifacts: density rasters, delimited tables and rendered figures.

Everything textual is plain, header-documented and reproducible byte for
byte; figures are rendered next to the tables so a run directory can be
inspected without firing up a plotting tool.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.patches import Rectangle
from matplotlib.transforms import Affine2D
from scipy import ndimage

from .density import MaterialLayout, raw_density
from .geometry import BoundarySpec, Grid, gauss_points
from .material import PipelineConfig, apply_filter, filter_matrix, saturate
from .optimize import IterationRecord

HISTORY_COLUMNS = "iteration compliance vfrac mass_slack step_norm n_nodes"


def raster_points(grid: Grid, per_unit: int = 50):
    """Cell centers of a per_unit x per_unit sampling grid over the domain."""
    nxr = max(1, round(per_unit * grid.width))
    nyr = max(1, round(per_unit * grid.height))
    x0, y0 = grid.origin
    xs = x0 + (np.arange(nxr) + 0.5) * grid.width / nxr
    ys = y0 + (np.arange(nyr) + 0.5) * grid.height / nyr
    return xs, ys


def density_raster(layout: MaterialLayout, grid: Grid, pipeline: PipelineConfig,
                   per_unit: int = 50) -> np.ndarray:
    """Post-pipeline (pre-penalization) density on the sampling grid.

    The Gauss-point filter is a quadrature-level operator and is not applied
    to raster samples. Rows run from the top of the domain down (image
    convention), columns left to right.
    """
    xs, ys = raster_points(grid, per_unit)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    rho = raw_density(pts, layout)
    rho, _ = saturate(rho, pipeline)
    return rho.reshape(len(ys), len(xs))[::-1]


def simp_raster(densities: np.ndarray, grid: Grid, per_unit: int = 50) -> np.ndarray:
    """Element densities resampled on the same grid as density_raster."""
    xs, ys = raster_points(grid, per_unit)
    x0, y0 = grid.origin
    ix = np.minimum(((xs - x0) / grid.dx).astype(int), grid.nx - 1)
    iy = np.minimum(((ys - y0) / grid.dy).astype(int), grid.ny - 1)
    element = iy[:, None] + grid.ny * ix[None, :]
    return densities[element][::-1]


def write_matrix(path, values: np.ndarray, grid: Grid) -> None:
    x0, y0 = grid.origin
    with open(path, "w") as fh:
        fh.write("# density raster, dimensionless; rows top-down, columns left-right\n")
        fh.write(f"# extent: x in [{x0!r}, {x0 + grid.width!r}], "
                 f"y in [{y0!r}, {y0 + grid.height!r}]\n")
        fh.write(f"# shape: {values.shape[0]} rows x {values.shape[1]} columns\n")
        for row in values:
            fh.write(" ".join(f"{v:.9e}" for v in row) + "\n")


def write_history(path, records: list[IterationRecord]) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {HISTORY_COLUMNS}\n")
        for r in records:
            fh.write(f"{r.iteration} {r.compliance:.12e} {r.vfrac:.9e} "
                     f"{r.mass_slack:.9e} {r.step_norm:.9e} {r.n_nodes}\n")


def render_density_figure(path, values: np.ndarray, grid: Grid,
                          layout: MaterialLayout | None = None,
                          title: str = "density") -> None:
    """Grayscale density image, optionally overlaid with member outlines."""
    x0, y0 = grid.origin
    extent = (x0, x0 + grid.width, y0, y0 + grid.height)
    fig, ax = plt.subplots(figsize=(4.0, 4.0 * grid.height / grid.width + 0.5))
    ax.imshow(values, cmap="gray_r", vmin=0.0, vmax=max(1.0, float(values.max())),
              extent=extent, origin="upper", interpolation="nearest")
    if layout is not None:
        for node in layout.nodes:
            rect = Rectangle((node.x - node.lx / 2.0, node.y - node.ly / 2.0),
                             node.lx, node.ly, fill=False, linewidth=0.8,
                             edgecolor="tab:red")
            rect.set_transform(Affine2D().rotate_around(node.x, node.y, node.theta)
                               + ax.transData)
            ax.add_patch(rect)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_convergence_figure(path, records: list[IterationRecord]) -> None:
    iterations = [r.iteration for r in records]
    compliance = [r.compliance for r in records]
    vfrac = [r.vfrac for r in records]
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    ax.semilogy(iterations, compliance, color="tab:blue", lw=1.2)
    ax.set_xlabel("iteration")
    ax.set_ylabel("compliance", color="tab:blue")
    twin = ax.twinx()
    twin.plot(iterations, vfrac, color="tab:orange", lw=1.0)
    twin.set_ylabel("effective volume fraction", color="tab:orange")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def element_mean_density(layout: MaterialLayout, grid: Grid,
                         pipeline: PipelineConfig) -> np.ndarray:
    """Mean post-pipeline density of each element's Gauss points (0 where
    masked)."""
    points = gauss_points(grid)
    rho = raw_density(points.coords, layout)
    if pipeline.r_min > 0:
        rho = apply_filter(rho, filter_matrix(points, pipeline.r_min))
    rho, _ = saturate(rho, pipeline)
    per_element = rho.reshape(-1, 4).mean(axis=1)
    out = np.zeros(grid.n_elements)
    out[grid.active_element_indices()] = per_element
    return out


def load_path_connected(grid: Grid, boundary: BoundarySpec,
                        element_density: np.ndarray, threshold: float = 0.3) -> bool:
    """True if thresholding the element densities leaves one connected blob
    touching both the clamped boundary and the loaded node."""
    solid = (element_density >= threshold) & grid.active
    image = solid.reshape(grid.nx, grid.ny)
    labels, _ = ndimage.label(image)

    fixed_nodes = set(np.unique(np.asarray(boundary.fixed_dofs) // 2).tolist())
    load_nodes = {node for node, _, _ in boundary.loads}

    def labels_touching(nodes: set[int]) -> set[int]:
        found = set()
        for e in range(grid.n_elements):
            if not solid[e]:
                continue
            if nodes & set(grid.elements[e].tolist()):
                ix, iy = divmod(e, grid.ny)
                found.add(int(labels[ix, iy]))
        return found

    clamp_labels = labels_touching(fixed_nodes)
    load_labels = labels_touching(load_nodes)
    return bool(clamp_labels & load_labels)


def write_comparison(path, rows: list[dict]) -> None:
    """Comparison table: one row per run (method, compliance, time, vfrac)."""
    with open(path, "w") as fh:
        fh.write("# method final_compliance wall_time_s effective_vfrac\n")
        for row in rows:
            fh.write(f"{row['method']} {row['compliance']:.12e} "
                     f"{row['wall_time']:.3f} {row['vfrac']:.9e}\n")


def format_comparison(rows: list[dict]) -> str:
    lines = [f"{'method':<16} {'compliance':>16} {'wall time [s]':>14} {'vfrac':>10}"]
    for row in rows:
        lines.append(f"{row['method']:<16} {row['compliance']:>16.6e} "
                     f"{row['wall_time']:>14.3f} {row['vfrac']:>10.4f}")
    return "\n".join(lines)
