"""Configuration-driven command line: run, compare, recognize.

Heavy imports happen inside the handlers so --threads can cap the BLAS
pools before numpy loads.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mntop",
        description="Explicit topology optimization with movable rectangular "
                    "mass nodes, plus a SIMP baseline.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute one configured run")
    run.add_argument("--config", required=True,
                     help="config file path or bundled preset name (cantilever, lshape)")
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--threads", type=int, default=None, help="cap BLAS thread pools")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="run several configs on one mesh and tabulate")
    cmp_.add_argument("configs", nargs="+", help="two or more config files/presets")
    cmp_.add_argument("--out", default=None, help="output directory")
    cmp_.add_argument("--seed", type=int, default=None)
    cmp_.add_argument("--threads", type=int, default=None)
    cmp_.set_defaults(func=cmd_compare)

    rec = sub.add_parser("recognize", help="merge/suppress/export a saved layout")
    rec.add_argument("--layout", required=True, help="member table file")
    rec.add_argument("--config", required=True,
                     help="config providing the case, pipeline and tolerances")
    rec.add_argument("--out", default=None, help="output directory")
    rec.add_argument("--seed", type=int, default=None)
    rec.add_argument("--threads", type=int, default=None)
    rec.set_defaults(func=cmd_recognize)
    return parser


def _apply_threads(threads: int | None) -> None:
    if threads is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(threads)


def build_case(cfg):
    """Grid and boundary conditions for a parsed configuration."""
    import numpy as np

    from . import geometry

    g = cfg.geometry
    if cfg.case in (geometry.CANTILEVER, geometry.LSHAPE):
        return geometry.preset_case(cfg.case, g.elems_per_unit)
    origin = (0.0, 0.0)
    grid = geometry.build_grid(g.width, g.height, g.elems_per_unit, origin)
    if g.cut_xmin is not None:
        grid = geometry.apply_lshape_mask(grid, g.cut_xmin, g.cut_ymin)
    x0, y0 = grid.origin
    edges = {
        "left": np.abs(grid.nodes[:, 0] - x0) < 1e-12,
        "right": np.abs(grid.nodes[:, 0] - (x0 + grid.width)) < 1e-12,
        "bottom": np.abs(grid.nodes[:, 1] - y0) < 1e-12,
        "top": np.abs(grid.nodes[:, 1] - (y0 + grid.height)) < 1e-12,
    }
    clamped = np.flatnonzero(edges[g.clamp])
    fixed = np.sort(np.concatenate([2 * clamped, 2 * clamped + 1]))
    d2 = (grid.nodes[:, 0] - g.load_x) ** 2 + (grid.nodes[:, 1] - g.load_y) ** 2
    load_node = int(np.argmin(d2))
    bc = geometry.BoundarySpec(
        fixed_dofs=fixed,
        loads=((load_node, 0 if g.load_dir == "x" else 1, g.load_mag),))
    bc.validate(grid)
    return grid, bc


def _renumber(history, offset: int):
    from dataclasses import replace

    return [replace(rec, iteration=rec.iteration + offset) for rec in history]


def _run_mna(cfg, grid, bc, out: Path, timing: dict):
    from . import density, optimize, recognize, report

    layout0 = density.initialize_layout(
        grid, cfg.density.n_nodes, cfg.density.v_frac, cfg.density.kind,
        d_rho=cfg.density.d_rho, beta=cfg.density.beta)
    for message in optimize.check_discretization(layout0, grid):
        print(f"warning: {message}", file=sys.stderr)

    problem = optimize.problem_for(grid, bc, layout0, cfg.pipeline,
                                   cfg.density.v_frac, nu=cfg.nu)
    t0 = time.perf_counter()
    result = optimize.descend(problem, cfg.optimizer)
    timing["descent"] = time.perf_counter() - t0

    history = list(result.history)
    snapshots = list(result.snapshots)
    layout = result.layout
    assembly = None
    if cfg.method == "mna+recognize":
        t0 = time.perf_counter()
        layout, assembly = recognize.recognize_layout(
            result.layout, grid, bc, cfg.pipeline, cfg.recognize.tolerances,
            min_dim=cfg.recognize.suppress_min_dim,
            overlap_threshold=cfg.recognize.overlap_threshold,
            tol_c=cfg.optimizer.tol_c, nu=cfg.nu, extra_candidates=result.pinned)
        timing["recognition"] = time.perf_counter() - t0
        if cfg.recognize.reoptimize:
            t0 = time.perf_counter()
            polish = optimize.descend(
                optimize.problem_for(grid, bc, layout, cfg.pipeline,
                                     cfg.density.v_frac, nu=cfg.nu),
                cfg.optimizer)
            timing["reoptimize"] = time.perf_counter() - t0
            offset = history[-1].iteration + 1 if history else 0
            history += _renumber(polish.history, offset)
            snapshots += [(it + offset, snap) for it, snap in polish.snapshots]
            layout = polish.layout
            # node order survives the polish, so the merge provenance still applies
            provenance = [set(b.provenance) for b in assembly.members]
            assembly = recognize.flag_outside(
                recognize.export_beams(layout, provenance), grid)

    report.write_history(out / "history.txt", history)
    density.save_layout(out / "layout_final.txt", layout)
    for it, snap in snapshots:
        density.save_layout(out / f"layout_{it:06d}.txt", snap)
    raster = report.density_raster(layout, grid, cfg.pipeline, cfg.raster_per_unit)
    report.write_matrix(out / "density.txt", raster, grid)
    report.render_density_figure(out / "density.png", raster, grid, layout,
                                 title=f"{cfg.case} ({cfg.method})")
    report.render_convergence_figure(out / "convergence.png", history)
    if assembly is not None:
        recognize.save_beams_text(out / "beams.txt", assembly)
        recognize.save_beams_json(out / "beams.json", assembly)

    return {"method": cfg.method, "compliance": history[-1].compliance,
            "vfrac": history[-1].vfrac, "history": history,
            "n_members": layout.n_nodes}


def _run_simp(cfg, grid, bc, out: Path, timing: dict):
    from . import report, simp
    from .optimize import IterationRecord

    t0 = time.perf_counter()
    result = simp.simp_run(grid, bc, cfg.density.v_frac, p=cfg.simp.p,
                           r_min=cfg.simp.r_min, iter_max=cfg.simp.iter_max,
                           tol_x=cfg.simp.tol_x, e0=cfg.pipeline.e0,
                           e_min=cfg.pipeline.e_min, nu=cfg.nu,
                           move=cfg.simp.move, rho_floor=cfg.simp.rho_floor)
    timing["simp"] = time.perf_counter() - t0

    history = [IterationRecord(r.iteration, r.compliance, r.vfrac,
                               cfg.density.v_frac - r.vfrac, r.change,
                               grid.n_active)
               for r in result.history]
    report.write_history(out / "history.txt", history)
    raster = report.simp_raster(result.densities, grid, cfg.raster_per_unit)
    report.write_matrix(out / "density.txt", raster, grid)
    report.render_density_figure(out / "density.png", raster, grid,
                                 title=f"{cfg.case} (simp)")
    report.render_convergence_figure(out / "convergence.png", history)
    return {"method": "simp", "compliance": history[-1].compliance,
            "vfrac": history[-1].vfrac, "history": history,
            "n_members": grid.n_active}


def execute_run(cfg, out: Path) -> dict:
    """Run one configuration, writing every artifact under out."""
    from . import config as config_mod

    out.mkdir(parents=True, exist_ok=True)
    config_mod.write_manifest(out / "manifest.ini", cfg)
    grid, bc = build_case(cfg)
    timing: dict[str, float] = {}
    t0 = time.perf_counter()
    if cfg.method == "simp":
        summary = _run_simp(cfg, grid, bc, out, timing)
    else:
        summary = _run_mna(cfg, grid, bc, out, timing)
    summary["wall_time"] = time.perf_counter() - t0
    with open(out / "timing.txt", "w") as fh:
        fh.write("# phase seconds\n")
        for phase, seconds in timing.items():
            fh.write(f"{phase} {seconds:.3f}\n")
        fh.write(f"total {summary['wall_time']:.3f}\n")
    return summary


def _load_config(path_or_name: str, seed: int | None):
    from . import config as config_mod

    cfg = config_mod.parse_config(config_mod.resolve_preset(path_or_name))
    if seed is not None:
        cfg.seed = seed
    return cfg


def cmd_run(args) -> int:
    _apply_threads(args.threads)
    cfg = _load_config(args.config, args.seed)
    out = Path(args.out or cfg.out or f"runs/{cfg.case}_{cfg.method.replace('+', '_')}")
    summary = execute_run(cfg, out)
    hist = summary["history"]
    print(f"{cfg.case} [{summary['method']}]: compliance {hist[0].compliance:.6e} "
          f"-> {hist[-1].compliance:.6e} in {len(hist)} iterations, "
          f"vfrac {summary['vfrac']:.4f}, outputs in {out}")
    return 0


def _mesh_signature(cfg):
    g = cfg.geometry
    return (cfg.case, g.elems_per_unit, g.width, g.height, g.cut_xmin, g.cut_ymin)


def cmd_compare(args) -> int:
    _apply_threads(args.threads)
    from . import config as config_mod, report

    if len(args.configs) < 2:
        raise config_mod.ConfigError("compare needs at least two configs")
    configs = [_load_config(c, args.seed) for c in args.configs]
    signatures = {_mesh_signature(c) for c in configs}
    if len(signatures) > 1:
        raise config_mod.ConfigError(
            f"configs disagree on case/mesh: {sorted(signatures)}")
    out = Path(args.out or "runs/compare")
    rows = []
    for i, cfg in enumerate(configs):
        summary = execute_run(cfg, out / f"{i}_{cfg.method.replace('+', '_')}")
        rows.append(summary)
    report.write_comparison(out / "comparison.txt", rows)
    print(report.format_comparison(rows))
    return 0


def cmd_recognize(args) -> int:
    _apply_threads(args.threads)
    from . import density, recognize, report

    cfg = _load_config(args.config, args.seed)
    layout = density.load_layout(args.layout)
    out = Path(args.out or "runs/recognize")
    out.mkdir(parents=True, exist_ok=True)
    grid, bc = build_case(cfg)
    simplified, assembly = recognize.recognize_layout(
        layout, grid, bc, cfg.pipeline, cfg.recognize.tolerances,
        min_dim=cfg.recognize.suppress_min_dim,
        overlap_threshold=cfg.recognize.overlap_threshold,
        tol_c=cfg.optimizer.tol_c, nu=cfg.nu)
    density.save_layout(out / "layout_recognized.txt", simplified)
    recognize.save_beams_text(out / "beams.txt", assembly)
    recognize.save_beams_json(out / "beams.json", assembly)
    raster = report.density_raster(simplified, grid, cfg.pipeline, cfg.raster_per_unit)
    report.write_matrix(out / "density.txt", raster, grid)
    report.render_density_figure(out / "density.png", raster, grid, simplified,
                                 title="recognized assembly")
    print(f"{layout.n_nodes} nodes -> {simplified.n_nodes} members, "
          f"outputs in {out}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
