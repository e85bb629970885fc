"""Run configuration: a flat INI file with one section per module.

Every parameter of the bundled test cases is reachable by name here, the
parser rejects unknown keys, and validation reports every violation at
once. A resolved configuration can be echoed back out as a manifest that
reparses to the identical run.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .density import NodeKind, default_beta
from .material import ASYMPTOTIC, FLOOR_DENSITY, FLOOR_YOUNG, SMOOTH_CLAMP, PipelineConfig
from .optimize import OptimizerConfig
from .recognize import MergeTolerances

METHODS = ("mna", "simp", "mna+recognize")
CASES = ("cantilever", "lshape", "custom")
CLAMP_EDGES = ("left", "right", "top", "bottom")


class ConfigError(ValueError):
    """Invalid run configuration; the message lists every violation."""


@dataclass
class GeometryConfig:
    elems_per_unit: int = 10
    width: float = 1.0
    height: float = 1.0
    cut_xmin: float | None = None
    cut_ymin: float | None = None
    clamp: str = "left"
    load_x: float = 1.0
    load_y: float = 0.0
    load_dir: str = "y"
    load_mag: float = -1.0
    gauss_per_element: int = 4
    shape_degree: int = 1


@dataclass
class DensityConfig:
    n_nodes: int = 4
    v_frac: float = 0.33
    d_rho: float = 1.5
    beta: float | None = None
    kind: NodeKind = NodeKind.DEFORMABLE_MEMBER

    def resolved_beta(self) -> float:
        return self.beta if self.beta is not None else default_beta(self.d_rho)


@dataclass
class RecognizeConfig:
    tolerances: MergeTolerances = field(default_factory=MergeTolerances)
    suppress_min_dim: float | None = None
    overlap_threshold: float = 0.05
    reoptimize: bool = True


@dataclass
class SimpConfig:
    p: float = 3.0
    r_min: float | None = None
    iter_max: int = 1000
    tol_x: float = 0.01
    move: float = 0.2
    rho_floor: float = 1e-3


@dataclass
class RunConfig:
    case: str = "cantilever"
    method: str = "mna"
    seed: int = 0
    raster_per_unit: int = 50
    out: str | None = None
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    density: DensityConfig = field(default_factory=DensityConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    nu: float = 0.3
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    recognize: RecognizeConfig = field(default_factory=RecognizeConfig)
    simp: SimpConfig = field(default_factory=SimpConfig)


_SCHEMA = {
    "run": {"case", "method", "seed", "raster_per_unit", "out"},
    "geometry": {"elems_per_unit", "width", "height", "cut_xmin", "cut_ymin",
                 "clamp", "load_x", "load_y", "load_dir", "load_mag",
                 "gauss_per_element", "shape_degree"},
    "density": {"n_nodes", "v_frac", "d_rho", "beta", "kind"},
    "material": {"rho_max", "use_saturation", "saturation_mode", "r_min",
                 "e0", "e_min", "rho_min", "floor", "p", "nu"},
    "optimize": {"iter_max", "tol_c", "tol_x", "tol_m", "max_step_norm",
                 "step_shrink", "min_dim", "eta0", "continuation",
                 "snapshot_every", "recognize_every"},
    "recognize": {"tol_theta_deg", "tol_l", "tol_d", "r_rho", "tol_l_absolute",
                  "suppress_min_dim", "overlap_threshold", "reoptimize"},
    "simp": {"p", "r_min", "iter_max", "tol_x", "move", "rho_floor"},
}

_BOOLEANS = {"true": True, "false": False, "yes": True, "no": False,
             "1": True, "0": False, "on": True, "off": False}


class _Reader:
    """Typed access into the parsed file, collecting errors instead of raising."""

    def __init__(self, parser: configparser.ConfigParser):
        self.parser = parser
        self.errors: list[str] = []

    def _raw(self, section: str, key: str):
        if self.parser.has_option(section, key):
            value = self.parser.get(section, key).strip()
            return value if value else None
        return None

    def get(self, section, key, kind, default, check=None, describe=""):
        raw = self._raw(section, key)
        if raw is None:
            return default
        try:
            if kind is bool:
                value = _BOOLEANS[raw.lower()]
            elif kind is str:
                value = raw
            else:
                value = kind(raw)
        except (ValueError, KeyError):
            self.errors.append(f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}")
            return default
        if check is not None and not check(value):
            self.errors.append(f"[{section}] {key} = {raw}: {describe}")
            return default
        return value


def parse_config(path) -> RunConfig:
    """Parse and fully validate a run configuration file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(str(path))
    if not read:
        raise ConfigError(f"cannot read config file {path}")

    errors: list[str] = []
    for section in parser.sections():
        if section not in _SCHEMA:
            errors.append(f"unknown section [{section}]")
            continue
        for key in parser.options(section):
            if key not in _SCHEMA[section]:
                errors.append(f"unknown key {key!r} in section [{section}]")

    r = _Reader(parser)
    positive = lambda v: v > 0
    non_negative = lambda v: v >= 0

    case = r.get("run", "case", str, "cantilever",
                 lambda v: v in CASES, f"must be one of {CASES}")
    method = r.get("run", "method", str, "mna",
                   lambda v: v in METHODS, f"must be one of {METHODS}")
    seed = r.get("run", "seed", int, 0, non_negative, "must be >= 0")
    raster = r.get("run", "raster_per_unit", int, 50, positive, "must be positive")
    out = r.get("run", "out", str, None)

    geometry = GeometryConfig(
        elems_per_unit=r.get("geometry", "elems_per_unit", int, 10, positive,
                             "must be positive"),
        width=r.get("geometry", "width", float, 1.0, positive, "must be positive"),
        height=r.get("geometry", "height", float,
                     2.0 if case == "cantilever" else 1.0, positive, "must be positive"),
        cut_xmin=r.get("geometry", "cut_xmin", float, None),
        cut_ymin=r.get("geometry", "cut_ymin", float, None),
        clamp=r.get("geometry", "clamp", str, "left",
                    lambda v: v in CLAMP_EDGES, f"must be one of {CLAMP_EDGES}"),
        load_x=r.get("geometry", "load_x", float, 1.0),
        load_y=r.get("geometry", "load_y", float, 0.0),
        load_dir=r.get("geometry", "load_dir", str, "y",
                       lambda v: v in ("x", "y"), "must be x or y"),
        load_mag=r.get("geometry", "load_mag", float, -1.0),
        gauss_per_element=r.get("geometry", "gauss_per_element", int, 4,
                                lambda v: v == 4, "only the 2x2 rule is supported"),
        shape_degree=r.get("geometry", "shape_degree", int, 1,
                           lambda v: v == 1, "only bilinear elements are supported"),
    )

    density = DensityConfig(
        n_nodes=r.get("density", "n_nodes", int, 4, positive, "must be positive"),
        v_frac=r.get("density", "v_frac", float, 0.33,
                     lambda v: 0 < v <= 1, "must lie in (0, 1]"),
        d_rho=r.get("density", "d_rho", float, 1.5, lambda v: v >= 1, "must be >= 1"),
        beta=r.get("density", "beta", float, None, positive, "must be positive"),
        kind=NodeKind(r.get("density", "kind", str, "deformable_member",
                            lambda v: v in [k.value for k in NodeKind],
                            f"must be one of {[k.value for k in NodeKind]}")),
    )

    try:
        pipeline = PipelineConfig(
            rho_max=r.get("material", "rho_max", float, 1.2),
            use_saturation=r.get("material", "use_saturation", bool, True),
            saturation_mode=r.get("material", "saturation_mode", str, SMOOTH_CLAMP,
                                  lambda v: v in (SMOOTH_CLAMP, ASYMPTOTIC),
                                  f"must be {SMOOTH_CLAMP} or {ASYMPTOTIC}"),
            r_min=r.get("material", "r_min", float, 0.0),
            e0=r.get("material", "e0", float, 1.0),
            e_min=r.get("material", "e_min", float, 1e-9),
            rho_min=r.get("material", "rho_min", float, 1e-3),
            floor=r.get("material", "floor", str, FLOOR_YOUNG,
                        lambda v: v in (FLOOR_YOUNG, FLOOR_DENSITY),
                        f"must be {FLOOR_YOUNG} or {FLOOR_DENSITY}"),
            p=r.get("material", "p", float, 3.0),
        )
    except ValueError as exc:
        errors.append(f"[material] {exc}")
        pipeline = PipelineConfig()
    nu = r.get("material", "nu", float, 0.3,
               lambda v: 0 <= v < 0.5, "must lie in [0, 0.5)")

    min_dim = r.get("optimize", "min_dim", float, None, positive, "must be positive")
    try:
        optimizer = OptimizerConfig(
            iter_max=r.get("optimize", "iter_max", int, 1000, positive,
                           "must be positive"),
            tol_c=r.get("optimize", "tol_c", float, 1e-6),
            tol_x=r.get("optimize", "tol_x", float, 1e-6),
            tol_m=r.get("optimize", "tol_m", float, 1e-6),
            max_step_norm=r.get("optimize", "max_step_norm", float, 0.4),
            step_shrink=r.get("optimize", "step_shrink", float, 0.5),
            min_dims=(min_dim, min_dim) if min_dim is not None else None,
            eta0=r.get("optimize", "eta0", float, None, positive, "must be positive"),
            continuation=r.get("optimize", "continuation", bool, True),
            snapshot_every=r.get("optimize", "snapshot_every", int, 10,
                                 non_negative, "must be >= 0"),
            recognize_every=r.get("optimize", "recognize_every", int, 0,
                                  non_negative, "must be >= 0"),
        )
    except ValueError as exc:
        errors.append(f"[optimize] {exc}")
        optimizer = OptimizerConfig()

    try:
        tolerances = MergeTolerances(
            tol_theta=math.radians(r.get("recognize", "tol_theta_deg", float, 5.0)),
            tol_l=r.get("recognize", "tol_l", float, 0.25),
            tol_d=r.get("recognize", "tol_d", float, 0.1),
            r_rho=r.get("recognize", "r_rho", float, 0.37),
            tol_l_absolute=r.get("recognize", "tol_l_absolute", bool, False),
        )
    except ValueError as exc:
        errors.append(f"[recognize] {exc}")
        tolerances = MergeTolerances()
    recognize = RecognizeConfig(
        tolerances=tolerances,
        suppress_min_dim=r.get("recognize", "suppress_min_dim", float, None,
                               positive, "must be positive"),
        overlap_threshold=r.get("recognize", "overlap_threshold", float, 0.05,
                                lambda v: 0 <= v <= 1, "must lie in [0, 1]"),
        reoptimize=r.get("recognize", "reoptimize", bool, True),
    )

    simp = SimpConfig(
        p=r.get("simp", "p", float, 3.0, lambda v: v >= 1, "must be >= 1"),
        r_min=r.get("simp", "r_min", float, None, non_negative, "must be >= 0"),
        iter_max=r.get("simp", "iter_max", int, 1000, positive, "must be positive"),
        tol_x=r.get("simp", "tol_x", float, 0.01, positive, "must be positive"),
        move=r.get("simp", "move", float, 0.2, positive, "must be positive"),
        rho_floor=r.get("simp", "rho_floor", float, 1e-3,
                        lambda v: 0 < v < 1, "must lie in (0, 1)"),
    )

    errors.extend(r.errors)
    if case == "custom" and geometry.cut_xmin is not None and geometry.cut_ymin is None:
        errors.append("[geometry] cut_xmin set without cut_ymin")
    if case == "custom" and geometry.cut_ymin is not None and geometry.cut_xmin is None:
        errors.append("[geometry] cut_ymin set without cut_xmin")
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))

    return RunConfig(case=case, method=method, seed=seed, raster_per_unit=raster,
                     out=out, geometry=geometry, density=density, pipeline=pipeline,
                     nu=nu, optimizer=optimizer, recognize=recognize, simp=simp)


def resolve_preset(name_or_path: str) -> Path:
    """Map a bundled preset name (cantilever, lshape) or a path to a file."""
    path = Path(name_or_path)
    if path.exists():
        return path
    candidate = resources.files("mntop").joinpath(f"presets/{name_or_path}.ini")
    if candidate.is_file():
        return Path(str(candidate))
    raise ConfigError(f"no such config file or bundled preset: {name_or_path}")


def write_manifest(path, cfg: RunConfig) -> None:
    """Echo the fully resolved configuration; reparses to the same run."""
    opt = cfg.optimizer
    tol = cfg.recognize.tolerances
    lines = [
        "[run]",
        f"case = {cfg.case}",
        f"method = {cfg.method}",
        f"seed = {cfg.seed}",
        f"raster_per_unit = {cfg.raster_per_unit}",
        "",
        "[geometry]",
        f"elems_per_unit = {cfg.geometry.elems_per_unit}",
        f"width = {cfg.geometry.width!r}",
        f"height = {cfg.geometry.height!r}",
        f"clamp = {cfg.geometry.clamp}",
        f"load_x = {cfg.geometry.load_x!r}",
        f"load_y = {cfg.geometry.load_y!r}",
        f"load_dir = {cfg.geometry.load_dir}",
        f"load_mag = {cfg.geometry.load_mag!r}",
        f"gauss_per_element = {cfg.geometry.gauss_per_element}",
        f"shape_degree = {cfg.geometry.shape_degree}",
    ]
    if cfg.geometry.cut_xmin is not None:
        lines.append(f"cut_xmin = {cfg.geometry.cut_xmin!r}")
        lines.append(f"cut_ymin = {cfg.geometry.cut_ymin!r}")
    lines += [
        "",
        "[density]",
        f"n_nodes = {cfg.density.n_nodes}",
        f"v_frac = {cfg.density.v_frac!r}",
        f"d_rho = {cfg.density.d_rho!r}",
        f"beta = {cfg.density.resolved_beta()!r}",
        f"kind = {cfg.density.kind.value}",
        "",
        "[material]",
        f"rho_max = {cfg.pipeline.rho_max!r}",
        f"use_saturation = {str(cfg.pipeline.use_saturation).lower()}",
        f"saturation_mode = {cfg.pipeline.saturation_mode}",
        f"r_min = {cfg.pipeline.r_min!r}",
        f"e0 = {cfg.pipeline.e0!r}",
        f"e_min = {cfg.pipeline.e_min!r}",
        f"rho_min = {cfg.pipeline.rho_min!r}",
        f"floor = {cfg.pipeline.floor}",
        f"p = {cfg.pipeline.p!r}",
        f"nu = {cfg.nu!r}",
        "",
        "[optimize]",
        f"iter_max = {opt.iter_max}",
        f"tol_c = {opt.tol_c!r}",
        f"tol_x = {opt.tol_x!r}",
        f"tol_m = {opt.tol_m!r}",
        f"max_step_norm = {opt.max_step_norm!r}",
        f"step_shrink = {opt.step_shrink!r}",
        f"continuation = {str(opt.continuation).lower()}",
        f"snapshot_every = {opt.snapshot_every}",
        f"recognize_every = {opt.recognize_every}",
    ]
    if opt.min_dims is not None:
        lines.append(f"min_dim = {opt.min_dims[0]!r}")
    if opt.eta0 is not None:
        lines.append(f"eta0 = {opt.eta0!r}")
    lines += [
        "",
        "[recognize]",
        f"tol_theta_deg = {math.degrees(tol.tol_theta)!r}",
        f"tol_l = {tol.tol_l!r}",
        f"tol_d = {tol.tol_d!r}",
        f"r_rho = {tol.r_rho!r}",
        f"tol_l_absolute = {str(tol.tol_l_absolute).lower()}",
        f"overlap_threshold = {cfg.recognize.overlap_threshold!r}",
        f"reoptimize = {str(cfg.recognize.reoptimize).lower()}",
    ]
    if cfg.recognize.suppress_min_dim is not None:
        lines.append(f"suppress_min_dim = {cfg.recognize.suppress_min_dim!r}")
    lines += [
        "",
        "[simp]",
        f"p = {cfg.simp.p!r}",
        f"iter_max = {cfg.simp.iter_max}",
        f"tol_x = {cfg.simp.tol_x!r}",
        f"move = {cfg.simp.move!r}",
        f"rho_floor = {cfg.simp.rho_floor!r}",
    ]
    if cfg.simp.r_min is not None:
        lines.append(f"r_min = {cfg.simp.r_min!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
