"""Explicit 2D topology optimization with movable rectangular mass nodes.

Submodules (import them directly, e.g. ``from mntop import geometry``):

- geometry: structured quad meshes, Gauss points, test-case presets
- density:  mass-node components and the kernel density field
- material: density-to-modulus pipeline with derivative transport
- fem:      plane-stress assembly, solve, compliance and its gradient
- optimize: mass-constrained steepest descent
- recognize: member merging, suppression and beam export
- simp:     per-element baseline optimizer for comparisons
- report:   rasters, tables and figures
- config / cli: configuration files and the command line front end

Kept import-light on purpose: the CLI sets threading knobs before the
numerical stack loads.
"""

__version__ = "0.1.0"
