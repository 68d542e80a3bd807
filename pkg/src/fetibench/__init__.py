"""
Total-FETI and FETI-DP dual substructuring solvers for 2D elasticity.

The package builds regular subdomain partitions of structured Q4 meshes, forms
the dual interface problem of either method and solves it with projected
preconditioned conjugate gradients using single, fully orthogonalized or
rank-revealing simultaneous search directions.
"""
from .decomposition import build_constraints, build_partition, select_corners
from .errors import FetiError
from .fem import Material
from .operators import build_fetidp, build_tfeti
from .problems import (PRESETS, ProblemSpec, direct_oracle, grid3x3_layered, grid4x4_inclusion,
                       laminated_beam, mbb_modular_snapshot)
from .solvers import SolveOptions, solve

__version__ = "0.1.0"

__all__ = [
    "FetiError", "Material", "PRESETS", "ProblemSpec", "SolveOptions", "build_constraints",
    "build_fetidp", "build_partition", "build_tfeti", "direct_oracle", "grid3x3_layered",
    "grid4x4_inclusion", "laminated_beam", "mbb_modular_snapshot", "select_corners", "solve",
]
