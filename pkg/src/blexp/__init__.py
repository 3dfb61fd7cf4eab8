"""blexp: construction and desk-scale verification of multi-layer steady
boundary-layer expansions for the 2D incompressible Navier-Stokes equations.

The package builds the expansion bottom-up (self-similar leading layer,
outer correctors, wall-layer correctors, cut-off final layer), assembles the
remainder forcing, runs the coupled trace/interior fixed point for the
remainder, and evaluates the weighted-norm diagnostics used to check the
construction's claims numerically.
"""

from .config import ExpansionConfig, load_config, parse_config, emit_config, save_config
from .grids import Grid1D, Grid2D, ScalarField2D

__all__ = [
    "ExpansionConfig",
    "load_config",
    "parse_config",
    "emit_config",
    "save_config",
    "Grid1D",
    "Grid2D",
    "ScalarField2D",
]

__version__ = "0.1.0"
