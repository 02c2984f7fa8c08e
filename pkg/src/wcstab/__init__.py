"""Warped-compactification equations of motion, solvers and stability diagnostics."""

from .analysis import StabilityReport, lemma_identity_check, stability_report, volume_bound_check
from .errors import SolverError, ValidationError
from .manifold import Grid, dump_field, load_field
from .model import Configuration, ModelData, effective_potential, eom_residual, mass_squared
from .solvers import SolveOptions, continuation, inverse_data_solve, linearized_solve, newton_solve, solve_sub_super

__all__ = [
    "Configuration",
    "Grid",
    "ModelData",
    "SolveOptions",
    "SolverError",
    "StabilityReport",
    "ValidationError",
    "continuation",
    "dump_field",
    "effective_potential",
    "eom_residual",
    "inverse_data_solve",
    "lemma_identity_check",
    "linearized_solve",
    "load_field",
    "mass_squared",
    "newton_solve",
    "solve_sub_super",
    "stability_report",
    "volume_bound_check",
]
