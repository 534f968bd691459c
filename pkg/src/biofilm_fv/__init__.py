"""Two-point flux finite volume solver for a degenerate-singular biofilm model."""

from .errors import (DataError, DomainError, InadmissibleMeshError, InvalidArgumentError,
                     InvariantViolation, MeshParseError, StepFailure)
from .harness import (ConvergenceConfig, ConvergenceTable, FlocConfig, InitialData,
                      connected_components, fit_slope, kappa_star, l1_error_vs_reference,
                      monitor_invariants, run_convergence_study, run_floc_experiment)
from .mesh import (Mesh, build_interval_mesh, build_triangular_mesh, generate_square_mesh,
                   read_mesh_file, validate_admissibility)
from .model import ModelParams, Nonlinearity
from .scheme import State, assemble_jacobian, assemble_residual, project_initial_data
from .solver import TimeControls, advance_adaptive, advance_fixed, newton_solve

__all__ = [
    "ConvergenceConfig", "ConvergenceTable", "DataError", "DomainError", "FlocConfig",
    "InadmissibleMeshError", "InitialData", "InvalidArgumentError", "InvariantViolation", "Mesh",
    "MeshParseError", "ModelParams", "Nonlinearity", "State", "StepFailure", "TimeControls",
    "advance_adaptive", "advance_fixed", "assemble_jacobian", "assemble_residual",
    "build_interval_mesh", "build_triangular_mesh", "connected_components", "fit_slope",
    "generate_square_mesh", "kappa_star", "l1_error_vs_reference", "monitor_invariants",
    "newton_solve", "project_initial_data", "read_mesh_file", "run_convergence_study",
    "run_floc_experiment", "validate_admissibility",
]
