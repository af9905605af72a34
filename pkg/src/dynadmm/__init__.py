"""Multiblock proximal ADMM for optimization under discrete-dynamics constraints."""

__version__ = "0.1.0"

from .admm import (AdmmParams, AdmmState, block_subproblem_assemble, dual_update, initial_state,
                   solve, sweep_forward, sweep_reverse)
from .adjoint import OptimizerOptions, adjoint_gradient, lbfgs, polak_ribiere_cg, reduced_objective
from .control import sweep_control
from .diagnostics import (IterationRecord, RunManifest, rate_report, read_csv, write_csv,
                          write_svg)
from .errors import (ConfigurationError, DimensionError, DynAdmmError, NewtonError,
                     NonFiniteError, ParameterError, SubsolverError, TuningError,
                     UnsupportedShapeError)
from .lagrangian import (augmented_lagrangian_completed, augmented_lagrangian_value,
                         kkt_residual, lagrangian_value, lyapunov_value)
from .problem import (ControlledMap, ControlledProblem, ControlTerm, DynamicsMap,
                      DynamicsProblem, ObjectiveTerm, Shape, constraint_residuals,
                      evaluate_objective, feasibility_rollout)
from .tuning import (SmoothnessConstants, choose_penalties, constants_table, estimate_constants)

__all__ = [
    "AdmmParams", "AdmmState", "block_subproblem_assemble", "dual_update", "initial_state",
    "solve", "sweep_forward", "sweep_reverse", "sweep_control",
    "OptimizerOptions", "adjoint_gradient", "lbfgs", "polak_ribiere_cg", "reduced_objective",
    "IterationRecord", "RunManifest", "rate_report", "read_csv", "write_csv", "write_svg",
    "ConfigurationError", "DimensionError", "DynAdmmError", "NewtonError", "NonFiniteError",
    "ParameterError", "SubsolverError", "TuningError", "UnsupportedShapeError",
    "augmented_lagrangian_completed", "augmented_lagrangian_value", "kkt_residual",
    "lagrangian_value", "lyapunov_value",
    "ControlledMap", "ControlledProblem", "ControlTerm", "DynamicsMap", "DynamicsProblem",
    "ObjectiveTerm", "Shape", "constraint_residuals", "evaluate_objective",
    "feasibility_rollout",
    "SmoothnessConstants", "choose_penalties", "constants_table", "estimate_constants",
]
