"""Finite-horizon energy-storage control under a partially observed
regime-switching price.

The pipeline: filter the hidden regime from price observations
(`filtering`), solve the resulting degenerate HJB equation backward on a
grid (`hjb`), extract and smooth the buy/sell threshold surfaces with
admissibility checks (`barriers`), remove the policy's drift
discontinuity by a change of variables for accurate path simulation
(`sde_transform`), and estimate the policy value by Monte Carlo
(`evaluate`).  `cli` wires the stages into reproducible artifact runs.
"""

__version__ = "0.1.0"

from .barriers import (
    BarrierField,
    SmoothedBarriers,
    check_mixed_derivative,
    check_nonparallelity,
    classification_agreement,
    extract_barriers,
    smooth_barriers,
)
from .evaluate import (
    ControlledPath,
    EvaluationReport,
    SystemState,
    estimate_J,
    simulate_controlled_path,
)
from .filtering import (
    RegimePath,
    TruthFilterPaths,
    conditional_drift,
    filter_step,
    project_simplex,
    simulate_regime,
    simulate_truth_and_filter,
)
from .grid import Grid4D, Mode, PolicyField, ValueField
from .hjb import (
    SolverError,
    SolverOptions,
    backward_solve,
    mixed_derivative_field,
    pointwise_control,
)
from .params import (
    ModelParams,
    PRESETS,
    Seasonality,
    preset,
    rate_bounds,
    running_reward,
    seasonality,
    terminal_reward,
)
from .sde_transform import (
    DiscontinuousSdeSpec,
    StorageSystemSpecs,
    Surface,
    TransformError,
    TransformPath,
    TransformedState,
    g1,
    gk,
    invert_transform,
    simulate_transformed,
    simulate_transformed_batch,
    spec_from_config,
    storage_system_spec,
    transform,
    transform_jacobian,
    transformed_coefficients,
)

__all__ = [
    "__version__",
    "BarrierField",
    "SmoothedBarriers",
    "check_mixed_derivative",
    "check_nonparallelity",
    "classification_agreement",
    "extract_barriers",
    "smooth_barriers",
    "ControlledPath",
    "EvaluationReport",
    "SystemState",
    "estimate_J",
    "simulate_controlled_path",
    "RegimePath",
    "TruthFilterPaths",
    "conditional_drift",
    "filter_step",
    "project_simplex",
    "simulate_regime",
    "simulate_truth_and_filter",
    "Grid4D",
    "Mode",
    "PolicyField",
    "ValueField",
    "SolverError",
    "SolverOptions",
    "backward_solve",
    "mixed_derivative_field",
    "pointwise_control",
    "ModelParams",
    "PRESETS",
    "Seasonality",
    "preset",
    "rate_bounds",
    "running_reward",
    "seasonality",
    "terminal_reward",
    "DiscontinuousSdeSpec",
    "StorageSystemSpecs",
    "Surface",
    "TransformError",
    "TransformPath",
    "TransformedState",
    "g1",
    "gk",
    "invert_transform",
    "simulate_transformed",
    "simulate_transformed_batch",
    "spec_from_config",
    "storage_system_spec",
    "transform",
    "transform_jacobian",
    "transformed_coefficients",
]
