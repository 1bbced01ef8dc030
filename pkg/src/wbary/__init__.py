"""Exact Wasserstein barycenters of discrete measures on fixed supports.

The solver runs Douglas-Rachford splitting directly on the extensive
transport formulation: every iteration averages the per-measure plan
marginals into the barycenter estimate and corrects each plan column by an
exact simplex projection.  Inputs with unequal total masses are handled by
the same iteration through a finite penalty on the distance to the
balanced-plans subspace.  A small dense LP oracle certifies results at
desk scale.
"""

__version__ = "0.1.0"

from .measures import (
    CostTensor,
    DiscreteMeasure,
    InstanceError,
    ProblemInstance,
    SupportGrid,
    build_cost,
    build_instance,
    density,
    generate_nested_ellipses,
    grid_support,
    prune_zero_columns,
)
from .projections import (
    MultiPlan,
    averaging_weights,
    dist_balanced,
    project_balanced,
    project_simplex,
    project_simplex_sorted,
)
from .solver import (
    ConfigError,
    NumericFailure,
    RandomPartition,
    SolveReport,
    SolverConfig,
    initial_state,
    load_state,
    save_state,
    solve,
    step_damping,
    update_plan,
)
from .lp import (
    LPInfeasibleError,
    barycenter_objective,
    objective_gap,
    solve_barycenter_lp,
    solve_ot,
)
from .fileio import (
    load_image_as_measure,
    load_measure,
    load_measure_csv,
    read_pgm,
    save_measure_csv,
    write_pgm,
)

__all__ = [
    "CostTensor",
    "DiscreteMeasure",
    "InstanceError",
    "ProblemInstance",
    "SupportGrid",
    "build_cost",
    "build_instance",
    "density",
    "generate_nested_ellipses",
    "grid_support",
    "prune_zero_columns",
    "MultiPlan",
    "averaging_weights",
    "dist_balanced",
    "project_balanced",
    "project_simplex",
    "project_simplex_sorted",
    "ConfigError",
    "NumericFailure",
    "RandomPartition",
    "SolveReport",
    "SolverConfig",
    "initial_state",
    "load_state",
    "save_state",
    "solve",
    "step_damping",
    "update_plan",
    "LPInfeasibleError",
    "barycenter_objective",
    "objective_gap",
    "solve_barycenter_lp",
    "solve_ot",
    "load_image_as_measure",
    "load_measure",
    "load_measure_csv",
    "read_pgm",
    "save_measure_csv",
    "write_pgm",
    "__version__",
]
