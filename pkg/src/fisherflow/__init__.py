"""Fisher-information-regularized mean-field optimization toolkit (1D)."""

from .grid import (
    Grid1D,
    GridDensity,
    GridError,
    GridField,
    gaussian_density,
    gradient,
    integrate,
    laplacian,
    moment,
    normalize,
    wasserstein1,
)
from .functionals import (
    FreeEnergyModel,
    InitialCondition,
    ModelError,
    Params,
    entropy,
    first_order_residual,
    fisher_sqrt,
    free_energy,
    generalized_free_energy,
    harmonic_model,
    linear_derivative,
    relative_entropy,
    relative_fisher,
)
from .dynamics import (
    ConvergenceError,
    DomainError,
    DynamicsConfig,
    DynamicsState,
    EnergyTrace,
    NumericsError,
    StiffnessError,
    dissipation_check,
    evolve,
    exp_rate_report,
    solve_stationary,
    step,
)

__version__ = "0.1.0"
