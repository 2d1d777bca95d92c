"""Simulator and verification harness for variable-density nematic
liquid crystal flow on the periodic box."""

from .fields import (
    Field,
    Grid,
    dealias,
    derivative,
    divergence,
    gradient,
    h_seminorm,
    integrate,
    laplacian,
    leray_project,
    lp_norm,
    to_physical,
    to_spectral,
)
from .model import (
    CorruptedStateError,
    Params,
    SimState,
    SimulationError,
    director_rhs,
    elastic_force,
    momentum_rhs,
    penalty_F,
    penalty_f,
)
from .transport import (
    Trajectory,
    advect_density,
    oscillation_probe,
    separation_check,
    trace_characteristic,
)
from .galerkin import (
    GalerkinSystem,
    StokesBasis,
    assemble_coefficients,
    build_basis,
    galerkin_rhs,
    integrate_reference,
    project_Pm,
)
from .stepper import StepFailureError, run, step, step_director, step_velocity
from .diagnostics import (
    EnergyReport,
    energy_law_residual,
    energy_report,
    gn_check,
    holder_modulus,
    ladyzhenskaya_fit,
    partition_of_unity,
    phi_functionals,
    twin_divergence,
)
from .scenarios import SCENARIOS, build_initial_state

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
