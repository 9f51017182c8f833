"""Normalized ground states of a two-component mass-critical NLS system.

Modules:

- ``fields``: periodic grids, spectral calculus, rescaling, rearrangement
- ``ground_state``: the scalar Gagliardo-Nirenberg extremal Q by shooting
- ``energy``: the functional J, its gradient, multipliers and identities
- ``minimize``: constrained minimization, scans and structure checks
- ``dynamics``: split-step evolution, orbit distance, stability probes
- ``concentration``: blow-up rescaling toward the critical masses
"""

from .concentration import (
    ConcentrationRecord,
    concentration_run,
    epsilon_of,
    predicted_profile,
    rescale_to_unit,
)
from .dynamics import (
    EvolutionState,
    TrajectorySummary,
    evolve,
    orbit_distance,
    stability_probe,
    step,
)
from .energy import (
    MassConstraint,
    Multipliers,
    SystemParams,
    coupling,
    energy,
    extract_multipliers,
    gradient,
    pohozaev_residual,
    stationarity_residual,
)
from .errors import (
    CritmassError,
    DomainEscape,
    ExponentMismatch,
    InvalidParams,
    NoConvergence,
    NotConverged,
    NumericalBlowup,
    ZeroField,
    ZeroKinetic,
    ZeroMass,
)
from .fields import Field, FieldPair, Grid, load_field, save_field
from .ground_state import GroundStateQ, critical_masses, gn_deficit, rescaled_ground_state, solve_q
from .minimize import (
    MinimizeOptions,
    MinimizeResult,
    Status,
    check_minimizer_structure,
    divergence_family_energy,
    minimize,
    project_masses,
    scan_m,
)

__version__ = "0.1.0"
