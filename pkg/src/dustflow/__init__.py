"""dustflow: pressureless, optionally self-gravitating fluids on a grid.

The model is a system of per-cell exchange ODEs parameterized by the cell
width: cells hand content to downwind neighbors at rate ``|u|/epsilon``.
Despite its simplicity the scheme keeps densities positive, obeys a velocity
maximum principle, conserves mass on a torus, transports delta-like
concentrations and vacuum regions without special casing, and satisfies the
weak form of the pressureless-gas equations up to residuals that vanish with
the cell size at measurable rates.  Self-gravity enters through a smoothed
Green-function convolution (cumulative integral in 1-d).
"""

from .grid import (
    DomainSpec,
    FluidState,
    PositivityError,
    SpeciesFields,
    Topology,
    VelocitySplit,
    recover_velocity,
    split_velocity,
)
from .transport import (
    RhsOutput,
    SpeciesRates,
    StepRejectedError,
    exact_transport_step_2d,
    rhs_1d,
    rhs_nd,
    transport_rhs,
)
from .gravity import (
    BoundaryMode,
    DegenerateMollifierError,
    GravityConfig,
    GravityField,
    apply_gravity_source,
    compute_field,
    grad_phi_1d,
    grad_phi_nd,
    gradient_bound,
    mollifier_kernel,
    mollify_density,
    velocity_bound_rate,
)
from .integrate import Integrator, RunResult, SolverConfig, choose_dt, run, step
from .verify import (
    ConvergenceTable,
    DiagnosticsRecord,
    ResidualReport,
    TestFunction,
    convergence_study,
    default_test_functions,
    initial_stats,
    monitor,
    product_bump,
    radial_bump,
    translated,
    weak_residual,
    write_convergence_csv,
)
from .nbody import (
    Body,
    BodyTrajectory,
    SingularityError,
    Softening,
    bodies_to_fields,
    extract_bodies,
    integrate_bodies,
    nbody_rhs,
    read_bodies_csv,
    rk4_body_step,
    write_bodies_csv,
)
from .scenarios import (
    DEFAULTS,
    DEFAULT_T_END,
    ScenarioName,
    ScenarioSpec,
    build_scenario,
    mollify_initial,
    scenario_domain,
)
from .snapshots import (
    Snapshot,
    SnapshotFormatError,
    export_snapshot_csv,
    read_snapshot,
    write_snapshot,
)

__version__ = "0.1.0"
