"""Transport-map representations of parametrised density families.

Construction: a boundary collar rearrangement composed with an interior
flow coupling, verified by pushforward checks and uniform parameter-
derivative probes; obstruction diagnostics via 1D sup-Wasserstein ratios
and observable-average smoothness.
"""

__version__ = "0.1.0"

from .collar import (
    BoundReport,
    CollarMap,
    Cutoff,
    build_collar_map,
    build_collar_rays,
    check_lemma_bound,
    pushed_density,
    solve_collar_g,
)
from .density import (
    AssumptionReport,
    DecayEnvelope,
    DensityFamily,
    ReferenceDensity,
    builtin_family,
    check_decay_assumptions,
    eval_density,
    family_from_expression,
    library_envelopes,
    make_envelope,
    make_reference,
    reference_from_profile,
)
from .diagnostics import (
    ExpectationReport,
    ObstructionReport,
    QuantileFunction,
    build_quantile,
    expectation_curve,
    lipschitz_obstruction,
    w_infinity_1d,
)
from .errors import (
    ConfigurationError,
    DegeneracyError,
    EvaluationDomainError,
    ExpressionSyntaxError,
    InfeasibilityError,
    IntegrationError,
    MassMismatchError,
    MoserTransportError,
    NoCollarError,
    ResolutionError,
    SolverError,
)
from .expressions import ExpressionAst, parse_density_expression
from .geometry import (
    Domain,
    Grid,
    collar_chart,
    collar_jacobian,
    cylinder_grid,
    default_grid,
    interval_grid,
    make_domain,
    torus_grid,
)
from .moser import (
    MoserMap,
    PotentialField,
    VelocityField,
    VelocityProvider,
    assemble_rhs,
    integrate_flow,
    moser_map,
    moser_map_from_values,
    solve_neumann_poisson,
    velocity_field,
)
from .transport import (
    CkReport,
    ConjugatedFamily,
    FloorScanReport,
    ParamDiffeo,
    QuantileTransport,
    RandomMapSample,
    TransportFamily,
    binned_target_2d,
    build_representation,
    ck_floor_scan,
    conjugate_family,
    estimate_uniform_Ck,
    make_x_grid,
    pushforward_density,
    pushforward_density_1d,
    pushforward_histogram_2d,
    sample_random_maps,
)

__all__ = [name for name in dir() if not name.startswith("_")]
