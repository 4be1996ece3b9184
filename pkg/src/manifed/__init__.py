"""Federated optimization on Riemannian manifolds: manifold kernels, problem
suites, a federated simulation engine, reference solvers, and an experiment
harness."""

from .engine import (
    BatchSchedule,
    GradientStream,
    RunConfig,
    StepSchedule,
    TraceRecord,
    agent_local_round,
    aggregate_gradient_stream,
    aggregate_tangent_mean,
    check_stepsize_conditions,
    run_federated,
    stream_deviation_bound,
)
from .errors import (
    ContractError,
    DataFormatError,
    DomainError,
    FeasibilityError,
    ManifedError,
    ParameterError,
    RunError,
    UnsupportedOperation,
)
from .geometry import (
    DiagnosticsConfig,
    ManifoldKernel,
    Point,
    Tangent,
    check_retraction_first_order,
    check_transport_isometry,
    finite_difference_gradient,
    rng_for,
    tangent_basis,
)
from .harness import (
    ExperimentSpec,
    MetricReport,
    MetricRow,
    iterations_to_threshold,
    load_multitask_csv,
    nmse,
    read_trace_csv,
    run_experiment,
    subspace_distance,
    trace_filename,
    write_trace_csv,
)
from .manifolds import (
    EuclideanKernel,
    GrassmannKernel,
    SphereKernel,
    SpdKernel,
    StiefelKernel,
)
from .problems import (
    CfmSpdProblem,
    CpeSphProblem,
    FederatedProblem,
    MbcfStiProblem,
    MtflProblem,
    cfmspd_make,
    cpesph_make,
    load_problem,
    mbcfsti_make,
    mtfl_make,
    ridge_solve,
    save_problem,
)
from .solvers import SolverConfig, SolverResult, rsd_minimize

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
