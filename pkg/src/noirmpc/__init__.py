"""Boundary-flow MPC and conservation-law traffic simulation on road networks."""

from .graph import (
    NoirGraph,
    ValidationReport,
    Violation,
    generate_grid,
    load_noir,
    load_noir_file,
    make_graph,
    serialize_noir,
    validate,
)
from .mpc import BoundaryControl, MpcConfig, MpcInfeasibleError, MpcStepResult, build_constraints, build_cost, step
from .probability import (
    ProbabilityModel,
    TrafficState,
    compute_inflow,
    compute_outflow,
    initial_state,
    model_from_fractions,
    neumann_partial_inverse,
    sample,
)
from .qp import KktResiduals, QpProblem, QpSolution, check_kkt, solve
from .sim import (
    GridSpec,
    SimulationConfig,
    SimulationTrace,
    conservation_audit,
    detect_steady_state,
    run,
    run_open_loop,
    steady_state_index,
    trace_to_csv,
)
from .statespace import (
    PredictionModel,
    StateSpace,
    assemble,
    build_prediction,
    elementwise_propagate,
    propagate,
    spectral_radius,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryControl",
    "GridSpec",
    "KktResiduals",
    "MpcConfig",
    "MpcInfeasibleError",
    "MpcStepResult",
    "NoirGraph",
    "PredictionModel",
    "ProbabilityModel",
    "QpProblem",
    "QpSolution",
    "SimulationConfig",
    "SimulationTrace",
    "StateSpace",
    "TrafficState",
    "ValidationReport",
    "Violation",
    "assemble",
    "build_constraints",
    "build_cost",
    "build_prediction",
    "check_kkt",
    "compute_inflow",
    "compute_outflow",
    "conservation_audit",
    "detect_steady_state",
    "elementwise_propagate",
    "generate_grid",
    "initial_state",
    "load_noir",
    "load_noir_file",
    "make_graph",
    "model_from_fractions",
    "neumann_partial_inverse",
    "propagate",
    "run",
    "run_open_loop",
    "sample",
    "serialize_noir",
    "solve",
    "spectral_radius",
    "steady_state_index",
    "step",
    "trace_to_csv",
    "validate",
]
