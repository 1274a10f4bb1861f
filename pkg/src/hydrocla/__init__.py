"""hydrocla: loop-flows hydraulic simulation, least-squares state estimation,
and confidence-limit analysis for water distribution networks."""

from .cla import (
    BoundedMeasurementVector,
    ConfidenceLimits,
    EmResult,
    SensitivityMatrix,
    bounded_measurements,
    build_esm,
    cla_from_esm,
    em_confidence_limits,
    meter_placement_report,
    random_perturbation_check,
    state_vector,
)
from .errors import (
    HydroclaError,
    NotConnected,
    NotConverged,
    ParseError,
    RankDeficient,
    RootNotFixedHead,
    SingularMatrix,
    ValidationError,
)
from .estimator import EstimateResult, EstimatorState, adjust_demands, estimate
from .fixtures import fixture_path, load_fixture
from .hydraulics import (
    LinkHydraulics,
    head_loss_derivative,
    loop_residuals,
    pipe_head_loss,
    pump_head_gain,
)
from .network import (
    FixedHeadNode,
    FlowMeter,
    HeadMeter,
    MeasurementSet,
    Network,
    Node,
    Pipe,
    Pump,
    parse_measurements,
    parse_network,
    serialize_network,
    validate,
)
from .simulator import HydraulicState, SolverOptions, heads_from_flows, simulate
from .topology import TreeDecomposition, a_star_matrix, build_spanning_tree, initial_tree_flows

__version__ = "0.1.0"

__all__ = [
    "BoundedMeasurementVector",
    "ConfidenceLimits",
    "EmResult",
    "EstimateResult",
    "EstimatorState",
    "FixedHeadNode",
    "FlowMeter",
    "HeadMeter",
    "HydraulicState",
    "HydroclaError",
    "LinkHydraulics",
    "MeasurementSet",
    "Network",
    "Node",
    "NotConnected",
    "NotConverged",
    "ParseError",
    "Pipe",
    "Pump",
    "RankDeficient",
    "RootNotFixedHead",
    "SensitivityMatrix",
    "SingularMatrix",
    "SolverOptions",
    "TreeDecomposition",
    "ValidationError",
    "a_star_matrix",
    "adjust_demands",
    "bounded_measurements",
    "build_esm",
    "build_spanning_tree",
    "cla_from_esm",
    "em_confidence_limits",
    "estimate",
    "fixture_path",
    "head_loss_derivative",
    "heads_from_flows",
    "initial_tree_flows",
    "load_fixture",
    "loop_residuals",
    "meter_placement_report",
    "parse_measurements",
    "parse_network",
    "pipe_head_loss",
    "pump_head_gain",
    "random_perturbation_check",
    "serialize_network",
    "simulate",
    "state_vector",
    "validate",
]
