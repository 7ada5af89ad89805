"""Hypoelliptic SPDE toolkit: Taylor jets, stochastic flows, twin solvers and smoothness probes."""

__version__ = "0.1.0"

from .errors import InversionError, NumericalAbort, ValidationError
from .fields import Cutoff, ExprField, ScalarField, VectorFieldSet, lie_bracket
from .flow import BrownianPath, FlowState, integrate_flow, sample_path
from .grid import Grid, GridField, derivative, sobolev_norm
from .hormander import check_condition, generate_hull, rank_at
from .jetexpr import Jet, eval_jet, parse
from .pde import SpdeProblem, Trajectory, ito_wentzell_residual, solve_direct, solve_reduced
from .scenario import Scenario, load_scenario, parse_scenario

__all__ = [
    "BrownianPath",
    "Cutoff",
    "ExprField",
    "FlowState",
    "Grid",
    "GridField",
    "InversionError",
    "Jet",
    "NumericalAbort",
    "ScalarField",
    "Scenario",
    "SpdeProblem",
    "Trajectory",
    "ValidationError",
    "VectorFieldSet",
    "check_condition",
    "derivative",
    "eval_jet",
    "generate_hull",
    "integrate_flow",
    "ito_wentzell_residual",
    "lie_bracket",
    "load_scenario",
    "parse",
    "parse_scenario",
    "rank_at",
    "sample_path",
    "sobolev_norm",
    "solve_direct",
    "solve_reduced",
]
