"""DC operating-point solver with Bayesian-optimized pseudo-transient parameters."""

from .netlist import (
    Element,
    ElementKind,
    FeatureVector,
    Netlist,
    NetlistError,
    extract_features,
    parse_netlist,
    perturb_netlist,
    serialize_netlist,
)
from .mna import NrResult, newton_solve
from .cepta import (
    CeptaLimits,
    SimulationResult,
    SolverParams,
    run_cepta,
)

__version__ = "0.1.0"

__all__ = [
    "Element",
    "ElementKind",
    "FeatureVector",
    "Netlist",
    "NetlistError",
    "extract_features",
    "parse_netlist",
    "perturb_netlist",
    "serialize_netlist",
    "NrResult",
    "newton_solve",
    "CeptaLimits",
    "SimulationResult",
    "SolverParams",
    "run_cepta",
    "__version__",
]
