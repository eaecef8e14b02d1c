"""Max-flow via potential reduction on a two-sided logarithmic barrier."""

__version__ = "0.1.0"

from .config import SolverConfig, load_default_config
from .errors import SolverError
from .graph import Demand, Flow, Graph, build_graph, precondition

__all__ = [
    "SolverConfig",
    "load_default_config",
    "SolverError",
    "Graph",
    "Flow",
    "Demand",
    "build_graph",
    "precondition",
    "__version__",
]
