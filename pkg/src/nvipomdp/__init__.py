"""Neural value iteration for POMDPs with finite-network controllers."""

__version__ = "0.1.0"

from .controller import Fnc, Fsc, evaluate_policy, fnc_to_fsc, fnc_value
from .exact import PBVISolver, pbvi_solve
from .neural import AlphaNetRegressor, Mlp, TrainConfig
from .particles import ParticleBelief, particle_filter
from .pomdp import ExplicitDomain, ExplicitPomdp, GenerativeDomain
from .solver import NVISolver, SolverConfig, solve

__all__ = [
    "AlphaNetRegressor",
    "ExplicitDomain",
    "ExplicitPomdp",
    "Fnc",
    "Fsc",
    "GenerativeDomain",
    "Mlp",
    "NVISolver",
    "PBVISolver",
    "ParticleBelief",
    "SolverConfig",
    "TrainConfig",
    "__version__",
    "evaluate_policy",
    "fnc_to_fsc",
    "fnc_value",
    "particle_filter",
    "pbvi_solve",
    "solve",
]
