"""Monte Carlo and numerical tools for the nested occupancy scheme in a stick-breaking environment."""

__version__ = "0.1.0"

from . import acceptance, clt_harness, env_stickbreak, limit_gauss, occupancy_tree, prw_branching, renewal_calc

from .env_stickbreak import GEM01, CaseA, CaseB, CaseC, FixedProbabilities, ProbabilityStream, WLaw, sample_w
from .errors import CapExceededError, ConfigError, DomainError, FactorizationError, NestedSieveError
from .occupancy_tree import allocate_children, k_n_s, occupancy_counts, rho_counts, rho_j, run_occupancy
from .prw_branching import UNIFORM_LAW, PerturbedWalkLaw, count_N_j, decomposition_terms, sample_prw_points
from .renewal_calc import Grid, RenewalTable, erlang_tail, law_constants, power_bounds, renewal_table

__all__ = [
    "acceptance", "clt_harness", "env_stickbreak", "limit_gauss", "occupancy_tree", "prw_branching", "renewal_calc",
    "GEM01", "CaseA", "CaseB", "CaseC", "FixedProbabilities", "ProbabilityStream", "WLaw", "sample_w",
    "CapExceededError", "ConfigError", "DomainError", "FactorizationError", "NestedSieveError",
    "allocate_children", "k_n_s", "occupancy_counts", "rho_counts", "rho_j", "run_occupancy",
    "UNIFORM_LAW", "PerturbedWalkLaw", "count_N_j", "decomposition_terms", "sample_prw_points",
    "Grid", "RenewalTable", "erlang_tail", "law_constants", "power_bounds", "renewal_table",
]
