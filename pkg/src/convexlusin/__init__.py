"""C^{1,1} convex extension of 1-jets, Lusin approximation of convex functions,
essential coercivity and smoothing of convex bodies, with certified mismatch
measures and brute-force oracles."""

from .jets import GridFunction, Jet1Set, JetUndefinedError
from .cw11 import InfeasibleJetError, check_condition_a, check_condition_b, local_schedule, minimal_M
from .envelope import biconjugate, extend_c11, legendre_1d
from .lusin import ResolutionError, build_C_sets, glue_partition, lusin_approximate
from .coercivity import coercivity_test, decompose, global_feasibility_gate
from .bodies import coarea_validate, contains_line, minkowski, smooth_body

__version__ = "0.1.0"

__all__ = [
    "GridFunction",
    "Jet1Set",
    "JetUndefinedError",
    "InfeasibleJetError",
    "ResolutionError",
    "check_condition_a",
    "check_condition_b",
    "minimal_M",
    "local_schedule",
    "legendre_1d",
    "biconjugate",
    "extend_c11",
    "lusin_approximate",
    "build_C_sets",
    "glue_partition",
    "coercivity_test",
    "decompose",
    "global_feasibility_gate",
    "minkowski",
    "smooth_body",
    "coarea_validate",
    "contains_line",
]
