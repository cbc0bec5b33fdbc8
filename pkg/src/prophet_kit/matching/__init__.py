from .algorithms import car_run, hybrid_run, mam_run
from .bounds import car_alpha, gamma_car, gamma_mam, hybrid_bound_check
from .overlap import overlap_mu
from .model import (MatchingInstance, TypeGraph, brute_force_marginals, brute_force_offline, check_lp,
                    normalize_regular, parse_matching)

__all__ = [
    "TypeGraph", "MatchingInstance", "check_lp", "normalize_regular", "parse_matching",
    "brute_force_offline", "brute_force_marginals", "overlap_mu", "mam_run", "car_run", "hybrid_run",
    "gamma_mam", "gamma_car", "car_alpha", "hybrid_bound_check",
]
