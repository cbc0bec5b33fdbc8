"""Activation-based online selection: prophet secretary policies, ratio certification, matching."""

from .hfunc import h_eval
from .instance import Instance, ValueAtom, derived_stats, gen_hard_instance, load_instance, parse_instance
from .ratio import GammaPoint, certify_grid, gamma_eval, optimize_betas

__all__ = [
    "Instance", "ValueAtom", "derived_stats", "gen_hard_instance", "load_instance", "parse_instance",
    "h_eval", "GammaPoint", "gamma_eval", "optimize_betas", "certify_grid",
]
