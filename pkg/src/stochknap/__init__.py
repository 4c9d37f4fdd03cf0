"""Stochastic knapsack toolkit: piecewise-linear MILP models, lazy cuts, SAA and dynamic policies."""

from .instances import GeneratorConfig, Instance, generate, reference_instance
from .loss import LossLinearization, minimax_partition, select_segments
from .sim import SampleStream, SimReport
from .sskp_lc import solve_lc
from .sskp_pwl import BracketResult, solve_bracket

__version__ = "0.1.0"

__all__ = [
    "BracketResult", "GeneratorConfig", "Instance", "LossLinearization", "SampleStream",
    "SimReport", "generate", "minimax_partition", "reference_instance", "select_segments",
    "solve_bracket", "solve_lc",
]
