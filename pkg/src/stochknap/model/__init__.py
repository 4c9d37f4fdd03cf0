from .bnb import Solution, solve, solve_with_warm_start
from .ir import Cut, MilpModel, Pwl

__all__ = ["Cut", "MilpModel", "Pwl", "Solution", "solve", "solve_with_warm_start"]
