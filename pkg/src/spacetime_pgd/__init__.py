"""Low-rank space-time minimal-residual solvers for linear parabolic problems."""
from .assembly import MinResSystem, assemble_system, build_system, discretize, residual_l2
from .greedy import Diagnostics, LowRankSolution, SolverConfig, greedy_solve, xnorm_sq
from .problems import SeparatedParabolicProblem, get_problem, make_case1, make_case2, make_case3

__version__ = "0.1.0"
