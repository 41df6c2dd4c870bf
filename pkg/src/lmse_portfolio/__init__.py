"""Tracking-error portfolio optimization under leverage constraints.

The value function of a linear mean-square-error tracking problem is
solved backward in time by multiquadric RBF collocation; the optimal
weights come from a small quadratic program per wealth level, and the
resulting policy is evaluated by Monte Carlo simulation.
"""

from .config import ExperimentConfig
from .errors import BlowUpError, ConfigError, DomainError, IllConditionedError, QPConvergenceError
from .hjb import GridSpec, SolveReport, ValueSurface, solve_hjb, step_backward
from .market import AffineTarget, MarketParams, TabulatedTarget, artificial_market, empirical_market, pension_target
from .policy import Policy, optimal_weights, weight_grid
from .qp import QpProblem, QpSolution, brute_force_qp, solve_qp
from .simulate import Rebalance, SimConfig, SimStats, simulate

__version__ = "0.1.0"
