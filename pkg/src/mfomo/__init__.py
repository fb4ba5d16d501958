"""Nash equilibria of finite-horizon mean-field games as a single bounded
optimization problem, with first-order solvers, an exact LCP route for linear
games and classical baselines for comparison.
"""
from ._kernels import BACKEND
from .baselines import BaselineConfig, fictitious_play, online_mirror_descent, run_baseline
from .errors import (
    CapExceededError,
    ConfigurationError,
    DivergenceError,
    MfomoError,
    ModelError,
    SolverInternalError,
    StructuralError,
    UnsupportedGameError,
)
from .experiment import ExperimentConfig, neighborhood_init, run_experiment
from .formulation import (
    ThetaPoint,
    extract_solution,
    gradient,
    objective,
    solution_modification,
    theorem4_constant,
    theta_bounds,
    warm_start,
)
from .game import GameModel, exploitability, propagate_flow, verify_nash
from .games import (
    congregation_game,
    CongregationGameParams,
    game_from_json,
    nash_construction,
    random_game,
    random_linear_game,
    sis_game,
    SisGameParams,
)
from .lcp import assemble_lcp, simplex_lp, solve_by_enumeration
from .mdp import FiniteMdp, policy_evaluation, value_iteration
from .optim import IterationRecord, SolverConfig, pgd, solve, spgd

__version__ = "0.1.0"
