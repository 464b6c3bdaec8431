"""Order-of-play trajectory games: tree search over play orders with a
sequential trajectory-planning subgame solver, plus a receding-horizon
simulation harness and baselines.
"""

from .bnp import (
    BnpOptions,
    BnpResult,
    Exploration,
    SearchNode,
    SearchStats,
    WarmstartData,
    branch_and_play,
    make_warmstart,
    max_tree_size,
)
from .costs import CostWeights, social_cost, surrogate_total_cost
from .harness import Metrics, Planner, TrialConfig, aggregate, brute_force_order, fcfs_order, run_trial, sample_scenario
from .stp import SolveCache, pairwise_collision_free, solve_stp
from .trajopt import IlqrOptions, InitStrategy, safety_filter, solve_single_agent
from .types import (
    AgentControl,
    AgentState,
    CapExceededError,
    FilterFailedError,
    IncompletePermutation,
    InfeasibleError,
    JointState,
    NonFiniteError,
    OrderPlayError,
    Permutation,
    Policy,
    SamplingFailedError,
    Scenario,
    SubgameSolution,
    Trajectory,
    UnassignedMode,
)

__version__ = "0.1.0"
