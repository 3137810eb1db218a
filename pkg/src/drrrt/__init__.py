"""Distributionally robust RRT with exact risk allocation for stochastic linear systems."""

from drrrt.dynamics import (
    MomentState,
    StochasticLinearSystem,
    SteeringResult,
    cost_to_go,
    double_integrator,
    lqr_steer,
    propagate_moments,
)
from drrrt.environment import (
    Environment,
    Halfspace,
    Obstacle,
    Polytope,
    mean_in_collision,
    obstacle_at,
    sample_free,
)
from drrrt.errors import ConfigurationError, ScenarioInfeasibleError, TreeFormatError
from drrrt.risk import (
    Budget,
    RiskLedger,
    check_g,
    check_h,
    dr_feasible,
    era_env_risk,
    era_obstacle_risk,
    exact_risk_allocation,
    residual_update,
    steering_budget,
    tightening_env,
    tightening_obstacle,
    uniform_risk_allocation,
)
from drrrt.planner import PlannerParams, PlanResult, Tree, TreeNode, audit_tree, expand, nearest_m_nodes, plan
from drrrt.scenario import dump_scenario, load_scenario

__version__ = "0.1.0"
