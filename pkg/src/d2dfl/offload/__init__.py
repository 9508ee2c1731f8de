"""Offloading optimizer: step problem, solver, feasibility audit and planner."""
from .feasibility import CONSTRAINTS, FeasibilityReport, Violation, check_feasibility, planned_inflow, transmit_energy
from .plan import OffloadPlan, export_plans_csv
from .planner import OffloadPlanner, active_link_rate, apply_plan, plan_horizon
from .solver import OffloadProblem, build_problem, solve_offload_step, solve_problem
from .state import OptState, surrogate_loss, update_gradient_scale
from .weights import PRESETS, ObjectiveWeights, preset

__all__ = [
    "CONSTRAINTS", "FeasibilityReport", "Violation", "check_feasibility", "planned_inflow",
    "transmit_energy", "OffloadPlan", "export_plans_csv", "OffloadPlanner", "active_link_rate",
    "apply_plan", "plan_horizon", "OffloadProblem", "build_problem", "solve_offload_step",
    "solve_problem", "OptState", "surrogate_loss", "update_gradient_scale", "PRESETS",
    "ObjectiveWeights", "preset",
]
