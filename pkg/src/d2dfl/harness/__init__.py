"""Experiment configs, runs, sweeps and artifact writing."""
from .config import SAMPLERS, ExperimentConfig, dump_config, load_config
from .experiment import (BASELINES, ExperimentResult, PlannerTrace, SweepRow, aggregations_to_threshold,
                         choose_sampled, feddrop_accounting, instance_config, planner_trace, run_experiment,
                         sweep, write_outputs, write_sweep_csv)

__all__ = [
    "SAMPLERS", "ExperimentConfig", "dump_config", "load_config", "BASELINES", "ExperimentResult",
    "PlannerTrace", "SweepRow", "aggregations_to_threshold", "choose_sampled", "feddrop_accounting",
    "instance_config", "planner_trace", "run_experiment", "sweep", "write_outputs", "write_sweep_csv",
]
