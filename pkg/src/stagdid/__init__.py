"""Staggered difference-in-differences estimators and a Monte Carlo bias laboratory.

Modules
-------
panel      balanced panels, cohorts and event time
dgp        simulated staggered-adoption panels with known effects, presets
fe         fixed-effects engine, static / event-study TWFE, Sun-Abraham, ETWFE
impute     imputation (Borusyak-Jaravel-Spiess) and nuclear-norm matrix completion
grouptime  Callaway-Sant'Anna group-time ATTs, Bacon decomposition, placebo report
harness    replications, bias summaries and report files
"""

__version__ = "0.1.0"

from .dgp import (
    DistributedTiming,
    ScenarioConfig,
    TwoTiming,
    generate_panel,
    list_presets,
    load_preset,
    stream_seed,
    true_att,
)
from .errors import StagDidError
from .fe import (
    EventStudyCurve,
    Estimate,
    absorb_and_solve,
    etwfe,
    sun_abraham,
    twfe_event_study,
    twfe_static,
)
from .grouptime import aggregate_gt, att_gt, bacon_decompose, callaway_santanna, pretrend_report
from .harness import BenchPlan, emit_report, run_bench, run_estimator, run_replication
from .impute import McConfig, aggregate_effects, bjs, mc_effects, soft_impute
from .panel import PanelDataset, read_panel_csv, validate_panel, write_panel_csv

__all__ = [
    "BenchPlan",
    "DistributedTiming",
    "Estimate",
    "EventStudyCurve",
    "McConfig",
    "PanelDataset",
    "ScenarioConfig",
    "StagDidError",
    "TwoTiming",
    "absorb_and_solve",
    "aggregate_effects",
    "aggregate_gt",
    "att_gt",
    "bacon_decompose",
    "bjs",
    "callaway_santanna",
    "emit_report",
    "etwfe",
    "generate_panel",
    "list_presets",
    "load_preset",
    "mc_effects",
    "pretrend_report",
    "read_panel_csv",
    "run_bench",
    "run_estimator",
    "run_replication",
    "soft_impute",
    "stream_seed",
    "sun_abraham",
    "true_att",
    "twfe_event_study",
    "twfe_static",
    "validate_panel",
    "write_panel_csv",
]
