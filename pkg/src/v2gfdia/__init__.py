"""Desk-scale V2G coordination testbed with a stealthy data-fabrication
adversary, an anomaly detector, and a two-area frequency impact study."""

from .agc import AgcParams, AgcRunReport, AreaParams, integrate, scenario_2200
from .attack import (
    AttackConfig,
    Attacker,
    allowed_transitions,
    assign_targets,
    integerize_targets,
    map_to_measurements,
    plan_manipulation,
    transition_weights,
)
from .config import ConfigError, DispatchConfig, ScenarioConfig, load_config, save_config
from .detector import Alarm, DetectionConfig, check_aggregate, check_feasibility
from .essm import (
    ControlBroadcast,
    FeedbackSignal,
    FleetStats,
    SocGrid,
    aggregated_power,
    build_state_vector,
    build_transition_matrix,
    flexibility_bounds,
    make_feedback,
    p_ave,
    predict,
    state_index,
    to_broadcast,
)
from .fleet import (
    EvSession,
    EvSpec,
    EvStatus,
    Fleet,
    FleetParams,
    Measurement,
    Mode,
    apply_broadcast,
    collect_measurements,
    forced_charging_required,
    quantize_soc,
    sample_fleet,
    step_ev,
)
from .scenario import RunMetrics, compute_true_aggregates, export, mape, run_scenario

__version__ = "0.1.0"
