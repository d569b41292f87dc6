"""Distributed event-based state estimation and control over a broadcast bus.

Multiple sensor-actuator agents estimate the full state of a shared linear
process, exchanging measurements and inputs only when local event triggers
deem them necessary, while emulating a centralized observer design up to
verifiable bounds.  The package simulates the complete networked system
deterministically and checks the associated stability certificates.
"""

from .agent import AgentCore, agent_step, sync_average_apply
from .analysis import (
    DecayEnvelope,
    DiagnosticsTrace,
    LyapunovCertificate,
    common_lyapunov_check,
    diagnostics_from_trace,
    emulation_error_bound,
    fit_decay_envelope,
    input_bound_check,
    tradeoff_sweep,
)
from .bus import BusMessage, DeliveryReport, DropModel, broadcast, drop_sample
from .model import (
    GainSet,
    LtiPlant,
    NoiseSpec,
    check_stability_margins,
    matrix_norm,
    measure,
    plant_step,
    spectral_radius,
    validate_model,
    vector_norm,
)
from .reference import CentralizedState, centralized_control, centralized_predict, centralized_update
from .sim import (
    Disturbance,
    Metrics,
    OverflowAbort,
    Scenario,
    SimTrace,
    compute_metrics,
    noise_sample,
    run_many,
    run_scenario,
)
from .trigger import IndexSets, TriggerGroup, build_index_sets, input_trigger_eval, measurement_trigger_eval

__version__ = "0.1.0"
