"""Online adaptive identification of switched affine systems.

Parallel per-subsystem estimators driven by dual-layer low-pass filters,
with memory stacks that keep learning alive through inactive phases and an
online intermittent-initial-excitation monitor that unlocks an
exponential-rate correction term per subsystem.
"""

from .estimator import (DecayFit, EstimatorGains, count_envelope_violations,
                        envelope_constants, envelope_violation_times,
                        fit_decay_rate, lyapunov_value, verify_gain_condition)
from .excitation import (DetectionEvent, IIEStatus, check_pd, indicator,
                         pe_window_scan, update_iie, verify_persistent_pd)
from .filters import FilterBankState, FilterGains, MemoryStacks, on_switch, reconstruct_g
from .harness import CheckCriteria, HarnessRun, RunReport, report_check, run
from .identify import (CompositeIdentifier, IdentificationPipeline,
                       IdentificationResult, SwitchedSystemIdentifier)
from .plant import (DivergenceError, ExcitationInput, GridAlignmentError,
                    SwitchedPlant, SwitchingSchedule, Trajectory,
                    integrate_plant_step, sigma_at, simulate)
from .regressor import (Dimensions, build_regressor, pack_params,
                        predict_derivative, unpack_params)
from .scenario import (ScenarioConfig, ScenarioError, flagship_config,
                       load_scenario, variant_config)

__version__ = "0.1.0"

__all__ = [
    "Dimensions", "build_regressor", "pack_params", "unpack_params",
    "predict_derivative",
    "SwitchedPlant", "SwitchingSchedule", "ExcitationInput", "Trajectory",
    "sigma_at", "integrate_plant_step", "simulate",
    "GridAlignmentError", "DivergenceError",
    "FilterGains", "FilterBankState", "MemoryStacks", "reconstruct_g", "on_switch",
    "IIEStatus", "DetectionEvent", "indicator", "check_pd", "update_iie",
    "verify_persistent_pd", "pe_window_scan",
    "EstimatorGains", "lyapunov_value", "verify_gain_condition",
    "envelope_constants", "fit_decay_rate", "count_envelope_violations",
    "envelope_violation_times", "DecayFit",
    "IdentificationPipeline", "IdentificationResult",
    "SwitchedSystemIdentifier", "CompositeIdentifier",
    "ScenarioConfig", "ScenarioError", "load_scenario", "flagship_config",
    "variant_config",
    "run", "RunReport", "CheckCriteria", "report_check", "HarnessRun",
]
