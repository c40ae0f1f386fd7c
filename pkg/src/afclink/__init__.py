"""Telecom-heralded entanglement link between two multimode AFC quantum memories.

The package contains two engines that model the same physical link:

* an exact density-operator engine over photon-number-truncated bosonic
  modes (:mod:`afclink.fock`, :mod:`afclink.link`), which produces analytic
  predictions for heralding rate, joint excitation probabilities, fringe
  visibility, concurrence, heralded cross-correlation and effective fidelity;
* a Monte Carlo event generator (:mod:`afclink.simulate`) that emits
  time-tagged detector clicks with the experiment's temporal structure
  (lock/measure duty cycle, AFC re-emission delay, temporal modes), sampling
  per-mode outcomes from the exact engine's conditional distributions.

:mod:`afclink.analysis` turns event streams (simulated or external) into the
same estimators, :mod:`afclink.multimode` performs the temporal-multiplexing
rate/concurrence analysis, and :mod:`afclink.cli` wires everything to
configuration files and figure-ready output files.
"""

__version__ = "0.1.0"

from .config import (
    ChannelParams,
    ConfigError,
    DetectorParams,
    LinkConfig,
    MemoryParams,
    ReadoutSchedule,
    SourceParams,
    TimingConfig,
    load_config,
    reference_config_path,
    validate,
)
from .fock import BosonicState, DetectionOutcome, tmsv
from .link import (
    HeraldOutcome,
    PredictedStats,
    VisibilityBudget,
    build_pre_herald_state,
    herald,
    predict_stats,
    readout_probabilities,
    visibility_budget,
)

__all__ = [
    "BosonicState",
    "ChannelParams",
    "ConfigError",
    "DetectionOutcome",
    "DetectorParams",
    "HeraldOutcome",
    "LinkConfig",
    "MemoryParams",
    "PredictedStats",
    "ReadoutSchedule",
    "SourceParams",
    "TimingConfig",
    "VisibilityBudget",
    "build_pre_herald_state",
    "herald",
    "load_config",
    "predict_stats",
    "readout_probabilities",
    "reference_config_path",
    "tmsv",
    "validate",
    "visibility_budget",
]
