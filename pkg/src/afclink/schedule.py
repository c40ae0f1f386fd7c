"""Lock/measure stage arithmetic shared by the simulator and the analysis.

Wall time is tiled with cycles of one measure stage (data taking) followed
by one lock stage (phase stabilisation, no events).  Measure stage k
occupies [k * cycle, k * cycle + measure_period); its temporal modes are
back to back with the configured mode duration.
"""

from __future__ import annotations

import math

import numpy as np

from .config import LinkConfig, TimingConfig

__all__ = [
    "PS",
    "stage_count",
    "stage_start",
    "in_measure_window",
    "stage_of_time_ps",
    "stage_readout_arrays",
]

PS = 1e-12


def stage_count(timing: TimingConfig, duration: float) -> int:
    """Number of measure stages that begin within ``duration`` seconds."""
    return int(math.ceil(duration / timing.cycle_period - 1e-12))


def stage_start(timing: TimingConfig, stage: int) -> float:
    return stage * timing.cycle_period


def in_measure_window(timing: TimingConfig, time_ps: np.ndarray) -> np.ndarray:
    """Boolean mask of times that fall inside a measure stage."""
    cycle_ps = timing.cycle_period / PS
    offset = np.asarray(time_ps, dtype=np.float64) % cycle_ps
    return offset < timing.measure_period / PS


def stage_of_time_ps(timing: TimingConfig, time_ps: np.ndarray) -> np.ndarray:
    """Measure-stage index of each time tag (valid inside measure windows)."""
    cycle_ps = timing.cycle_period / PS
    return (np.asarray(time_ps, dtype=np.float64) // cycle_ps).astype(np.int64)


def stage_readout_arrays(config: LinkConfig, stages: np.ndarray):
    """Vectorized readout classification of measure stages.

    Returns (is_direct mask, theta array with NaN on direct stages).
    """
    sched = config.readout
    stages = np.asarray(stages, dtype=np.int64)
    n_direct = sched.direct_stages_per_unit()
    unit = sched.schedule_unit
    pos = stages % unit
    is_direct = pos < n_direct
    fringe_before = (stages // unit) * (unit - n_direct) + np.maximum(pos - n_direct, 0)
    k = fringe_before % sched.fringe_phase_count
    theta = sched.fixed_phase + 2.0 * np.pi * k / sched.fringe_phase_count
    theta = np.where(is_direct, np.nan, theta)
    return is_direct, theta
