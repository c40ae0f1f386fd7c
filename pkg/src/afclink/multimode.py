"""Temporal-multiplexing analysis: heralding rate and concurrence vs modes.

The time axis is partitioned into back-to-back communication trials of
length t_com; heralds are sorted into temporal modes by arrival time within
their trial.  For an allowed mode count N, a trial is usable when any of
its first N modes heralded; the default repeater-style policy accepts the
earliest herald per trial (one link per trial), a count-all policy is
available for raw-rate comparisons.  Accepted-herald sets are nested in N,
so the rate is monotone and per-trial analyses can be folded associatively.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import (
    AnalysisError,
    CoincidenceStats,
    analyze_stream,
    coincidence_flags,
    concurrence,
    estimate_probabilities,
)
from .config import LinkConfig, TimingConfig
from .events import CH_HERALD_PLUS, CH_READOUT_1, CH_READOUT_2, EventStream
from .schedule import PS, in_measure_window, stage_of_time_ps, stage_readout_arrays

__all__ = [
    "MultimodeError",
    "max_mode_count",
    "assign_modes",
    "ModeReportRow",
    "ModeReport",
    "rate_vs_modes",
]


class MultimodeError(ValueError):
    """Raised for invalid multiplexing parameters."""


def _tick_counts(timing: TimingConfig) -> tuple[int, int]:
    t_com_ps = round(timing.communication_time / PS)
    mode_ps = round(timing.mode_duration / PS)
    if t_com_ps <= 0:
        raise MultimodeError("communication_time must be positive")
    if mode_ps <= 0:
        raise MultimodeError("mode_duration must be positive")
    if mode_ps > t_com_ps:
        raise MultimodeError("mode_duration exceeds communication_time")
    return t_com_ps, mode_ps


def max_mode_count(timing: TimingConfig) -> int:
    """Number of whole temporal modes per communication trial."""
    t_com_ps, mode_ps = _tick_counts(timing)
    return t_com_ps // mode_ps


def assign_modes(stream: EventStream, timing: TimingConfig) -> EventStream:
    """Retag every event with its communication trial and temporal mode.

    trial = floor(t / t_com); mode = floor((t mod t_com) / mode_duration).
    """
    t_com_ps, mode_ps = _tick_counts(timing)
    t = stream.time_ps.astype(np.uint64)
    trial = t // np.uint64(t_com_ps)
    mode = (t % np.uint64(t_com_ps)) // np.uint64(mode_ps)
    return stream.with_tags(trial, mode)


@dataclass(frozen=True)
class ModeReportRow:
    n_modes: int
    rate_hz: float
    rate_err: float
    heralds_used: int
    concurrence: float | None
    concurrence_err: float | None
    stats: CoincidenceStats | None = None


@dataclass(frozen=True)
class ModeReport:
    rows: tuple[ModeReportRow, ...]
    visibility: float
    visibility_err: float
    policy: str

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write("n_modes,rate_hz,rate_err,concurrence,concurrence_err\n")
            for r in self.rows:
                c = "" if r.concurrence is None else repr(r.concurrence)
                ce = "" if r.concurrence_err is None else repr(r.concurrence_err)
                fh.write(f"{r.n_modes},{r.rate_hz!r},{r.rate_err!r},{c},{ce}\n")

    def rates(self) -> np.ndarray:
        return np.array([r.rate_hz for r in self.rows])

    def linear_fit(self) -> tuple[float, float, float]:
        """Least-squares rate = a + slope * N; returns (slope, intercept, R^2)."""
        n = np.array([r.n_modes for r in self.rows], dtype=float)
        y = self.rates()
        if n.size < 2:
            return float(y[0]), 0.0, 1.0
        slope, intercept = np.polyfit(n, y, 1)
        pred = slope * n + intercept
        ss_res = float(np.sum((y - pred) ** 2))
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
        return float(slope), float(intercept), r2


def rate_vs_modes(
    stream: EventStream,
    config: LinkConfig,
    policy: str = "first",
    herald_channel: int = CH_HERALD_PLUS,
    visibility: tuple[float, float] | None = None,
) -> ModeReport:
    """Heralding rate and concurrence for every allowed mode count.

    ``policy='first'`` keeps the earliest herald per communication trial
    among modes 0..N-1 (one established link per trial); ``policy='all'``
    counts every herald in the allowed modes.  The concurrence of each
    accepted subset uses its direct-stage click patterns together with a
    visibility common to all N (fitted from the stream's fringe stages
    unless supplied).
    """
    if policy not in ("first", "all"):
        raise MultimodeError(f"unknown acceptance policy {policy!r}")
    if len(stream) == 0:
        raise MultimodeError("empty stream")
    timing = config.timing
    n_max = max_mode_count(timing)
    t_com_ps, mode_ps = _tick_counts(timing)

    heralds = stream.channel_times(herald_channel).astype(np.uint64)
    if heralds.size == 0:
        raise MultimodeError("stream holds no heralds on the selected channel")
    trial = heralds // np.uint64(t_com_ps)
    mode = ((heralds % np.uint64(t_com_ps)) // np.uint64(mode_ps)).astype(np.int64)

    if visibility is None:
        tomo = analyze_stream(stream, config, herald_channel)
        if tomo.visibility is None:
            raise AnalysisError(
                "stream has no fringe stages; supply a visibility for the concurrence"
            )
        vis, vis_err = tomo.visibility, tomo.visibility_err or 0.0
    else:
        vis, vis_err = visibility

    tau = 0.5 * (config.memory_a.storage_time + config.memory_b.storage_time)
    hit1 = coincidence_flags(
        heralds, stream.channel_times(CH_READOUT_1), tau, timing.coincidence_window
    )
    hit2 = coincidence_flags(
        heralds, stream.channel_times(CH_READOUT_2), tau, timing.coincidence_window
    )
    stages = stage_of_time_ps(timing, heralds)
    is_direct, _ = stage_readout_arrays(config, stages)
    is_direct &= in_measure_window(timing, heralds)

    rows = []
    for n_allowed in range(1, n_max + 1):
        allowed = mode < n_allowed
        if policy == "first":
            # heralds are time ordered, so the first index per trial is the
            # earliest allowed herald of that trial
            idx = np.flatnonzero(allowed)
            _, first = np.unique(trial[idx], return_index=True)
            accept = np.zeros(heralds.size, dtype=bool)
            accept[idx[first]] = True
        else:
            accept = allowed
        used = int(accept.sum())
        rate = used / stream.duration
        rate_err = math.sqrt(max(used, 1)) / stream.duration

        sel = accept & is_direct
        conc = conc_err = None
        stats = None
        n_direct = int(sel.sum())
        if n_direct > 0:
            n11 = int(np.sum(hit1[sel] & hit2[sel]))
            n10 = int(np.sum(hit1[sel] & ~hit2[sel]))
            n01 = int(np.sum(~hit1[sel] & hit2[sel]))
            stats = CoincidenceStats(
                herald_count=n_direct,
                n00=n_direct - n11 - n10 - n01,
                n01=n01,
                n10=n10,
                n11=n11,
                integration_time=stream.duration,
            )
            probs = estimate_probabilities(stats)
            conc, conc_err, _ = concurrence(probs, vis, vis_err)
        rows.append(
            ModeReportRow(
                n_modes=n_allowed,
                rate_hz=rate,
                rate_err=rate_err,
                heralds_used=used,
                concurrence=conc,
                concurrence_err=conc_err,
                stats=stats,
            )
        )
    return ModeReport(rows=tuple(rows), visibility=vis, visibility_err=vis_err, policy=policy)
