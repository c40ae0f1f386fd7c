"""Monte Carlo generator of time-tagged detection events.

Reproduces the temporal structure of the experiment: lock/measure
alternation with the configured duty cycle, back-to-back temporal modes
inside each measure stage, AFC re-emission delayed by the storage time with
a Gaussian echo envelope, detector dark counts and dead time.

Per-mode outcomes are not sampled at amplitude level: the exact engine
provides the joint distribution of (herald pattern, readout pattern) per
temporal mode, with the fringe readout's dependence on the total analysis
phase captured as an exact trigonometric polynomial (Fourier coefficients
from a uniform phase grid).  The sampler draws from those distributions at
the current interferometer phases, so Monte Carlo and analytic statistics
agree by construction everywhere except timing effects (dead time, echo
jitter against the coincidence window, lock gating), which only the event
stream captures.

Sampling is counter based: every random block derives from
(seed, stream label, block index) through Philox keys, blocks cover a fixed
whole number of measure stages, and mode occupancy is thinned with a
dominating activity probability, so generation is reproducible bit for bit
and independent of how blocks are distributed over workers.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import LinkConfig, config_digest
from .events import (
    CH_HERALD_MINUS,
    CH_HERALD_PLUS,
    CH_READOUT_1,
    CH_READOUT_2,
    EventStream,
)
from .link import (
    HERALD_PATTERNS,
    build_pre_herald_state,
    herald_patterns,
    readout_direct,
    readout_fringe,
    visibility_budget,
)
from .schedule import PS, stage_readout_arrays

__all__ = [
    "SimulationError",
    "OutcomeTables",
    "build_outcome_tables",
    "simulate",
    "PhaseTrajectory",
    "phase_trajectory",
]

# Fourier grid for the fringe tables; must exceed twice the maximum harmonic
# (2 * n_max) of the click probabilities.
_N_PHASE_SAMPLES = 16
# target modes per random block (rounded to whole measure stages)
_BLOCK_TARGET_MODES = 1 << 21


class SimulationError(ValueError):
    """Raised for invalid simulation parameters."""


def _stream(seed: int, label: str, block: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, label, block)."""
    material = f"afclink:{seed}:{label}:{block}".encode()
    digest = hashlib.sha256(material).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# outcome tables


@dataclass(frozen=True)
class OutcomeTables:
    """Exact per-mode outcome distributions from the density-operator engine.

    ``herald_probs[h]`` is the probability of herald pattern h
    (none/plus/minus/both).  ``direct_cond[h, r]`` is the conditional
    probability of readout pattern r (none/r1/r2/both) in a direct stage.
    ``fringe_coeffs[h, r, k]`` are the rfft coefficients (over the total
    analysis phase) of the same conditionals in a fringe stage.
    ``q_dominating`` bounds the per-mode probability of any event in either
    stage kind, used to thin mode occupancy.
    """

    herald_probs: np.ndarray
    direct_cond: np.ndarray
    fringe_coeffs: np.ndarray
    q_dominating: float

    def fringe_cond(self, x: np.ndarray) -> np.ndarray:
        """Evaluate P(readout pattern | herald pattern, phase x): (n, 4, 4)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        ks = np.arange(self.fringe_coeffs.shape[-1])
        ph = np.exp(1j * np.outer(x, ks))  # (n, K)
        # c0 real + 2 Re sum_{k>=1} c_k e^{ikx}
        vals = np.real(
            np.einsum("nk,hrk->nhr", ph, self.fringe_coeffs)
            + np.einsum("nk,hrk->nhr", ph[:, 1:], self.fringe_coeffs[:, :, 1:])
        )
        return np.clip(vals, 0.0, 1.0)


_READOUT_KEYS = ("none", "r1", "r2", "both")


def build_outcome_tables(config: LinkConfig) -> OutcomeTables:
    """Evaluate the exact engine into sampling tables for one configuration."""
    pre = build_pre_herald_state(config)
    pats = herald_patterns(
        pre,
        (config.herald_detector_plus, config.herald_detector_minus),
        config.idler_mode_overlap,
    )
    herald_probs = np.array([pats[name][0] for name in HERALD_PATTERNS])

    budget = visibility_budget(config)
    echo_scale = budget.echo_overlap_factor

    n_h = len(HERALD_PATTERNS)
    direct_cond = np.zeros((n_h, 4))
    grid = 2.0 * np.pi * np.arange(_N_PHASE_SAMPLES) / _N_PHASE_SAMPLES
    fringe_samples = np.zeros((n_h, 4, _N_PHASE_SAMPLES))
    for hi, name in enumerate(HERALD_PATTERNS):
        prob, state = pats[name]
        if state is None:
            direct_cond[hi, 0] = 1.0
            fringe_samples[hi, 0, :] = 1.0
            continue
        # window capture happens physically here, via echo jitter against
        # the coincidence window, so the tables must not apply it again
        d = readout_direct(state, config, window_capture=False)
        direct_cond[hi] = [d["p00"], d["p10"], d["p01"], d["p11"]]
        for gi, x in enumerate(grid):
            f = readout_fringe(state, config, float(x), echo_scale, window_capture=False)
            fringe_samples[hi, :, gi] = [f["none"], f["r1"], f["r2"], f["both"]]
    fringe_coeffs = np.fft.rfft(fringe_samples, axis=-1) / _N_PHASE_SAMPLES

    # dominating bound on the per-mode probability of any event at all:
    # 1 - P(no herald) * P(no readout | no herald)
    q_direct = 1.0 - float(herald_probs[0] * direct_cond[0, 0])
    dense = np.linspace(0.0, 2.0 * np.pi, 512, endpoint=False)
    tables = OutcomeTables(herald_probs, direct_cond, fringe_coeffs, 1.0)
    none_given_none = tables.fringe_cond(dense)[:, 0, 0]
    q_fringe = float(1.0 - herald_probs[0] * none_given_none.min())
    q_dom = min(max(q_direct, q_fringe) * 1.001 + 1e-12, 1.0)
    return OutcomeTables(herald_probs, direct_cond, fringe_coeffs, q_dom)


# ---------------------------------------------------------------------------
# helpers


def _segmented_cumsum(values: np.ndarray, segment_ids: np.ndarray) -> np.ndarray:
    """Cumulative sum restarting at every change of segment id."""
    if values.size == 0:
        return values
    total = np.cumsum(values)
    starts = np.flatnonzero(np.diff(segment_ids, prepend=segment_ids[0] - 1))
    offsets = total[starts] - values[starts]
    counts = np.diff(np.append(starts, values.size))
    return total - np.repeat(offsets, counts)


def _dead_time_filter(times: np.ndarray, dead_ps: float) -> np.ndarray:
    """Mask of events surviving a non-paralyzable dead time (times sorted)."""
    n = times.size
    keep = np.ones(n, dtype=bool)
    if n < 2 or dead_ps <= 0:
        return keep
    gaps = np.diff(times.astype(np.int64))
    if np.all(gaps >= dead_ps):
        return keep
    last = float(times[0])
    for i in range(1, n):
        if float(times[i]) - last < dead_ps:
            keep[i] = False
        else:
            last = float(times[i])
    return keep


# ---------------------------------------------------------------------------
# simulation


def _simulate_block(
    config: LinkConfig,
    tables: OutcomeTables,
    seed: int,
    block: int,
    stages_per_block: int,
    n_stages_total: int,
    duration: float,
):
    timing = config.timing
    mps = timing.modes_per_stage
    s0 = block * stages_per_block
    s1 = min(s0 + stages_per_block, n_stages_total)
    n_stage = s1 - s0
    n_modes = n_stage * mps

    rng_act = _stream(seed, "activity", block)
    n_cand = int(rng_act.binomial(n_modes, tables.q_dominating))
    if n_cand == 0:
        empty = np.empty(0, dtype=np.uint64)
        return empty, np.empty(0, np.uint8), np.empty(0, np.uint32), np.empty(0, np.uint16)
    pos = np.sort(rng_act.choice(n_modes, size=n_cand, replace=False))

    stage_local = pos // mps
    mode_in_stage = (pos % mps).astype(np.uint16)
    stage_global = stage_local + s0

    cycle = timing.cycle_period
    mode_dur = timing.mode_duration
    u_t = _stream(seed, "times", block).random(n_cand)
    t_emit = stage_global * cycle + mode_in_stage * mode_dur + u_t * mode_dur

    in_run = t_emit < duration
    # draw every per-candidate variate before filtering so the streams stay
    # aligned with the candidate set
    u_out = _stream(seed, "outcome", block).random(n_cand)
    steps = _stream(seed, "steps", block).standard_normal((n_cand, 3))
    jitter = _stream(seed, "jitter", block).standard_normal((n_cand, 2))
    locks = _stream(seed, "locks", block).standard_normal((n_stage, 2))

    is_direct_stage, theta_stage = stage_readout_arrays(config, np.arange(s0, s1))

    d_i = config.idler_channel_a.phase_diffusion + config.idler_channel_b.phase_diffusion
    d_s = config.signal_channel_a.phase_diffusion + config.signal_channel_b.phase_diffusion
    residual = timing.lock_residual
    tau_mean = 0.5 * (config.memory_a.storage_time + config.memory_b.storage_time)

    t_in_stage = t_emit - stage_global * cycle
    prev = np.empty(n_cand)
    prev[0] = 0.0
    prev[1:] = t_in_stage[:-1]
    seg_first = np.empty(n_cand, dtype=bool)
    seg_first[0] = True
    seg_first[1:] = stage_local[1:] != stage_local[:-1]
    dt = np.where(seg_first, t_in_stage, t_in_stage - prev)
    dt = np.maximum(dt, 0.0)

    phi_i = locks[stage_local, 0] * residual + _segmented_cumsum(
        steps[:, 0] * np.sqrt(d_i * dt), stage_local
    )
    phi_s = locks[stage_local, 1] * residual + _segmented_cumsum(
        steps[:, 1] * np.sqrt(d_s * dt), stage_local
    )
    phi_s_ro = phi_s + steps[:, 2] * math.sqrt(d_s * tau_mean)

    # joint (herald, readout) probabilities per candidate, thinned by q_dom
    cand_direct = is_direct_stage[stage_local]
    joint = np.empty((n_cand, 4, 4))
    if np.any(cand_direct):
        joint[cand_direct] = tables.herald_probs[:, None] * tables.direct_cond[None, :, :]
    if np.any(~cand_direct):
        idx = np.flatnonzero(~cand_direct)
        x = theta_stage[stage_local[idx]] + phi_i[idx] + phi_s_ro[idx]
        cond = tables.fringe_cond(x)
        joint[idx] = tables.herald_probs[None, :, None] * cond
    flat = joint.reshape(n_cand, 16) / tables.q_dominating
    flat[:, 0] = 1.0 - flat[:, 1:].sum(axis=1)
    cum = np.cumsum(flat, axis=1)
    outcome = (u_out[:, None] < cum).argmax(axis=1)

    active = (outcome != 0) & in_run
    if not np.any(active):
        empty = np.empty(0, dtype=np.uint64)
        return empty, np.empty(0, np.uint8), np.empty(0, np.uint32), np.empty(0, np.uint16)

    h_pat = (outcome // 4)[active]
    r_pat = (outcome % 4)[active]
    t_act = t_emit[active]
    stage_act = stage_global[active].astype(np.uint32)
    mode_act = mode_in_stage[active]
    jit = jitter[active]

    times, chans, trials, modes = [], [], [], []

    def emit(mask, channel, t):
        if not np.any(mask):
            return
        times.append(t[mask])
        chans.append(np.full(int(mask.sum()), channel, dtype=np.uint8))
        trials.append(stage_act[mask])
        modes.append(mode_act[mask])

    emit((h_pat == 1) | (h_pat == 3), CH_HERALD_PLUS, t_act)
    emit((h_pat == 2) | (h_pat == 3), CH_HERALD_MINUS, t_act)
    mem_a, mem_b = config.memory_a, config.memory_b
    t_ro1 = (
        t_act + mem_a.storage_time + mem_a.echo_offset() + mem_a.echo_rms_width * jit[:, 0]
    )
    t_ro2 = (
        t_act + mem_b.storage_time + mem_b.echo_offset() + mem_b.echo_rms_width * jit[:, 1]
    )
    emit((r_pat == 1) | (r_pat == 3), CH_READOUT_1, t_ro1)
    emit((r_pat == 2) | (r_pat == 3), CH_READOUT_2, t_ro2)

    t_all = np.concatenate(times)
    c_all = np.concatenate(chans)
    r_all = np.concatenate(trials)
    m_all = np.concatenate(modes)

    # detectors are gated off outside measure windows and after the run ends
    in_measure = (t_all % cycle) < timing.measure_period
    ok = in_measure & (t_all >= 0) & (t_all < duration)
    t_ps = np.round(t_all[ok] / PS).astype(np.uint64)
    return t_ps, c_all[ok], r_all[ok], m_all[ok]


def simulate(
    config: LinkConfig, seed: int, wall_duration: float, workers: int = 1
) -> EventStream:
    """Generate the detection record of running the link for ``wall_duration``.

    Deterministic for a given (config, seed) and independent of ``workers``.
    """
    if wall_duration <= 0:
        raise SimulationError("zero-duration simulation requested")
    if not 0 <= seed < 2**63:
        raise SimulationError("seed must fit in a non-negative 63-bit integer")
    timing = config.timing
    mps = timing.modes_per_stage
    if mps < 1:
        raise SimulationError("measure period shorter than one temporal mode")
    if mps > 65535:
        raise SimulationError("more than 65535 modes per stage; enlarge mode_duration")

    tables = build_outcome_tables(config)
    n_stages = int(math.ceil(wall_duration / timing.cycle_period - 1e-12))
    stages_per_block = max(1, _BLOCK_TARGET_MODES // mps)
    n_blocks = int(math.ceil(n_stages / stages_per_block))

    def run(block):
        return _simulate_block(
            config, tables, seed, block, stages_per_block, n_stages, wall_duration
        )

    if workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(n_blocks)))
    else:
        parts = [run(b) for b in range(n_blocks)]

    t = np.concatenate([p[0] for p in parts])
    c = np.concatenate([p[1] for p in parts])
    r = np.concatenate([p[2] for p in parts])
    m = np.concatenate([p[3] for p in parts])
    order = np.lexsort((c, t))
    t, c, r, m = t[order], c[order], r[order], m[order]

    keep = np.ones(t.size, dtype=bool)
    for channel, det in (
        (CH_HERALD_PLUS, config.herald_detector_plus),
        (CH_HERALD_MINUS, config.herald_detector_minus),
        (CH_READOUT_1, config.readout_detector_1),
        (CH_READOUT_2, config.readout_detector_2),
    ):
        if det.dead_time <= 0:
            continue
        mask = c == channel
        if np.any(mask):
            keep[mask] = _dead_time_filter(t[mask], det.dead_time / PS)

    return EventStream(
        seed=seed,
        duration=wall_duration,
        config_digest=config_digest(config),
        time_ps=t[keep],
        channel=c[keep],
        trial=r[keep],
        mode=m[keep],
    )


# ---------------------------------------------------------------------------
# phase trajectories (diagnostic)


@dataclass(frozen=True)
class PhaseTrajectory:
    """Sampled relative phases at mode boundaries inside measure stages."""

    times: np.ndarray
    idler_phase: np.ndarray
    signal_phase: np.ndarray
    stage_index: np.ndarray


def phase_trajectory(config: LinkConfig, seed: int, duration: float) -> PhaseTrajectory:
    """Dense idler/signal relative-phase random walks with lock resets.

    The variance of each walk grows as lock_residual^2 + D t within a
    measure stage and resets at every lock stage.
    """
    if duration <= 0:
        raise SimulationError("zero-duration trajectory requested")
    timing = config.timing
    mps = timing.modes_per_stage
    n_stages = int(math.ceil(duration / timing.cycle_period - 1e-12))
    d_i = config.idler_channel_a.phase_diffusion + config.idler_channel_b.phase_diffusion
    d_s = config.signal_channel_a.phase_diffusion + config.signal_channel_b.phase_diffusion
    res = timing.lock_residual

    rng_lock = _stream(seed, "traj-locks", 0)
    rng_step = _stream(seed, "traj-steps", 0)
    phi0 = rng_lock.standard_normal((n_stages, 2)) * res
    steps = rng_step.standard_normal((n_stages, mps, 2))
    dt = timing.mode_duration
    walk_i = phi0[:, 0:1] + np.cumsum(steps[:, :, 0] * math.sqrt(d_i * dt), axis=1)
    walk_s = phi0[:, 1:2] + np.cumsum(steps[:, :, 1] * math.sqrt(d_s * dt), axis=1)

    stage_starts = np.arange(n_stages) * timing.cycle_period
    times = (stage_starts[:, None] + (np.arange(mps) + 1) * dt).ravel()
    stage_idx = np.repeat(np.arange(n_stages), mps)
    return PhaseTrajectory(
        times=times,
        idler_phase=walk_i.ravel(),
        signal_phase=walk_s.ravel(),
        stage_index=stage_idx,
    )
