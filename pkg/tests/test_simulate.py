"""Monte Carlo event generator: determinism, timing structure, physics."""

import dataclasses
import math

import numpy as np
import pytest

from afclink.analysis import analyze_stream, count_coincidences
from afclink.config import (
    ChannelParams,
    SourceParams,
    load_config,
    apply_overrides,
)
from afclink.events import CH_HERALD_PLUS, CH_HERALD_MINUS, CH_READOUT_1, CH_READOUT_2
from afclink.link import predict_stats, phase_noise_factor, visibility_budget
from afclink.schedule import in_measure_window
from afclink.simulate import (
    SimulationError,
    build_outcome_tables,
    phase_trajectory,
    simulate,
)

from test_link import make_config

REP = dataclasses.replace


@pytest.fixture(scope="module")
def fig2():
    return load_config("fig2")


def streams_equal(a, b):
    return (
        np.array_equal(a.time_ps, b.time_ps)
        and np.array_equal(a.channel, b.channel)
        and np.array_equal(a.trial, b.trial)
        and np.array_equal(a.mode, b.mode)
    )


# ---------------------------------------------------------------------------
# contracts


def test_zero_duration_rejected(fig2):
    with pytest.raises(SimulationError):
        simulate(fig2, 1, 0.0)


def test_bad_seed_rejected(fig2):
    with pytest.raises(SimulationError):
        simulate(fig2, -1, 1.0)


def test_determinism_same_seed(fig2):
    a = simulate(fig2, 21, 3.0)
    b = simulate(fig2, 21, 3.0)
    assert streams_equal(a, b)
    c = simulate(fig2, 22, 3.0)
    assert not streams_equal(a, c)


def test_workers_do_not_change_the_stream(fig2):
    a = simulate(fig2, 5, 8.0, workers=1)
    b = simulate(fig2, 5, 8.0, workers=4)
    assert streams_equal(a, b)


def test_sources_off_no_darks_empty_stream(fig2):
    cfg = REP(
        fig2,
        source_a=SourceParams(mean_pair_probability_per_mode=0.0),
        source_b=SourceParams(mean_pair_probability_per_mode=0.0),
    )
    stream = simulate(cfg, 3, 5.0)
    assert len(stream) == 0


def test_stream_header_carries_config_digest(fig2):
    from afclink.config import config_digest

    stream = simulate(fig2, 9, 1.0)
    assert stream.config_digest == config_digest(fig2)
    assert stream.seed == 9
    assert stream.duration == 1.0


# ---------------------------------------------------------------------------
# timing structure


def test_no_events_during_lock_stages(fig2):
    stream = simulate(fig2, 4, 10.0)
    assert len(stream) > 0
    in_meas = in_measure_window(fig2.timing, stream.time_ps)
    assert np.all(in_meas)


def test_readout_trails_herald_by_storage_time():
    # echo width chosen well below the mode spacing, so the pairing window
    # cannot pick up unheralded echoes of neighbouring temporal modes
    cfg = make_config(
        p=0.02, idler_t=0.6, absorption=0.6, retrieval=0.8, signal_t=0.8,
        readout_eff=0.8, echo_width=20e-9,
    )
    stream = simulate(cfg, 6, 30.0)
    tau = cfg.memory_a.storage_time
    width = cfg.memory_a.echo_rms_width
    heralds = np.sort(
        np.concatenate(
            [stream.channel_times(CH_HERALD_PLUS), stream.channel_times(CH_HERALD_MINUS)]
        )
    ).astype(np.float64)
    deltas = []
    for ch in (CH_READOUT_1, CH_READOUT_2):
        ro = stream.channel_times(ch).astype(np.float64)
        lo = np.searchsorted(ro, heralds + (tau - 6 * width) / 1e-12)
        hi = np.searchsorted(ro, heralds + (tau + 6 * width) / 1e-12)
        for h, a, b in zip(heralds, lo, hi):
            deltas.extend((ro[a:b] - h) * 1e-12)
    deltas = np.array(deltas)
    assert deltas.size > 100
    frac = np.mean(np.abs(deltas - tau) < 3 * width)
    assert frac > 0.99 - 3 * math.sqrt(0.003 / deltas.size)


def test_rate_scales_with_duty_cycle(fig2):
    # the fig2 duty cycle is 0.43; an always-measuring variant must herald
    # 1/0.43 times more often per wall second
    full = apply_overrides(fig2, {"timing.duty_cycle": "1.0", "timing.lock_period": "0"})
    s_duty = simulate(fig2, 31, 30.0)
    s_full = simulate(full, 31, 30.0)
    n_duty = s_duty.channel_times(CH_HERALD_PLUS).size
    n_full = s_full.channel_times(CH_HERALD_PLUS).size
    ratio = n_duty / n_full
    err = ratio * math.sqrt(1 / n_duty + 1 / n_full)
    assert abs(ratio - 0.43) < 3 * err


def test_heralding_rate_reference_value(fig2):
    # 60 simulated seconds at the reference point: 1.43 kHz within Poisson 3 sigma
    stream = simulate(fig2, 101, 60.0)
    n = stream.channel_times(CH_HERALD_PLUS).size
    expected = 1430.0 * 60.0
    assert abs(n - expected) < 3 * math.sqrt(expected)


def test_trial_and_mode_tags_consistent(fig2):
    stream = simulate(fig2, 8, 5.0)
    mps = fig2.timing.modes_per_stage
    assert np.all(stream.mode < mps)
    cycle_ps = fig2.timing.cycle_period / 1e-12
    heralds = stream.channel == CH_HERALD_PLUS
    stage_from_time = (stream.time_ps[heralds] / cycle_ps).astype(np.int64)
    assert np.array_equal(stage_from_time, stream.trial[heralds].astype(np.int64))


def test_dead_time_drops_close_events():
    from afclink.simulate import _dead_time_filter

    times = np.array([0, 10, 30, 31, 32, 100], dtype=np.uint64)
    keep = _dead_time_filter(times, 5.0)
    assert keep.tolist() == [True, True, True, False, False, True]
    keep = _dead_time_filter(times, 0.0)
    assert keep.all()


# ---------------------------------------------------------------------------
# physics cross-checks against the analytic engine


def test_herald_pattern_probabilities_match_tables(fig2):
    tables = build_outcome_tables(fig2)
    stream = simulate(fig2, 13, 120.0)
    modes_total = 0
    timing = fig2.timing
    import math as m

    n_stages = m.ceil(120.0 / timing.cycle_period - 1e-12)
    modes_total = n_stages * timing.modes_per_stage
    n_plus = stream.channel_times(CH_HERALD_PLUS).size
    n_minus = stream.channel_times(CH_HERALD_MINUS).size
    p_plus = tables.herald_probs[1] + tables.herald_probs[3]
    for n, p in ((n_plus, p_plus), (n_minus, p_plus)):
        sigma = m.sqrt(modes_total * p)
        assert abs(n - modes_total * p) < 4 * sigma


def test_simulated_statistics_match_prediction():
    # fast symmetric configuration, ~2e5 heralds
    cfg = make_config(
        p=0.03, idler_t=0.6, herald_eff=0.3, absorption=0.55, retrieval=0.8,
        signal_t=0.85, readout_eff=0.75, eta_ov=0.92, echo_width=20e-9,
    )
    pred = predict_stats(cfg)
    duration = 2.1e5 / pred.herald_rate_hz
    stream = simulate(cfg, 77, duration)
    tomo = analyze_stream(stream, cfg)
    n = tomo.direct.herald_count
    for key in ("p00", "p01", "p10", "p11"):
        got = getattr(tomo.probabilities, key)
        exp = getattr(pred, key)
        sigma = math.sqrt(exp * (1 - exp) / n)
        assert abs(got - exp) < 4 * sigma, key
    assert abs(tomo.visibility - pred.visibility) < 4 * tomo.visibility_err
    assert abs(tomo.h2c - pred.h2c) < 4 * tomo.h2c_err


def test_phase_dependence_of_fringe_stages():
    # static idler phase shifts the fitted fringe phase
    cfg = make_config(p=0.02, absorption=0.6, signal_t=0.8, static_idler=(0.9, 0.0))
    pred = predict_stats(cfg)
    stream = simulate(cfg, 19, 1.2e5 / pred.herald_rate_hz)
    tomo = analyze_stream(stream, cfg)
    assert abs(tomo.visibility - pred.visibility) < 4 * tomo.visibility_err


# ---------------------------------------------------------------------------
# phase trajectories


def test_phase_trajectory_silent_when_stable():
    cfg = make_config(diffusion=0.0, residual=0.0)
    traj = phase_trajectory(cfg, 5, 0.2)
    assert np.all(traj.idler_phase == 0.0)
    assert np.all(traj.signal_phase == 0.0)


def test_phase_trajectory_variance_growth():
    # Var[phi(t)] = residual^2 + D t within a stage
    diffusion = 4.0
    residual = 0.05
    cfg = make_config(diffusion=diffusion / 2.0, residual=residual)
    traj = phase_trajectory(cfg, 11, 2.0)
    mps = cfg.timing.modes_per_stage
    n_stages = traj.stage_index.max() + 1
    walks = traj.signal_phase.reshape(n_stages, mps)
    for frac in (0.25, 0.9):
        m = int(mps * frac) - 1
        t = (m + 1) * cfg.timing.mode_duration
        expected = residual**2 + diffusion * t
        sample_var = walks[:, m].var()
        err = expected * math.sqrt(2.0 / (n_stages - 1))
        assert abs(sample_var - expected) < 3 * err


def test_phase_trajectory_visibility_penalty_matches_budget():
    cfg = make_config(diffusion=6.0, residual=0.06)
    traj = phase_trajectory(cfg, 23, 12.0)
    total = traj.idler_phase + traj.signal_phase
    measured = float(np.mean(np.cos(total)))
    budget = visibility_budget(cfg)
    sigma = float(np.std(np.cos(total)) / math.sqrt(total.size))
    # the trajectory samples are correlated within a stage; inflate the
    # naive error by the effective sample count (one stage ~ one sample)
    n_stages = traj.stage_index.max() + 1
    sigma_eff = float(np.std(np.cos(total))) / math.sqrt(n_stages)
    # remove the D tau readout hop, absent from raw trajectories
    d_s = cfg.signal_channel_a.phase_diffusion + cfg.signal_channel_b.phase_diffusion
    tau = cfg.memory_a.storage_time
    reference = budget.phase_noise_factor * math.exp(d_s * tau / 2.0)
    assert abs(measured - reference) < 3 * sigma_eff
