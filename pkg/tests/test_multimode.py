"""Temporal multiplexing: mode assignment, acceptance policies, rates."""

import math

import numpy as np
import pytest

from afclink.config import TimingConfig, load_config
from afclink.events import (
    CH_HERALD_PLUS,
    CH_READOUT_1,
    CH_READOUT_2,
    EventStream,
)
from afclink.multimode import (
    MultimodeError,
    ModeReport,
    assign_modes,
    max_mode_count,
    rate_vs_modes,
)

DIGEST = "11" * 32
PS = 1e-12


def timing_62():
    return TimingConfig(
        mode_duration=400e-9,
        communication_time=25e-6,
        lock_period=10e-3,
    )


def test_max_mode_count_reference():
    # 25 us split into 400 ns modes: 62 whole modes per trial
    assert max_mode_count(timing_62()) == 62


def test_max_mode_count_single_mode():
    t = TimingConfig(mode_duration=25e-6, communication_time=25e-6, lock_period=1e-3)
    assert max_mode_count(t) == 1


def test_assign_modes_examples():
    times = np.array(
        [0, round(25.2e-6 / PS), round(24.9e-6 / PS)], dtype=np.uint64
    )
    times.sort()
    stream = EventStream(
        seed=0,
        duration=1.0,
        config_digest=DIGEST,
        time_ps=times,
        channel=np.zeros(3, dtype=np.uint8),
        trial=np.zeros(3, dtype=np.uint32),
        mode=np.zeros(3, dtype=np.uint16),
    )
    tagged = assign_modes(stream, timing_62())
    # t = 0 -> trial 0, mode 0
    assert tagged.trial[0] == 0 and tagged.mode[0] == 0
    # t = 24.9 us -> trial 0, mode 62 (the partial tail slot)
    assert tagged.trial[1] == 0 and tagged.mode[1] == 62
    # t = 25.2 us -> trial 1, mode 0
    assert tagged.trial[2] == 1 and tagged.mode[2] == 0


def test_assign_modes_rejects_oversized_mode():
    t = TimingConfig(mode_duration=30e-6, communication_time=25e-6, lock_period=1e-3)
    stream = EventStream(seed=0, duration=1.0, config_digest=DIGEST)
    with pytest.raises(MultimodeError):
        assign_modes(stream, t)


def synthetic_multimode_stream(
    herald_prob=5e-4,
    n_trials=2_000_000,
    seed=5,
    readout_prob=0.2,
):
    """Homogeneous herald probability per mode over 62-mode trials.

    Builds heralds directly (no link physics) with optional readout clicks,
    so the first-per-trial combinatorics can be checked against closed
    forms.  Occupancy is sampled sparsely (binomial count + positions
    without replacement), which is exactly Bernoulli thinning.
    """
    rng = np.random.default_rng(seed)
    t_com = 25e-6
    mode_dur = 400e-9
    n_modes = 62
    slots = n_trials * n_modes
    k = rng.binomial(slots, herald_prob)
    pos = np.sort(rng.choice(slots, size=k, replace=False))
    trial_idx = pos // n_modes
    mode_idx = pos % n_modes
    times = (trial_idx * t_com + mode_idx * mode_dur + 0.5 * mode_dur) / PS
    times = times.astype(np.uint64)
    events = [(t, CH_HERALD_PLUS) for t in times]
    take = rng.random(times.size) < readout_prob
    arm = rng.random(times.size) < 0.5
    tau = 2e-6
    for t, ok, a in zip(times, take, arm):
        if ok:
            ch = CH_READOUT_1 if a else CH_READOUT_2
            events.append((int(t + tau / PS), ch))
    events.sort()
    arr = np.array(events, dtype=np.int64)
    return EventStream(
        seed=seed,
        duration=n_trials * t_com,
        config_digest=DIGEST,
        time_ps=arr[:, 0].astype(np.uint64),
        channel=arr[:, 1].astype(np.uint8),
        trial=np.zeros(arr.shape[0], dtype=np.uint32),
        mode=np.zeros(arr.shape[0], dtype=np.uint16),
    )


@pytest.fixture(scope="module")
def uniform_stream():
    return synthetic_multimode_stream()


@pytest.fixture(scope="module")
def uniform_config():
    cfg = load_config("fig4")
    return cfg


def test_rate_linear_in_modes_at_low_occupancy(uniform_stream, uniform_config):
    report = rate_vs_modes(
        uniform_stream, uniform_config, policy="first", visibility=(0.8, 0.01)
    )
    r1 = report.rows[0]
    for n in (10, 30, 62):
        row = report.rows[n - 1]
        expected = n * r1.rate_hz
        # binomial-ish error on both rates
        err = expected * math.sqrt(1 / row.heralds_used + 1 / r1.heralds_used)
        assert abs(row.rate_hz - expected) < 3 * err + 1e-9


def test_rates_monotone_and_subadditive(uniform_stream, uniform_config):
    report = rate_vs_modes(
        uniform_stream, uniform_config, policy="first", visibility=(0.8, 0.01)
    )
    rates = report.rates()
    assert np.all(np.diff(rates) >= -1e-12)
    r1 = rates[0]
    n = np.arange(1, rates.size + 1)
    assert np.all(rates <= n * r1 * (1 + 5 * np.sqrt(1 / report.rows[0].heralds_used)))


def test_accepted_sets_nested(uniform_stream, uniform_config):
    counts = [
        rate_vs_modes(
            uniform_stream, uniform_config, policy=policy, visibility=(0.8, 0.01)
        )
        for policy in ("first", "all")
    ]
    for report in counts:
        used = [r.heralds_used for r in report.rows]
        assert all(b >= a for a, b in zip(used, used[1:]))
    # count-all dominates first-per-trial
    assert all(
        a.heralds_used <= b.heralds_used
        for a, b in zip(counts[0].rows, counts[1].rows)
    )


def test_single_mode_restriction_matches_manual_count(uniform_stream, uniform_config):
    report = rate_vs_modes(
        uniform_stream, uniform_config, policy="first", visibility=(0.8, 0.01)
    )
    heralds = uniform_stream.channel_times(CH_HERALD_PLUS)
    t_com_ps = round(25e-6 / PS)
    mode_ps = round(400e-9 / PS)
    mode = (heralds % t_com_ps) // mode_ps
    manual = int(np.sum(mode == 0))  # at most one mode-0 herald per trial
    assert report.rows[0].heralds_used == manual


def test_linear_fit_on_uniform_stream(uniform_stream, uniform_config):
    report = rate_vs_modes(
        uniform_stream, uniform_config, policy="first", visibility=(0.8, 0.01)
    )
    slope, intercept, r2 = report.linear_fit()
    assert r2 > 0.99
    # closed form: rate(N) = (1 - (1-p)^N)/t_com with p = 5e-4 per mode;
    # the least-squares slope of that curve over N = 1..62 is 0.9846 p/t_com
    p, t_com = 5e-4, 25e-6
    n = np.arange(1, 63)
    slope_true = np.polyfit(n, (1 - (1 - p) ** n) / t_com, 1)[0]
    assert slope == pytest.approx(slope_true, rel=0.03)
    r1 = report.rows[0]
    assert abs(r1.rate_hz - p / t_com) < 3 * r1.rate_err


def test_csv_header_and_shape(tmp_path, uniform_stream, uniform_config):
    report = rate_vs_modes(
        uniform_stream, uniform_config, policy="first", visibility=(0.8, 0.01)
    )
    path = tmp_path / "report.csv"
    report.write_csv(path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "n_modes,rate_hz,rate_err,concurrence,concurrence_err"
    assert len(lines) == 63


def test_empty_stream_rejected(uniform_config):
    empty = EventStream(seed=0, duration=1.0, config_digest=DIGEST)
    with pytest.raises(MultimodeError):
        rate_vs_modes(empty, uniform_config, visibility=(0.8, 0.01))


def test_policy_validated(uniform_stream, uniform_config):
    with pytest.raises(MultimodeError):
        rate_vs_modes(uniform_stream, uniform_config, policy="sometimes")
