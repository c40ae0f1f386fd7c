"""Configuration parsing, validation and normalization."""

import dataclasses
import math

import pytest

from afclink.config import (
    ChannelParams,
    ConfigError,
    DetectorParams,
    LinkConfig,
    MemoryParams,
    TimingConfig,
    apply_overrides,
    config_digest,
    db_to_linear,
    dumps_config,
    linear_to_db,
    load_config,
    loads_config,
    reference_config_path,
    validate,
)


def test_db_conversion_value():
    assert db_to_linear(6.5) == pytest.approx(10 ** (-0.65), rel=1e-14)


def test_db_round_trip():
    for db in (0.0, 0.3, 6.5, 20.0):
        assert linear_to_db(db_to_linear(db)) == pytest.approx(db, rel=1e-12, abs=1e-12)
    for t in (1.0, 0.224, 1e-3):
        assert db_to_linear(linear_to_db(t)) == pytest.approx(t, rel=1e-12)


def test_comb_period_tied_to_storage_time():
    mem = MemoryParams(storage_time=2e-6, efficiency_at_tau=0.3)
    assert mem.comb_period_hz == pytest.approx(500e3, rel=1e-14)
    assert mem.comb_period_hz * mem.storage_time == pytest.approx(1.0, abs=1e-15)


def test_transmission_db_normalized():
    cfg = validate(
        LinkConfig(
            idler_channel_a=ChannelParams(transmission_db=6.5),
            memory_a=MemoryParams(efficiency_at_tau=0.3),
            memory_b=MemoryParams(efficiency_at_tau=0.3),
        )
    )
    assert cfg.idler_channel_a.transmission == pytest.approx(0.22387211385683378, rel=1e-12)
    assert cfg.idler_channel_a.transmission_db is None


def test_duty_cycle_out_of_range_reports_path():
    cfg = LinkConfig(
        timing=TimingConfig(duty_cycle=1.3),
        memory_a=MemoryParams(efficiency_at_tau=0.3),
        memory_b=MemoryParams(efficiency_at_tau=0.3),
    )
    with pytest.raises(ConfigError) as err:
        validate(cfg)
    assert any("timing.duty_cycle" in v for v in err.value.violations)


def test_validation_collects_multiple_violations():
    cfg = LinkConfig(
        timing=TimingConfig(duty_cycle=1.3),
        idler_channel_a=ChannelParams(transmission=1.4),
        memory_a=MemoryParams(efficiency_at_tau=0.3),
        memory_b=MemoryParams(efficiency_at_tau=0.3),
    )
    with pytest.raises(ConfigError) as err:
        validate(cfg)
    assert len(err.value.violations) >= 2


def test_validate_is_idempotent():
    cfg = LinkConfig(
        idler_channel_a=ChannelParams(transmission_db=3.0),
        memory_a=MemoryParams(efficiency_at_tau=0.3),
        memory_b=MemoryParams(efficiency_at_tau=0.3),
    )
    once = validate(cfg)
    twice = validate(once)
    assert once == twice


def test_lock_period_derived_from_duty_cycle():
    cfg = validate(
        LinkConfig(
            timing=TimingConfig(duty_cycle=0.43, measure_period=10e-3),
            memory_a=MemoryParams(efficiency_at_tau=0.3),
            memory_b=MemoryParams(efficiency_at_tau=0.3),
        )
    )
    lock = cfg.timing.lock_period
    assert lock == pytest.approx(10e-3 * 0.57 / 0.43, rel=1e-12)
    assert cfg.timing.measure_period / cfg.timing.cycle_period == pytest.approx(0.43)


def test_duty_cycle_derived_from_periods():
    cfg = validate(
        LinkConfig(
            timing=TimingConfig(measure_period=10e-3, lock_period=10e-3),
            memory_a=MemoryParams(efficiency_at_tau=0.3),
            memory_b=MemoryParams(efficiency_at_tau=0.3),
        )
    )
    assert cfg.timing.duty_cycle == pytest.approx(0.5, rel=1e-14)


def test_memory_needs_an_efficiency_model():
    with pytest.raises(ConfigError) as err:
        validate(LinkConfig(memory_b=MemoryParams(efficiency_at_tau=0.3)))
    assert any("memory_a" in v for v in err.value.violations)


def test_memory_efficiency_precedence_and_interpolation():
    mem = MemoryParams(
        storage_time=2e-6,
        efficiency_at_tau=0.9,
        efficiency_intercept=0.5,
        efficiency_decay_time=10e-6,
        efficiency_table=((2e-6, 0.4), (4e-6, 0.2)),
    )
    # table wins, with linear interpolation and clamped ends
    assert mem.retrieval_efficiency(3e-6) == pytest.approx(0.3, rel=1e-12)
    assert mem.retrieval_efficiency(1e-6) == pytest.approx(0.4)
    assert mem.retrieval_efficiency(9e-6) == pytest.approx(0.2)
    no_table = dataclasses.replace(mem, efficiency_table=None)
    assert no_table.retrieval_efficiency() == pytest.approx(0.5 * math.exp(-0.2), rel=1e-12)
    bare = dataclasses.replace(no_table, efficiency_intercept=None)
    assert bare.retrieval_efficiency() == pytest.approx(0.9)


def test_linear_herald_detector_bound():
    cfg = LinkConfig(
        herald_detector_plus=DetectorParams(efficiency=0.6, response="linear"),
        memory_a=MemoryParams(efficiency_at_tau=0.3),
        memory_b=MemoryParams(efficiency_at_tau=0.3),
    )
    with pytest.raises(ConfigError) as err:
        validate(cfg)
    assert any("herald_detector_plus" in v for v in err.value.violations)
    ok = dataclasses.replace(
        cfg, herald_detector_plus=DetectorParams(efficiency=0.3, response="linear")
    )
    validate(ok)


def test_reference_configs_load():
    for name in ("fig2", "fig3a", "fig3b", "fig4"):
        cfg = load_config(name)
        assert cfg.timing.mode_duration == pytest.approx(400e-9)
    assert reference_config_path("not-a-config") is None


def test_load_missing_config_raises():
    with pytest.raises(FileNotFoundError):
        load_config("/nonexistent/path/link.cfg")


def test_overrides_applied_and_digest_changes():
    cfg = load_config("fig2")
    newcfg = apply_overrides(cfg, {"idler_channel_a.transmission_db": "6.5"})
    assert newcfg.idler_channel_a.transmission == pytest.approx(10 ** (-0.65), rel=1e-12)
    assert config_digest(newcfg) != config_digest(cfg)
    with pytest.raises(ConfigError):
        apply_overrides(cfg, {"idler_channel_a.no_such_key": "1"})


def test_dump_load_round_trip():
    cfg = load_config("fig2")
    again = loads_config(dumps_config(cfg))
    assert again == cfg
    assert config_digest(again) == config_digest(cfg)


def test_unknown_section_rejected():
    with pytest.raises(ConfigError):
        loads_config("[nonsense]\nx = 1\n")


def test_readout_schedule_pattern():
    cfg = load_config("fig2")
    sched = cfg.readout
    kinds = [sched.stage_readout(s)[0] for s in range(sched.schedule_unit)]
    n_direct = kinds.count("direct")
    assert n_direct == round(sched.direct_fraction * sched.schedule_unit)
    thetas = set()
    s = 0
    while len(thetas) < sched.fringe_phase_count and s < 200:
        kind, theta = sched.stage_readout(s)
        if kind == "fringe":
            thetas.add(round(theta, 12))
        s += 1
    assert len(thetas) == sched.fringe_phase_count
