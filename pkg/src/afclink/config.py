"""Domain types and validated configuration shared by both engines.

All quantities are stored in SI units (seconds, Hz, linear power
transmission); configuration files may specify channel losses in dB, which
validation converts to linear transmission.  A validated ``LinkConfig`` is
immutable and safe to share between concurrently running sweeps.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import importlib.resources
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

__all__ = [
    "ConfigError",
    "SourceParams",
    "ChannelParams",
    "MemoryParams",
    "DetectorParams",
    "TimingConfig",
    "ReadoutSchedule",
    "LinkConfig",
    "validate",
    "load_config",
    "loads_config",
    "dumps_config",
    "apply_overrides",
    "config_digest",
    "reference_config_path",
    "db_to_linear",
    "linear_to_db",
]


class ConfigError(ValueError):
    """Raised when a configuration violates an invariant.

    ``violations`` lists every violation found, each prefixed with the
    dotted field path that caused it.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def db_to_linear(loss_db: float) -> float:
    """Convert a power loss in dB to a linear transmission."""
    return 10.0 ** (-loss_db / 10.0)


def linear_to_db(transmission: float) -> float:
    """Convert a linear transmission to a power loss in dB."""
    if transmission <= 0.0:
        raise ValueError("transmission must be positive to express in dB")
    return -10.0 * math.log10(transmission)


@dataclass(frozen=True)
class SourceParams:
    """Photon-pair source abstracted to a per-mode emission probability.

    ``mean_pair_probability_per_mode`` is the mean pair number per temporal
    mode.  ``statistics`` selects the per-mode pair-number distribution:
    ``thermal`` (cavity-filtered SPDC, the default) or ``poisson`` (a
    diagnostic alternative for sensitivity checks).
    """

    mean_pair_probability_per_mode: float = 0.01
    biphoton_bandwidth_hz: float = 1.8e6
    signal_wavelength_nm: float = 606.0
    idler_wavelength_nm: float = 1436.0
    statistics: str = "thermal"


@dataclass(frozen=True)
class ChannelParams:
    """One fibre path: loss, a static phase and a phase random walk.

    ``transmission_db`` is an alternative way of specifying the loss in a
    config file; validation folds it into the linear ``transmission`` and
    clears it.  ``phase_diffusion`` is the variance growth rate of the
    channel's phase random walk between lock stages, in rad^2/s.
    """

    transmission: float = 1.0
    transmission_db: float | None = None
    static_phase: float = 0.0
    phase_diffusion: float = 0.0
    propagation_delay: float = 0.0


@dataclass(frozen=True)
class MemoryParams:
    """Atomic-frequency-comb storage parameters for one node.

    The comb period is tied to the programmed storage time by
    ``comb_period_hz = 1 / storage_time``.  Retrieval efficiency may be
    given directly (``efficiency_at_tau``), through an exponential model
    ``efficiency_intercept * exp(-storage_time / efficiency_decay_time)``,
    or as a lookup table of ``(storage_time, efficiency)`` pairs (linear
    interpolation; used by storage-time sweeps).  ``absorption_efficiency``
    is the probability that an emitted signal photon ends up as a stored
    excitation (input coupling times comb absorption); it acts before
    heralding, unlike retrieval which acts at readout.

    The retrieved echo is modelled as a Gaussian in time centred
    ``echo_center_offset + echo_offset_slope * storage_time`` after the
    nominal re-emission time, with rms width ``echo_rms_width``.
    """

    storage_time: float = 2e-6
    efficiency_at_tau: float | None = None
    efficiency_intercept: float | None = None
    efficiency_decay_time: float | None = None
    efficiency_table: tuple[tuple[float, float], ...] | None = None
    absorption_efficiency: float = 1.0
    echo_center_offset: float = 0.0
    echo_offset_slope: float = 0.0
    echo_rms_width: float = 121.6e-9

    @property
    def comb_period_hz(self) -> float:
        return 1.0 / self.storage_time

    def echo_offset(self, storage_time: float | None = None) -> float:
        tau = self.storage_time if storage_time is None else storage_time
        return self.echo_center_offset + self.echo_offset_slope * tau

    def retrieval_efficiency(self, storage_time: float | None = None) -> float:
        """Retrieval efficiency at the given (default: configured) storage time."""
        tau = self.storage_time if storage_time is None else storage_time
        if self.efficiency_table is not None:
            taus = [t for t, _ in self.efficiency_table]
            etas = [e for _, e in self.efficiency_table]
            if tau <= taus[0]:
                return etas[0]
            if tau >= taus[-1]:
                return etas[-1]
            for i in range(len(taus) - 1):
                if taus[i] <= tau <= taus[i + 1]:
                    f = (tau - taus[i]) / (taus[i + 1] - taus[i])
                    return etas[i] + f * (etas[i + 1] - etas[i])
        if self.efficiency_intercept is not None:
            if self.efficiency_decay_time is None:
                raise ConfigError(
                    ["memory: efficiency_decay_time required with efficiency_intercept"]
                )
            return self.efficiency_intercept * math.exp(-tau / self.efficiency_decay_time)
        if self.efficiency_at_tau is not None:
            return self.efficiency_at_tau
        raise ConfigError(["memory: no retrieval efficiency specified"])


@dataclass(frozen=True)
class DetectorParams:
    """Single-photon detector model.

    ``response`` selects the click model applied per photon-number sector n:

    * ``threshold``: P(click) = 1 - (1 - dark) (1 - efficiency)^n, the
      saturating non-photon-number-resolving response of an SNSPD;
    * ``linear``: P(click) = dark + (1 - dark) * efficiency * n, the
      single-excitation-regime response.  A linear herald detector makes the
      heralded state exactly invariant under common idler loss, which the
      saturating response only satisfies to first order.

    ``dark_click_probability_per_window`` is quoted per detection window
    (one temporal mode for heralds, one coincidence window for readout).
    """

    efficiency: float = 0.9
    dark_click_probability_per_window: float = 0.0
    dead_time: float = 0.0
    response: str = "threshold"


@dataclass(frozen=True)
class TimingConfig:
    """Temporal structure of the experiment.

    The setup alternates phase-lock stages (no data) and measure stages of
    ``measure_period`` split into back-to-back temporal modes of
    ``mode_duration``.  ``duty_cycle`` is the measuring fraction of wall
    time; ``lock_period`` is derived from it when omitted.
    ``lock_residual`` is the rms phase error left in each interferometer at
    the end of a lock stage (model placeholder, not a measured value).
    ``communication_time`` is the round-trip herald latency that bounds the
    usable storage time and defines multiplexing trials.
    """

    mode_duration: float = 400e-9
    coincidence_window: float = 400e-9
    duty_cycle: float = 0.43
    measure_period: float = 10e-3
    lock_period: float | None = None
    lock_residual: float = 0.05
    communication_time: float = 25e-6

    @property
    def cycle_period(self) -> float:
        if self.lock_period is None:
            raise ConfigError(["timing.lock_period: not yet derived; validate first"])
        return self.measure_period + self.lock_period

    @property
    def modes_per_stage(self) -> int:
        return int(self.measure_period / self.mode_duration)


@dataclass(frozen=True)
class ReadoutSchedule:
    """How measure stages are spent between the two readout configurations.

    ``direct`` stages detect each signal arm separately (diagonal
    tomography); ``fringe`` stages recombine the arms on a beam splitter at
    a stepped analysis phase.  ``interleaved`` alternates the two with a
    deterministic pattern of period ``schedule_unit`` stages, a fraction
    ``direct_fraction`` of which are direct.  Fringe stages cycle through
    ``fringe_phase_count`` equally spaced phases offset by ``fixed_phase``.
    """

    mode: str = "interleaved"
    direct_fraction: float = 0.5
    fringe_phase_count: int = 8
    fixed_phase: float = 0.0
    schedule_unit: int = 16

    def direct_stages_per_unit(self) -> int:
        if self.mode == "direct":
            return self.schedule_unit
        if self.mode == "fringe":
            return 0
        return round(self.direct_fraction * self.schedule_unit)

    def stage_readout(self, stage_index: int) -> tuple[str, float | None]:
        """Return ('direct', None) or ('fringe', theta) for a measure stage."""
        n_direct = self.direct_stages_per_unit()
        unit = self.schedule_unit
        pos = stage_index % unit
        if pos < n_direct:
            return "direct", None
        fringe_before = (stage_index // unit) * (unit - n_direct) + (pos - n_direct)
        k = fringe_before % self.fringe_phase_count
        theta = self.fixed_phase + 2.0 * math.pi * k / self.fringe_phase_count
        return "fringe", theta

    def fringe_phases(self) -> list[float]:
        return [
            self.fixed_phase + 2.0 * math.pi * k / self.fringe_phase_count
            for k in range(self.fringe_phase_count)
        ]


@dataclass(frozen=True)
class LinkConfig:
    """Full parameterization of the two-node heralded link."""

    source_a: SourceParams = field(default_factory=SourceParams)
    source_b: SourceParams = field(default_factory=SourceParams)
    idler_channel_a: ChannelParams = field(default_factory=ChannelParams)
    idler_channel_b: ChannelParams = field(default_factory=ChannelParams)
    signal_channel_a: ChannelParams = field(default_factory=ChannelParams)
    signal_channel_b: ChannelParams = field(default_factory=ChannelParams)
    memory_a: MemoryParams = field(default_factory=MemoryParams)
    memory_b: MemoryParams = field(default_factory=MemoryParams)
    herald_detector_plus: DetectorParams = field(default_factory=DetectorParams)
    herald_detector_minus: DetectorParams = field(default_factory=DetectorParams)
    readout_detector_1: DetectorParams = field(default_factory=DetectorParams)
    readout_detector_2: DetectorParams = field(default_factory=DetectorParams)
    timing: TimingConfig = field(default_factory=TimingConfig)
    readout: ReadoutSchedule = field(default_factory=ReadoutSchedule)
    idler_mode_overlap: float = 0.90
    fock_truncation: int = 2


_SECTION_TYPES = {
    "source_a": SourceParams,
    "source_b": SourceParams,
    "idler_channel_a": ChannelParams,
    "idler_channel_b": ChannelParams,
    "signal_channel_a": ChannelParams,
    "signal_channel_b": ChannelParams,
    "memory_a": MemoryParams,
    "memory_b": MemoryParams,
    "herald_detector_plus": DetectorParams,
    "herald_detector_minus": DetectorParams,
    "readout_detector_1": DetectorParams,
    "readout_detector_2": DetectorParams,
    "timing": TimingConfig,
    "readout": ReadoutSchedule,
}

_LINK_SECTION = "link"


def _parse_scalar(text: str, target_type):
    text = text.strip()
    if target_type is str:
        return text
    if text.lower() in {"none", ""}:
        return None
    if target_type is int:
        return int(text)
    return float(text)


def _field_base_type(f: dataclasses.Field):
    # Fields are either plain scalars or Optional scalars; the table field
    # is handled separately.
    mapping = {
        "str": str,
        "int": int,
        "float": float,
        "float | None": float,
        "int | None": int,
        "tuple[tuple[float, float], ...] | None": tuple,
    }
    return mapping.get(f.type, float)


def _parse_table(text: str) -> tuple[tuple[float, float], ...]:
    """Parse 'tau1:eta1, tau2:eta2, ...' into a sorted efficiency table."""
    entries = []
    for chunk in text.replace("\n", ",").split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        tau_s, eta_s = chunk.split(":")
        entries.append((float(tau_s), float(eta_s)))
    entries.sort()
    return tuple(entries)


def _section_to_dataclass(section_name: str, items: dict, violations: list):
    cls = _SECTION_TYPES[section_name]
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in items.items():
        if key not in fields:
            violations.append(f"{section_name}.{key}: unknown key")
            continue
        try:
            if key == "efficiency_table":
                kwargs[key] = _parse_table(value)
            else:
                kwargs[key] = _parse_scalar(value, _field_base_type(fields[key]))
        except (ValueError, TypeError) as exc:
            violations.append(f"{section_name}.{key}: {exc}")
    return cls(**kwargs)


def loads_config(text: str) -> LinkConfig:
    """Parse the INI-style configuration text and validate it."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read_string(text)
    violations: list[str] = []
    kwargs = {}
    for section in parser.sections():
        if section == _LINK_SECTION:
            continue
        if section not in _SECTION_TYPES:
            violations.append(f"{section}: unknown section")
            continue
        kwargs[section] = _section_to_dataclass(section, dict(parser[section]), violations)
    link_items = dict(parser[_LINK_SECTION]) if parser.has_section(_LINK_SECTION) else {}
    for key, value in link_items.items():
        if key == "idler_mode_overlap":
            kwargs["idler_mode_overlap"] = float(value)
        elif key == "fock_truncation":
            kwargs["fock_truncation"] = int(value)
        else:
            violations.append(f"link.{key}: unknown key")
    if violations:
        raise ConfigError(violations)
    return validate(LinkConfig(**kwargs))


def load_config(path: str | Path) -> LinkConfig:
    """Load and validate a configuration file.

    A bare name such as ``fig2.cfg`` or ``fig2`` falls back to the packaged
    reference configurations when no such file exists.
    """
    p = Path(path)
    if not p.exists():
        ref = reference_config_path(p.name)
        if ref is not None:
            p = ref
        else:
            raise FileNotFoundError(f"config file not found: {path}")
    return loads_config(p.read_text())


def reference_config_path(name: str) -> Path | None:
    """Resolve a packaged reference config (fig2, fig3a, fig3b, fig4) by name."""
    if not name.endswith(".cfg"):
        name = name + ".cfg"
    resource = importlib.resources.files("afclink") / "configs" / name
    try:
        if resource.is_file():
            return Path(str(resource))
    except (OSError, ModuleNotFoundError):
        pass
    return None


def dumps_config(config: LinkConfig) -> str:
    """Serialize a config to canonical INI text (stable key order)."""
    parser = configparser.ConfigParser()
    for section, cls in _SECTION_TYPES.items():
        sub = getattr(config, section)
        parser[section] = {}
        for f in dataclasses.fields(cls):
            value = getattr(sub, f.name)
            if value is None:
                continue
            if f.name == "efficiency_table":
                parser[section][f.name] = ", ".join(f"{t!r}:{e!r}" for t, e in value)
            else:
                parser[section][f.name] = repr(value) if not isinstance(value, str) else value
    parser[_LINK_SECTION] = {
        "idler_mode_overlap": repr(config.idler_mode_overlap),
        "fock_truncation": repr(config.fock_truncation),
    }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def config_digest(config: LinkConfig) -> str:
    """SHA-256 digest of the canonical serialization of a validated config."""
    return hashlib.sha256(dumps_config(config).encode()).hexdigest()


def apply_overrides(config: LinkConfig, overrides: dict[str, str]) -> LinkConfig:
    """Apply dotted-path overrides like ``idler_channel_a.transmission_db=6.5``.

    Values are parsed with the same rules as config files; the result is
    re-validated.
    """
    violations: list[str] = []
    updates: dict[str, dict] = {}
    top_updates: dict[str, object] = {}
    for path, raw in overrides.items():
        if "." in path:
            section, key = path.split(".", 1)
            if section not in _SECTION_TYPES:
                violations.append(f"{section}: unknown section")
                continue
            updates.setdefault(section, {})[key] = raw
        elif path in ("idler_mode_overlap", "fock_truncation"):
            top_updates[path] = (
                int(raw) if path == "fock_truncation" else float(raw)
            )
        else:
            violations.append(f"{path}: unknown override")
    if violations:
        raise ConfigError(violations)
    kwargs: dict[str, object] = {}
    for section, items in updates.items():
        cls = _SECTION_TYPES[section]
        fields = {f.name: f for f in dataclasses.fields(cls)}
        current = getattr(config, section)
        replacements = {}
        for key, raw in items.items():
            if key not in fields:
                violations.append(f"{section}.{key}: unknown key")
                continue
            if key == "efficiency_table":
                replacements[key] = _parse_table(raw)
            else:
                replacements[key] = _parse_scalar(raw, _field_base_type(fields[key]))
        # dB override must displace a previously normalized linear value
        if "transmission_db" in replacements and "transmission" not in replacements:
            replacements["transmission"] = 1.0
        kwargs[section] = dataclasses.replace(current, **replacements)
    kwargs.update(top_updates)
    if violations:
        raise ConfigError(violations)
    return validate(dataclasses.replace(config, **kwargs))


def _check_range(violations, path, value, low, high, low_open=False, high_open=False):
    ok_low = value > low if low_open else value >= low
    ok_high = value < high if high_open else value <= high
    if not (ok_low and ok_high):
        violations.append(f"{path}: {value!r} out of range")


def _linear_detector_ok(efficiency: float, herald: bool, n_max: int) -> bool:
    """Positivity of the linear-response click model at this truncation.

    A single mode holds at most n_max photons, so the per-mode POVM needs
    efficiency * n_max <= 1.  A herald detector additionally sees the
    classically routed branch where 2 n_max photons split over two ports:
    its per-port click probability efficiency * n / 2 and the joint
    no-click probability 1 - eta n + eta^2 n (n-1)/4 must stay physical.
    """
    if efficiency * n_max > 1.0 + 1e-12:
        return False
    if herald:
        for n in range(2 * n_max + 1):
            if efficiency * n / 2.0 > 1.0 + 1e-12:
                return False
            if 1.0 - efficiency * n + efficiency**2 * n * (n - 1) / 4.0 < -1e-12:
                return False
    return True


def _validate_detector(violations, path, det: DetectorParams, herald: bool, n_max: int):
    _check_range(violations, f"{path}.efficiency", det.efficiency, 0.0, 1.0)
    _check_range(
        violations,
        f"{path}.dark_click_probability_per_window",
        det.dark_click_probability_per_window,
        0.0,
        1.0,
    )
    if det.dead_time < 0:
        violations.append(f"{path}.dead_time: must be >= 0")
    if det.response not in ("threshold", "linear"):
        violations.append(f"{path}.response: must be 'threshold' or 'linear'")
    elif det.response == "linear" and not _linear_detector_ok(
        det.efficiency, herald, n_max
    ):
        violations.append(
            f"{path}.efficiency: linear response unphysical at truncation {n_max}"
        )


def _normalize_channel(ch: ChannelParams) -> ChannelParams:
    if ch.transmission_db is not None:
        return dataclasses.replace(
            ch, transmission=db_to_linear(ch.transmission_db), transmission_db=None
        )
    return ch


def validate(config: LinkConfig) -> LinkConfig:
    """Validate and normalize a link configuration.

    Normalization converts dB losses to linear transmission and derives the
    lock period from the duty cycle when it is not given explicitly.  The
    operation is idempotent.  Raises :class:`ConfigError` listing every
    violated invariant with its field path.
    """
    violations: list[str] = []
    n_max = config.fock_truncation
    if n_max < 1:
        violations.append("link.fock_truncation: must be >= 1")

    for name in ("source_a", "source_b"):
        src = getattr(config, name)
        _check_range(
            violations,
            f"{name}.mean_pair_probability_per_mode",
            src.mean_pair_probability_per_mode,
            0.0,
            1.0,
            high_open=True,
        )
        if src.biphoton_bandwidth_hz <= 0:
            violations.append(f"{name}.biphoton_bandwidth_hz: must be > 0")
        if src.statistics not in ("thermal", "poisson"):
            violations.append(f"{name}.statistics: must be 'thermal' or 'poisson'")

    channels = {}
    for name in ("idler_channel_a", "idler_channel_b", "signal_channel_a", "signal_channel_b"):
        ch = _normalize_channel(getattr(config, name))
        channels[name] = ch
        _check_range(violations, f"{name}.transmission", ch.transmission, 0.0, 1.0)
        if ch.phase_diffusion < 0:
            violations.append(f"{name}.phase_diffusion: must be >= 0")
        if ch.propagation_delay < 0:
            violations.append(f"{name}.propagation_delay: must be >= 0")

    for name in ("memory_a", "memory_b"):
        mem = getattr(config, name)
        if mem.storage_time <= 0:
            violations.append(f"{name}.storage_time: must be > 0")
        _check_range(
            violations, f"{name}.absorption_efficiency", mem.absorption_efficiency, 0.0, 1.0
        )
        if mem.echo_rms_width <= 0:
            violations.append(f"{name}.echo_rms_width: must be > 0")
        has_model = (
            mem.efficiency_at_tau is not None
            or mem.efficiency_intercept is not None
            or mem.efficiency_table is not None
        )
        if not has_model:
            violations.append(f"{name}: no retrieval efficiency model specified")
        else:
            try:
                eta = mem.retrieval_efficiency()
                _check_range(violations, f"{name}.retrieval_efficiency", eta, 0.0, 1.0)
            except ConfigError as exc:
                violations.extend(f"{name}: {v}" for v in exc.violations)

    for name, herald_role in (
        ("herald_detector_plus", True),
        ("herald_detector_minus", True),
        ("readout_detector_1", False),
        ("readout_detector_2", False),
    ):
        _validate_detector(violations, name, getattr(config, name), herald_role, max(n_max, 1))

    t = config.timing
    if t.mode_duration <= 0:
        violations.append("timing.mode_duration: must be > 0")
    if t.coincidence_window <= 0:
        violations.append("timing.coincidence_window: must be > 0")
    _check_range(violations, "timing.duty_cycle", t.duty_cycle, 0.0, 1.0, low_open=True)
    if t.measure_period <= 0:
        violations.append("timing.measure_period: must be > 0")
    elif t.mode_duration > 0 and t.measure_period < t.mode_duration:
        violations.append("timing.measure_period: must hold at least one mode")
    if t.communication_time < 0:
        violations.append("timing.communication_time: must be >= 0")
    if t.lock_residual < 0:
        violations.append("timing.lock_residual: must be >= 0")

    timing = t
    if not violations and 0 < t.duty_cycle <= 1:
        if t.lock_period is None:
            if t.duty_cycle == 1.0:
                lock = 0.0
            else:
                lock = t.measure_period * (1.0 - t.duty_cycle) / t.duty_cycle
            timing = dataclasses.replace(t, lock_period=lock)
        else:
            if t.lock_period < 0:
                violations.append("timing.lock_period: must be >= 0")
            else:
                duty = t.measure_period / (t.measure_period + t.lock_period)
                # keep the configured duty cycle when it already matches the
                # periods (within rounding), so validation is idempotent
                if abs(duty - t.duty_cycle) > 1e-9:
                    timing = dataclasses.replace(t, duty_cycle=duty)

    r = config.readout
    if r.mode not in ("interleaved", "direct", "fringe"):
        violations.append("readout.mode: must be 'interleaved', 'direct' or 'fringe'")
    _check_range(violations, "readout.direct_fraction", r.direct_fraction, 0.0, 1.0)
    if r.fringe_phase_count < 4:
        violations.append("readout.fringe_phase_count: need >= 4 phases for a fringe fit")
    if r.schedule_unit < 1:
        violations.append("readout.schedule_unit: must be >= 1")

    _check_range(violations, "link.idler_mode_overlap", config.idler_mode_overlap, 0.0, 1.0)

    if violations:
        raise ConfigError(violations)

    return dataclasses.replace(
        config,
        idler_channel_a=channels["idler_channel_a"],
        idler_channel_b=channels["idler_channel_b"],
        signal_channel_a=channels["signal_channel_a"],
        signal_channel_b=channels["signal_channel_b"],
        timing=timing,
    )


def iter_detectors(config: LinkConfig) -> Iterator[tuple[str, DetectorParams]]:
    for name in (
        "herald_detector_plus",
        "herald_detector_minus",
        "readout_detector_1",
        "readout_detector_2",
    ):
        yield name, getattr(config, name)
