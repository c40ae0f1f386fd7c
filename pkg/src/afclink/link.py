"""Analytic end-to-end model of the heralded two-memory link.

Builds the joint state of the two memory modes and the two idler modes,
conditions on a telecom click behind the central beam splitter, reads the
memories out after storage, and predicts every figure of merit of the link:
joint excitation probabilities, fringe visibility, concurrence, heralded
cross-correlation, effective fidelity and heralding rate.

Mode layout of the pre-herald state: 0 = memory A, 1 = idler A,
2 = memory B, 3 = idler B.

Partial indistinguishability of the idlers (overlap eta_ov < 1) is treated
as a convex mixture: with weight eta_ov the idlers interfere on the beam
splitter; with weight 1 - eta_ov they are routed classically (each photon
independently picks a port), which conditions the memories on a
number-diagonal operator and therefore leaves no inter-memory coherence.
Both branches stay inside the four-mode space.

All functions are pure; parameter sweeps can run them concurrently on a
shared validated config.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import analysis_formulas as formulas
from .config import DetectorParams, LinkConfig, MemoryParams
from .fock import BosonicState, FockError, detector_click_weights, pair_source_state

__all__ = [
    "LinkModelError",
    "UnheraldableConfigurationError",
    "MODE_MEMORY_A",
    "MODE_IDLER_A",
    "MODE_MEMORY_B",
    "MODE_IDLER_B",
    "HeraldOutcome",
    "VisibilityBudget",
    "PredictedStats",
    "build_pre_herald_state",
    "herald",
    "herald_patterns",
    "readout_probabilities",
    "readout_direct",
    "readout_fringe",
    "visibility_budget",
    "predict_stats",
    "window_capture_fraction",
    "window_leak_fraction",
    "stray_click_probabilities",
    "overlay_stray_clicks",
    "unconditional_memory_state",
    "echo_overlap",
    "phase_noise_factor",
    "readout_arm_efficiencies",
    "signal_path_efficiency",
    "fringe_extrema",
]

MODE_MEMORY_A = 0
MODE_IDLER_A = 1
MODE_MEMORY_B = 2
MODE_IDLER_B = 3

HERALD_PATTERNS = ("none", "plus", "minus", "both")
READOUT_PATTERNS = ("none", "r1", "r2", "both")


class LinkModelError(RuntimeError):
    """Raised when the link model cannot evaluate a configuration."""


class UnheraldableConfigurationError(LinkModelError):
    """The herald click probability vanishes (e.g. sources off, no darks)."""


# ---------------------------------------------------------------------------
# state construction


def build_pre_herald_state(config: LinkConfig) -> BosonicState:
    """Joint state of (memory A, idler A, memory B, idler B) before heralding.

    Tensor product of the two source states with idler-channel loss and
    static idler phases applied; the probability that an emitted signal
    photon became a stored excitation (input coupling times comb absorption)
    is folded into the memory mode.  Retrieval efficiency and signal-path
    loss act later, at readout.
    """
    n_max = config.fock_truncation
    node_a = pair_source_state(
        config.source_a.mean_pair_probability_per_mode, n_max, config.source_a.statistics
    )
    node_b = pair_source_state(
        config.source_b.mean_pair_probability_per_mode, n_max, config.source_b.statistics
    )
    state = node_a.tensor(node_b)
    state = state.apply_loss(MODE_MEMORY_A, config.memory_a.absorption_efficiency)
    state = state.apply_loss(MODE_MEMORY_B, config.memory_b.absorption_efficiency)
    state = state.apply_loss(MODE_IDLER_A, config.idler_channel_a.transmission)
    state = state.apply_loss(MODE_IDLER_B, config.idler_channel_b.transmission)
    if config.idler_channel_a.static_phase:
        state = state.apply_phase(MODE_IDLER_A, config.idler_channel_a.static_phase)
    if config.idler_channel_b.static_phase:
        state = state.apply_phase(MODE_IDLER_B, config.idler_channel_b.static_phase)
    return state


# ---------------------------------------------------------------------------
# heralding


@dataclass(frozen=True)
class HeraldOutcome:
    """Result of conditioning on a click at one output of the idler splitter."""

    herald_probability_per_mode: float
    conditional_memory_state: BosonicState
    heralding_detector: str


@lru_cache(maxsize=16)
def _port_number_operators(n_max: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact pullbacks of the splitter-output photon numbers onto the inputs.

    For the balanced splitter convention used by the engine,
    n_plus = (n_a + n_b + a+b + a b+)/2 and n_minus its conjugate port.
    The operators (and their product, needed for joint click patterns) are
    built on an enlarged space and compressed to the working truncation, so
    expectation values against truncated states are exact physics: no
    total-photon sector is mangled, unlike pushing the state through the
    projected splitter unitary.
    """
    dim_ext = n_max + 3
    a_dag = np.diag(np.sqrt(np.arange(1, dim_ext)), k=-1).astype(complex)
    a = a_dag.conj().T
    eye = np.eye(dim_ext, dtype=complex)
    num = a_dag @ a
    n_tot = np.kron(num, eye) + np.kron(eye, num)
    cross = np.kron(a_dag, a) + np.kron(a, a_dag)
    n_plus = (n_tot + cross) / 2.0
    n_minus = (n_tot - cross) / 2.0
    product = n_plus @ n_minus
    keep = [
        ia * dim_ext + ib
        for ia in range(n_max + 1)
        for ib in range(n_max + 1)
    ]
    idx = np.ix_(keep, keep)
    return n_plus[idx], n_minus[idx], product[idx]


def _linear_pattern_operators(
    detectors: tuple[DetectorParams, DetectorParams], n_max: int
) -> dict[str, np.ndarray]:
    """Joint click-pattern POVM elements of two linear-response heralds.

    The port photon numbers commute, so the joint pattern operators are
    products of the per-port click/no-click elements, expanded through the
    compressed n_plus, n_minus and n_plus n_minus operators.
    """
    det_p, det_m = detectors
    n_plus, n_minus, product = _port_number_operators(n_max)
    eye = np.eye(n_plus.shape[0], dtype=complex)
    dp, dm = (
        det_p.dark_click_probability_per_window,
        det_m.dark_click_probability_per_window,
    )
    kp, km = det_p.efficiency, det_m.efficiency
    click_p = dp * eye + (1.0 - dp) * kp * n_plus
    click_m = dm * eye + (1.0 - dm) * km * n_minus
    both = (
        dp * dm * eye
        + dp * (1.0 - dm) * km * n_minus
        + dm * (1.0 - dp) * kp * n_plus
        + (1.0 - dp) * (1.0 - dm) * kp * km * product
    )
    return {
        "none": eye - click_p - click_m + both,
        "plus": click_p - both,
        "minus": click_m - both,
        "both": both,
    }


def _distinguishable_pattern_weights(
    detectors: tuple[DetectorParams, DetectorParams], n_max: int
) -> dict[str, np.ndarray]:
    """Click-pattern probabilities for classically routed idler photons.

    Diagonal in the joint (idler A, idler B) number basis: each photon
    independently exits either port of the balanced splitter; no two-photon
    interference.  Returns weights over the flattened joint basis for the
    four patterns none/plus/minus/both.
    """
    det_p, det_m = detectors
    dim = n_max + 1
    n_tot = (np.arange(dim)[:, None] + np.arange(dim)[None, :]).astype(float)
    dp = det_p.dark_click_probability_per_window
    dm = det_m.dark_click_probability_per_window
    if det_p.response == "linear":
        no_p = (1.0 - dp) * (1.0 - det_p.efficiency * n_tot / 2.0)
    else:
        no_p = (1.0 - dp) * (1.0 - det_p.efficiency / 2.0) ** n_tot
    if det_m.response == "linear":
        no_m = (1.0 - dm) * (1.0 - det_m.efficiency * n_tot / 2.0)
    else:
        no_m = (1.0 - dm) * (1.0 - det_m.efficiency / 2.0) ** n_tot
    if det_p.response == "linear" and det_m.response == "linear":
        cross = (
            1.0
            - (det_p.efficiency + det_m.efficiency) * n_tot / 2.0
            + det_p.efficiency * det_m.efficiency * n_tot * (n_tot - 1.0) / 4.0
        )
        no_both = (1.0 - dp) * (1.0 - dm) * cross
    elif det_p.response == "linear" or det_m.response == "linear":
        raise LinkModelError("herald detectors must share the same response model")
    else:
        miss = 1.0 - det_p.efficiency / 2.0 - det_m.efficiency / 2.0
        if miss < 0:
            raise LinkModelError("herald detector efficiencies exceed unity combined")
        no_both = (1.0 - dp) * (1.0 - dm) * miss**n_tot
    if np.min(no_both) < -1e-9:
        raise LinkModelError("linear herald response unphysical at this truncation")
    no_both = np.clip(no_both, 0.0, None)
    w_none = no_both
    w_plus = np.clip(no_m - no_both, 0.0, None)
    w_minus = np.clip(no_p - no_both, 0.0, None)
    w_both = np.clip(1.0 - no_p - no_m + no_both, 0.0, None)
    total = w_none + w_plus + w_minus + w_both
    return {
        "none": (w_none / total).ravel(),
        "plus": (w_plus / total).ravel(),
        "minus": (w_minus / total).ravel(),
        "both": (w_both / total).ravel(),
    }


def _interfering_pattern_weights(
    detectors: tuple[DetectorParams, DetectorParams], n_max: int
) -> dict[str, np.ndarray]:
    """Joint click-pattern weights over the two output ports after mixing."""
    no_p, click_p = detector_click_weights(detectors[0], n_max)
    no_m, click_m = detector_click_weights(detectors[1], n_max)
    return {
        "none": np.outer(no_p, no_m).ravel(),
        "plus": np.outer(click_p, no_m).ravel(),
        "minus": np.outer(no_p, click_m).ravel(),
        "both": np.outer(click_p, click_m).ravel(),
    }


def herald_patterns(
    state: BosonicState,
    detectors: tuple[DetectorParams, DetectorParams],
    idler_overlap: float,
) -> dict[str, tuple[float, BosonicState | None]]:
    """Joint herald click-pattern probabilities and conditional memory states.

    Mixes the interfering and the classically routed idler branches with
    weights (eta_ov, 1 - eta_ov).  Patterns: none, plus, minus, both.
    Conditional states live on (memory A, memory B) and are None when the
    pattern probability vanishes.
    """
    n_max = state.n_max
    order = list(HERALD_PATTERNS)

    responses = {detectors[0].response, detectors[1].response}
    if responses == {"linear"}:
        ops = _linear_pattern_operators(detectors, n_max)
        res_int = state.measure_povm(
            [MODE_IDLER_A, MODE_IDLER_B], [ops[p] for p in order]
        )
    elif responses == {"threshold"}:
        mixed = state.apply_beam_splitter(MODE_IDLER_A, MODE_IDLER_B, 0.5, 0.0)
        w_int = _interfering_pattern_weights(detectors, n_max)
        res_int = mixed.measure_diagonal(
            [MODE_IDLER_A, MODE_IDLER_B], [w_int[p] for p in order]
        )
    else:
        raise LinkModelError("herald detectors must share the same response model")

    if idler_overlap < 1.0:
        w_dist = _distinguishable_pattern_weights(detectors, n_max)
        res_dist = state.measure_diagonal(
            [MODE_IDLER_A, MODE_IDLER_B], [w_dist[p] for p in order]
        )
    else:
        res_dist = res_int

    out: dict[str, tuple[float, BosonicState | None]] = {}
    for name, (p_i, rho_i), (p_d, rho_d) in zip(order, res_int, res_dist):
        prob = idler_overlap * p_i + (1.0 - idler_overlap) * p_d
        if prob <= 0.0:
            out[name] = (0.0, None)
            continue
        parts = []
        if p_i > 0 and rho_i is not None:
            parts.append(idler_overlap * p_i * rho_i.density_matrix)
        if idler_overlap < 1.0 and p_d > 0 and rho_d is not None:
            parts.append((1.0 - idler_overlap) * p_d * rho_d.density_matrix)
        rho = sum(parts) / prob
        out[name] = (prob, BosonicState(2, n_max, rho))
    return out


def herald(
    state: BosonicState,
    detector: DetectorParams,
    port: str = "plus",
    idler_overlap: float = 1.0,
) -> HeraldOutcome:
    """Condition on a click at one output of the balanced idler splitter.

    Returns the click probability per temporal mode and the normalized
    two-mode memory state with both idler modes removed.  The unmonitored
    port is traced over (the click condition is marginal in it).  Heralding
    on the other port flips the sign of the conditioned coherence.
    """
    if port not in ("plus", "minus"):
        raise LinkModelError(f"unknown herald port {port!r}")
    n_max = state.n_max
    if detector.response == "linear":
        n_plus, n_minus, _ = _port_number_operators(n_max)
        n_port = n_plus if port == "plus" else n_minus
        dark = detector.dark_click_probability_per_window
        eye = np.eye(n_port.shape[0], dtype=complex)
        e_click = dark * eye + (1.0 - dark) * detector.efficiency * n_port
        (p_int, rho_int), _ = state.measure_povm(
            [MODE_IDLER_A, MODE_IDLER_B], [e_click, eye - e_click]
        )
    else:
        no_click, click = detector_click_weights(detector, n_max)
        ones = np.ones(n_max + 1)
        if port == "plus":
            w_click = np.outer(click, ones).ravel()
            w_none = np.outer(no_click, ones).ravel()
        else:
            w_click = np.outer(ones, click).ravel()
            w_none = np.outer(ones, no_click).ravel()
        mixed = state.apply_beam_splitter(MODE_IDLER_A, MODE_IDLER_B, 0.5, 0.0)
        (p_int, rho_int), _ = mixed.measure_diagonal(
            [MODE_IDLER_A, MODE_IDLER_B], [w_click, w_none]
        )

    if idler_overlap < 1.0:
        dim = n_max + 1
        n_tot = (np.arange(dim)[:, None] + np.arange(dim)[None, :]).astype(float)
        dark = detector.dark_click_probability_per_window
        if detector.response == "linear":
            no = (1.0 - dark) * (1.0 - detector.efficiency * n_tot / 2.0)
        else:
            no = (1.0 - dark) * (1.0 - detector.efficiency / 2.0) ** n_tot
        no = np.clip(no, 0.0, 1.0).ravel()
        (p_dist, rho_dist), _ = state.measure_diagonal(
            [MODE_IDLER_A, MODE_IDLER_B], [1.0 - no, no]
        )
    else:
        p_dist, rho_dist = p_int, rho_int

    prob = idler_overlap * p_int + (1.0 - idler_overlap) * p_dist
    if prob <= 0.0:
        raise UnheraldableConfigurationError(
            "unheraldable configuration: herald click probability is zero"
        )
    parts = []
    if p_int > 0 and rho_int is not None:
        parts.append(idler_overlap * p_int * rho_int.density_matrix)
    if idler_overlap < 1.0 and p_dist > 0 and rho_dist is not None:
        parts.append((1.0 - idler_overlap) * p_dist * rho_dist.density_matrix)
    rho = sum(parts) / prob
    return HeraldOutcome(prob, BosonicState(2, n_max, rho), port)


# ---------------------------------------------------------------------------
# readout


def window_capture_fraction(offset: float, rms_width: float, window: float) -> float:
    """Fraction of a Gaussian echo inside a centred coincidence window."""
    s = rms_width * math.sqrt(2.0)
    hi = (window / 2.0 - offset) / s
    lo = (-window / 2.0 - offset) / s
    return 0.5 * (math.erf(hi) - math.erf(lo))


def readout_arm_efficiencies(
    config: LinkConfig,
    storage_time: float | None = None,
    window_capture: bool = True,
) -> tuple[float, float]:
    """Loss applied to each memory mode at readout (detector excluded).

    Product of AFC retrieval efficiency, signal-channel transmission and,
    unless disabled, the coincidence-window capture fraction of the echo.
    The event simulator disables the capture term because it realises the
    same acceptance physically, through echo-time jitter against the
    analysis window.
    """
    window = config.timing.coincidence_window
    etas = []
    for mem, chan in (
        (config.memory_a, config.signal_channel_a),
        (config.memory_b, config.signal_channel_b),
    ):
        tau = mem.storage_time if storage_time is None else storage_time
        eta = mem.retrieval_efficiency(tau) * chan.transmission
        if window_capture:
            eta *= window_capture_fraction(mem.echo_offset(tau), mem.echo_rms_width, window)
        etas.append(eta)
    return etas[0], etas[1]


def signal_path_efficiency(config: LinkConfig, arm: str) -> float:
    """Total detection efficiency of one signal path downstream of the crystal.

    Used as the default back-tracing efficiency: retrieval x fibre x window
    capture x readout detector efficiency.
    """
    eta_a, eta_b = readout_arm_efficiencies(config)
    if arm == "a":
        return eta_a * config.readout_detector_1.efficiency
    if arm == "b":
        return eta_b * config.readout_detector_2.efficiency
    raise LinkModelError(f"unknown arm {arm!r}")


def _apply_readout_loss(
    state: BosonicState, config: LinkConfig, window_capture: bool = True
) -> BosonicState:
    eta_a, eta_b = readout_arm_efficiencies(config, window_capture=window_capture)
    return state.apply_loss(0, eta_a).apply_loss(1, eta_b)


def readout_direct(
    memory_state: BosonicState, config: LinkConfig, window_capture: bool = True
) -> dict[str, float]:
    """Separate detection of each signal arm: joint click probabilities p_ij.

    p_ij is the probability of a click pattern (i on arm A, j on arm B)
    per herald; the four patterns are exhaustive so they sum to one.
    """
    state = _apply_readout_loss(memory_state, config, window_capture)
    no_1, click_1 = detector_click_weights(config.readout_detector_1, state.n_max)
    no_2, click_2 = detector_click_weights(config.readout_detector_2, state.n_max)
    weights = [
        np.outer(no_1, no_2).ravel(),
        np.outer(no_1, click_2).ravel(),
        np.outer(click_1, no_2).ravel(),
        np.outer(click_1, click_2).ravel(),
    ]
    res = state.measure_diagonal([0, 1], weights)
    return {
        "p00": res[0][0],
        "p01": res[1][0],
        "p10": res[2][0],
        "p11": res[3][0],
    }


def readout_fringe(
    memory_state: BosonicState,
    config: LinkConfig,
    analysis_phase: float,
    coherence_scale: float = 1.0,
    window_capture: bool = True,
) -> dict[str, float]:
    """Recombine the signal arms at a stepped analysis phase.

    Applies the coherence penalty ``coherence_scale`` (echo-envelope overlap
    and, for analytic predictions, the averaged phase noise), the readout
    losses, the analysis phase on arm A, a balanced beam splitter and the
    two readout detectors.  Returns the click probabilities of the four
    joint patterns plus the per-output marginals.
    """
    state = memory_state
    if coherence_scale < 1.0:
        state = state.scale_coherences(coherence_scale)
    state = _apply_readout_loss(state, config, window_capture)
    phi = (
        analysis_phase
        + config.signal_channel_a.static_phase
        - config.signal_channel_b.static_phase
    )
    state = state.apply_phase(0, phi)
    state = state.apply_beam_splitter(0, 1, 0.5, 0.0)
    no_1, click_1 = detector_click_weights(config.readout_detector_1, state.n_max)
    no_2, click_2 = detector_click_weights(config.readout_detector_2, state.n_max)
    weights = [
        np.outer(no_1, no_2).ravel(),
        np.outer(no_1, click_2).ravel(),
        np.outer(click_1, no_2).ravel(),
        np.outer(click_1, click_2).ravel(),
    ]
    res = state.measure_diagonal([0, 1], weights)
    p_none, p_only2, p_only1, p_both = (r[0] for r in res)
    return {
        "none": p_none,
        "r2": p_only2,
        "r1": p_only1,
        "both": p_both,
        "click_1": p_only1 + p_both,
        "click_2": p_only2 + p_both,
    }


def readout_probabilities(
    outcome: HeraldOutcome | BosonicState,
    config: LinkConfig,
    analysis_phase: float | None = None,
    coherence_scale: float = 1.0,
) -> dict[str, float]:
    """Readout of a heralded state: direct p_ij or fringe probabilities.

    With ``analysis_phase=None`` each arm is detected separately and the
    joint excitation probabilities p_ij are returned; with a phase the two
    arms interfere on a balanced splitter and the per-output fringe
    probabilities are returned.
    """
    state = (
        outcome.conditional_memory_state
        if isinstance(outcome, HeraldOutcome)
        else outcome
    )
    if state.mode_count != 2:
        raise LinkModelError("readout expects a two-mode memory state")
    if analysis_phase is None:
        return readout_direct(state, config)
    return readout_fringe(state, config, analysis_phase, coherence_scale)


# ---------------------------------------------------------------------------
# accidental coincidences from neighbouring temporal modes


def window_leak_fraction(
    mode_duration: float,
    window: float,
    jitter_sigma: float,
    center_offset: float = 0.0,
) -> float:
    """Probability that another mode's echo falls inside a herald's window.

    Emission times are uniform within their temporal modes, so the echo of
    the mode k bins away sits at k T + triangular(-T, T) plus the Gaussian
    echo jitter, relative to the window centre (shifted by the echo's mean
    offset).  Summed over all neighbours k != 0; the own mode (k = 0) is the
    heralded echo itself, handled by the conditional readout tables.
    """
    T = mode_duration
    sig = max(jitter_sigma, 1e-15)
    max_k = int(math.ceil((window / 2.0 + T + 5.0 * sig + abs(center_offset)) / T))
    d = np.linspace(-T, T, 4001)
    tri = (T - np.abs(d)) / T**2
    total = 0.0
    for k in range(-max_k, max_k + 1):
        if k == 0:
            continue
        shift = k * T + d + center_offset
        inside = 0.5 * (
            erf_vec((window / 2.0 - shift) / (sig * math.sqrt(2.0)))
            - erf_vec((-window / 2.0 - shift) / (sig * math.sqrt(2.0)))
        )
        total += float(np.trapezoid(tri * inside, d))
    return min(total, 1.0)


def erf_vec(x: np.ndarray) -> np.ndarray:
    from scipy.special import erf

    return erf(np.asarray(x))


@lru_cache(maxsize=8)
def unconditional_memory_state(config: LinkConfig) -> BosonicState:
    """Per-mode memory state with no herald condition (idlers traced out)."""
    pre = build_pre_herald_state(config)
    return pre.trace_out(MODE_IDLER_B).trace_out(MODE_IDLER_A)


@lru_cache(maxsize=8)
def _window_leaks(config: LinkConfig) -> tuple[float, float]:
    """Temporal leak fraction of neighbouring modes per readout channel."""
    timing = config.timing
    tau_mean = 0.5 * (config.memory_a.storage_time + config.memory_b.storage_time)
    leaks = []
    for mem_params in (config.memory_a, config.memory_b):
        mu = mem_params.storage_time + mem_params.echo_offset() - tau_mean
        leaks.append(
            window_leak_fraction(
                timing.mode_duration,
                timing.coincidence_window,
                mem_params.echo_rms_width,
                mu,
            )
        )
    return leaks[0], leaks[1]


def stray_click_probabilities(
    config: LinkConfig, analysis_phase: float | None = None
) -> tuple[float, float]:
    """Per-herald probability of an unrelated click in each readout window.

    Product of the unconditional per-mode click probability of the channel
    (dark counts included) and the temporal leak fraction of neighbouring
    modes into the coincidence window.  ``analysis_phase=None`` gives the
    separate-detection strays, a phase gives the recombined-arm ones.
    """
    mem = unconditional_memory_state(config)
    leaks = _window_leaks(config)
    if analysis_phase is None:
        probs = readout_direct(mem, config, window_capture=False)
        click_1 = probs["p10"] + probs["p11"]
        click_2 = probs["p01"] + probs["p11"]
        return click_1 * leaks[0], click_2 * leaks[1]
    f = readout_fringe(mem, config, analysis_phase, window_capture=False)
    # behind the recombining splitter either memory's echo reaches either
    # output, so both outputs share the averaged temporal leak
    leak = 0.5 * (leaks[0] + leaks[1])
    return f["click_1"] * leak, f["click_2"] * leak


def overlay_stray_clicks(
    probs: dict[str, float], stray_1: float, stray_2: float
) -> dict[str, float]:
    """Joint click pattern after adding independent stray clicks per arm."""
    p00, p01, p10, p11 = probs["p00"], probs["p01"], probs["p10"], probs["p11"]
    return {
        "p00": p00 * (1.0 - stray_1) * (1.0 - stray_2),
        "p01": (1.0 - stray_1) * (p01 + p00 * stray_2),
        "p10": (1.0 - stray_2) * (p10 + p00 * stray_1),
        "p11": p11 + p10 * stray_2 + p01 * stray_1 + p00 * stray_1 * stray_2,
    }


# ---------------------------------------------------------------------------
# visibility budget


@dataclass(frozen=True)
class VisibilityBudget:
    """Multiplicative penalties limiting the fringe visibility."""

    phase_noise_factor: float
    idler_overlap_factor: float
    echo_overlap_factor: float

    @property
    def total(self) -> float:
        return self.phase_noise_factor * self.idler_overlap_factor * self.echo_overlap_factor


def phase_noise_factor(
    diffusion_total: float,
    residual_variance: float,
    measure_period: float,
    extra_variance: float = 0.0,
) -> float:
    """Time-averaged coherence of a relocked phase random walk.

    The interferometer phase after a lock stage is Gaussian with variance
    residual_variance + diffusion_total * t; averaging exp(-var/2) over a
    measure window of length T gives
    exp(-(residual_variance + extra_variance)/2) * (1 - e^{-DT/2})/(DT/2).
    """
    base = math.exp(-(residual_variance + extra_variance) / 2.0)
    x = diffusion_total * measure_period / 2.0
    if x <= 0.0:
        return base
    return base * (1.0 - math.exp(-x)) / x


def echo_overlap(memory_a: MemoryParams, memory_b: MemoryParams,
                 storage_time: float | None = None) -> float:
    """Amplitude overlap of two unit-norm Gaussian echo envelopes."""
    sa = memory_a.echo_rms_width
    sb = memory_b.echo_rms_width
    dmu = memory_a.echo_offset(storage_time) - memory_b.echo_offset(storage_time)
    s2 = sa * sa + sb * sb
    return math.sqrt(2.0 * sa * sb / s2) * math.exp(-(dmu * dmu) / (4.0 * s2))


def visibility_budget(config: LinkConfig) -> VisibilityBudget:
    """The three multiplicative visibility penalties of the link.

    Phase noise in the fibres (time-averaged over a measure stage), the
    idler-mode overlap at the central splitter, and the overlap of the two
    retrieved echo envelopes.  The total is their product; the idler factor
    already acts inside the heralded state, the other two damp the fringe
    at readout.
    """
    d_idler = (
        config.idler_channel_a.phase_diffusion + config.idler_channel_b.phase_diffusion
    )
    d_signal = (
        config.signal_channel_a.phase_diffusion + config.signal_channel_b.phase_diffusion
    )
    tau = 0.5 * (config.memory_a.storage_time + config.memory_b.storage_time)
    residual_var = 2.0 * config.timing.lock_residual**2
    pnf = phase_noise_factor(
        d_idler + d_signal,
        residual_var,
        config.timing.measure_period,
        extra_variance=d_signal * tau,
    )
    return VisibilityBudget(
        phase_noise_factor=pnf,
        idler_overlap_factor=config.idler_mode_overlap,
        echo_overlap_factor=echo_overlap(config.memory_a, config.memory_b),
    )


# ---------------------------------------------------------------------------
# fringe extrema and full prediction


def fringe_extrema(samples: np.ndarray) -> tuple[float, float]:
    """Exact extrema of a trigonometric polynomial from uniform samples.

    ``samples`` are f(theta_k) on a uniform grid over [0, 2 pi); the number
    of samples must exceed twice the polynomial degree.  The extrema are
    located on a dense grid and polished with Newton steps on the Fourier
    representation.
    """
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    coeff = np.fft.rfft(samples) / n

    ks = np.arange(coeff.size)

    def value(theta):
        ph = np.exp(1j * np.outer(np.atleast_1d(theta), ks))
        vals = coeff[0].real + 2.0 * (ph[:, 1:] * coeff[1:]).real.sum(axis=1)
        return vals

    def deriv(theta, order=1):
        fac = (1j * ks) ** order
        ph = np.exp(1j * np.outer(np.atleast_1d(theta), ks))
        return 2.0 * (ph[:, 1:] * (fac[1:] * coeff[1:])).real.sum(axis=1)

    grid = np.linspace(0.0, 2.0 * math.pi, 8192, endpoint=False)
    vals = value(grid)

    def refine(theta0):
        th = float(theta0)
        for _ in range(60):
            d1 = float(deriv(th, 1)[0])
            d2 = float(deriv(th, 2)[0])
            if d2 == 0.0:
                break
            step = d1 / d2
            th -= step
            if abs(step) < 1e-15:
                break
        return float(value(th)[0])

    hi = refine(grid[int(np.argmax(vals))])
    lo = refine(grid[int(np.argmin(vals))])
    return max(hi, float(vals.max())), min(lo, float(vals.min()))


@dataclass(frozen=True)
class PredictedStats:
    """Complete analytic prediction for one link configuration."""

    p00: float
    p01: float
    p10: float
    p11: float
    visibility: float
    coherence: float
    concurrence: float
    h2c: float
    effective_fidelity: float
    herald_rate_hz: float
    herald_probability_per_mode: float
    budget: VisibilityBudget

    def probabilities(self) -> dict[str, float]:
        return {"p00": self.p00, "p01": self.p01, "p10": self.p10, "p11": self.p11}

    def to_json_dict(self) -> dict:
        return {
            "p00": self.p00,
            "p01": self.p01,
            "p10": self.p10,
            "p11": self.p11,
            "visibility": self.visibility,
            "coherence": self.coherence,
            "concurrence": self.concurrence,
            "h2c": self.h2c,
            "effective_fidelity": self.effective_fidelity,
            "herald_rate_hz": self.herald_rate_hz,
            "herald_probability_per_mode": self.herald_probability_per_mode,
            "visibility_budget": {
                "phase_noise_factor": self.budget.phase_noise_factor,
                "idler_overlap_factor": self.budget.idler_overlap_factor,
                "echo_overlap_factor": self.budget.echo_overlap_factor,
                "total": self.budget.total,
            },
        }


def fringe_visibility(
    memory_state: BosonicState,
    config: LinkConfig,
    coherence_scale: float = 1.0,
    output: str = "click_1",
    n_samples: int = 32,
    include_accidentals: bool = False,
) -> float:
    """Visibility (max-min)/(max+min) of the analysis-phase fringe.

    With ``include_accidentals`` the phase-independent background of
    neighbouring-mode echoes leaking into the coincidence window is overlaid
    on each sample, as the windowed analysis of a real stream sees it.
    """
    thetas = np.linspace(0.0, 2.0 * math.pi, n_samples, endpoint=False)
    probs = []
    for th in thetas:
        p = readout_fringe(memory_state, config, float(th), coherence_scale)[output]
        if include_accidentals:
            s1, s2 = stray_click_probabilities(config, float(th))
            s = s1 if output == "click_1" else s2
            p = p + s * (1.0 - p)
        probs.append(p)
    hi, lo = fringe_extrema(np.array(probs))
    if hi + lo <= 0.0:
        return 0.0
    return (hi - lo) / (hi + lo)


def predict_stats(
    config: LinkConfig, port: str = "plus", include_accidentals: bool = True
) -> PredictedStats:
    """Analytic prediction of every reported statistic of the link.

    Composes state construction, heralding and readout; the fringe
    visibility carries the idler-overlap penalty through the heralded state
    and the phase-noise and echo-overlap penalties as a coherence scale at
    the readout splitter.  The heralding rate converts the per-mode click
    probability to wall time through the mode duration and the duty cycle.

    By default the prediction includes accidental coincidences (echoes of
    neighbouring temporal modes leaking into the coincidence window), so it
    matches what the windowed analysis of an event stream measures; the
    published statistics contain the same background.  Disable it to obtain
    the isolated-mode conditional statistics.
    """
    pre = build_pre_herald_state(config)
    detector = (
        config.herald_detector_plus if port == "plus" else config.herald_detector_minus
    )
    outcome = herald(pre, detector, port, config.idler_mode_overlap)

    probs = readout_direct(outcome.conditional_memory_state, config)
    if include_accidentals:
        stray_1, stray_2 = stray_click_probabilities(config)
        probs = overlay_stray_clicks(probs, stray_1, stray_2)
    budget = visibility_budget(config)
    lam = budget.phase_noise_factor * budget.echo_overlap_factor
    vis = fringe_visibility(
        outcome.conditional_memory_state,
        config,
        lam,
        include_accidentals=include_accidentals,
    )

    p01, p10, p11, p00 = probs["p01"], probs["p10"], probs["p11"], probs["p00"]
    d = formulas.coherence_from_visibility(vis, p01, p10)
    conc = formulas.concurrence_value(p00, p01, p10, p11, vis)
    h2c = formulas.h2c_value(p01, p10, p11)
    f_eff = formulas.effective_fidelity_closed_form(p01, p10, p11, vis)
    rate = (
        outcome.herald_probability_per_mode
        / config.timing.mode_duration
        * config.timing.duty_cycle
    )
    return PredictedStats(
        p00=p00,
        p01=p01,
        p10=p10,
        p11=p11,
        visibility=vis,
        coherence=d,
        concurrence=conc,
        h2c=h2c,
        effective_fidelity=f_eff,
        herald_rate_hz=rate,
        herald_probability_per_mode=outcome.herald_probability_per_mode,
        budget=budget,
    )
