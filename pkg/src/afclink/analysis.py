"""Estimators turning event streams into the link's figures of merit.

Coincidence counting conditions readout clicks on heralds within a fixed
window delayed by the storage time; the diagonal click patterns give the
joint excitation probabilities, the recombined-arm stages give fringe scans
whose fitted contrast is the visibility.  From those the module computes
the concurrence, the heralded cross-correlation, the effective fidelity
(through both its closed form and the fidelity of reconstructed matrices),
back-traced values at the crystal, and a reconstructed density matrix.

Uncertainties use first-order propagation with the multinomial covariance
of the click-pattern fractions by default; a bootstrap over heralds is
available where propagation is too crude.  Counting is single pass and can
be sharded by trial ranges with additive merging of the counts.
"""

from __future__ import annotations

import dataclasses
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import curve_fit

from . import analysis_formulas as formulas
from .config import LinkConfig, TimingConfig
from .events import (
    CH_HERALD_MINUS,
    CH_HERALD_PLUS,
    CH_READOUT_1,
    CH_READOUT_2,
    EventStream,
    StreamFormatError,
)
from .schedule import PS, in_measure_window, stage_of_time_ps, stage_readout_arrays

__all__ = [
    "AnalysisError",
    "CoincidenceStats",
    "FringeScan",
    "FringeFit",
    "ProbabilityEstimates",
    "Tomography",
    "count_coincidences",
    "coincidence_flags",
    "fit_fringe",
    "combine_visibilities",
    "estimate_probabilities",
    "concurrence",
    "h2c",
    "effective_fidelity",
    "backtrace",
    "density_matrix",
    "wootters_concurrence",
    "analyze_stream",
    "build_fringe_scan",
]

# 1-sigma upper bound on a Poisson mean given zero observed counts
_POISSON_ZERO_UPPER = 1.8410


class AnalysisError(ValueError):
    """Raised for estimator preconditions that the data violates."""


# ---------------------------------------------------------------------------
# coincidence counting


@dataclass(frozen=True)
class CoincidenceStats:
    """Herald-conditioned click-pattern counts within the window."""

    herald_count: int
    n00: int
    n01: int
    n10: int
    n11: int
    integration_time: float

    def counts(self) -> dict[str, int]:
        return {"n00": self.n00, "n01": self.n01, "n10": self.n10, "n11": self.n11}


def coincidence_flags(
    herald_times: np.ndarray,
    readout_times: np.ndarray,
    delay: float,
    window: float,
) -> np.ndarray:
    """Per-herald flag: any readout click within delay +- window/2."""
    herald_times = np.asarray(herald_times, dtype=np.float64)
    readout_times = np.asarray(readout_times, dtype=np.float64)
    lo = herald_times + (delay - window / 2.0) / PS
    hi = herald_times + (delay + window / 2.0) / PS
    left = np.searchsorted(readout_times, lo, side="left")
    right = np.searchsorted(readout_times, hi, side="right")
    return right > left


def count_coincidences(
    stream: EventStream,
    timing: TimingConfig,
    storage_time: float,
    herald_channel: int = CH_HERALD_PLUS,
    herald_times: np.ndarray | None = None,
) -> CoincidenceStats:
    """Classify each herald by the readout clicks trailing it by the storage time.

    Readout clicks are looked up in [t_h + tau - w/2, t_h + tau + w/2] per
    arm; the herald contributes to n_ij with i (j) flagging a click on arm
    A (B).  An empty stream yields zero statistics.  Streams with unordered
    time tags are rejected.
    """
    stream.check_monotonic()
    if herald_times is None:
        herald_times = stream.channel_times(herald_channel)
    r1 = stream.channel_times(CH_READOUT_1)
    r2 = stream.channel_times(CH_READOUT_2)
    hit1 = coincidence_flags(herald_times, r1, storage_time, timing.coincidence_window)
    hit2 = coincidence_flags(herald_times, r2, storage_time, timing.coincidence_window)
    n11 = int(np.sum(hit1 & hit2))
    n10 = int(np.sum(hit1 & ~hit2))
    n01 = int(np.sum(~hit1 & hit2))
    n00 = int(herald_times.size) - n11 - n10 - n01
    return CoincidenceStats(
        herald_count=int(herald_times.size),
        n00=n00,
        n01=n01,
        n10=n10,
        n11=n11,
        integration_time=stream.duration,
    )


# ---------------------------------------------------------------------------
# fringe fitting


@dataclass(frozen=True)
class FringeScan:
    """Herald-conditioned counts at both signal outputs per analysis phase."""

    thetas: np.ndarray
    counts_1: np.ndarray
    counts_2: np.ndarray
    heralds: np.ndarray

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write("theta_rad,counts_out1,counts_out2,heralds\n")
            for th, c1, c2, h in zip(self.thetas, self.counts_1, self.counts_2, self.heralds):
                fh.write(f"{th!r},{int(c1)},{int(c2)},{int(h)}\n")


@dataclass(frozen=True)
class FringeFit:
    visibility: float
    visibility_err: float
    phase: float
    phase_err: float
    amplitude: float
    chi_square: float
    ndof: int


def fit_fringe(thetas, counts) -> FringeFit:
    """Weighted least-squares fit of N(theta) = A (1 + V sin(theta + phi)).

    Poisson weights sqrt(max(N, 1)); V is bounded to [0, 1] and its error
    comes from the fit covariance.  Requires at least four distinct phases.
    """
    thetas = np.asarray(thetas, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if thetas.size != counts.size:
        raise AnalysisError("theta and count arrays differ in length")
    if np.unique(np.round(thetas, 12)).size < 4:
        raise AnalysisError("need at least 4 distinct analysis phases")
    if np.any(counts < 0):
        raise AnalysisError("negative counts")

    mean = counts.mean()
    if mean <= 0:
        return FringeFit(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, max(counts.size - 3, 1))
    a_c = 2.0 * np.mean(counts * np.cos(thetas))
    a_s = 2.0 * np.mean(counts * np.sin(thetas))
    v0 = min(math.hypot(a_c, a_s) / mean, 0.95)
    phi0 = math.atan2(a_c, a_s)
    sigma = np.sqrt(np.maximum(counts, 1.0))

    def model(theta, amp, vis, phi):
        return amp * (1.0 + vis * np.sin(theta + phi))

    try:
        popt, pcov = curve_fit(
            model,
            thetas,
            counts,
            p0=[mean, v0, phi0],
            sigma=sigma,
            absolute_sigma=True,
            bounds=([1e-12, 0.0, -2.0 * math.pi], [np.inf, 1.0, 2.0 * math.pi]),
            maxfev=20000,
        )
    except RuntimeError as exc:
        raise AnalysisError(f"fringe fit failed: {exc}") from exc
    amp, vis, phi = popt
    errs = np.sqrt(np.clip(np.diag(pcov), 0.0, None))
    if not np.isfinite(errs[1]) or errs[1] == 0.0:
        # degenerate at V = 0 (phase unconstrained); Fisher-information fallback
        errs = np.array([math.sqrt(mean), math.sqrt(2.0 / max(counts.sum(), 1.0)), 0.0])
    resid = (model(thetas, *popt) - counts) / sigma
    chi2 = float(np.sum(resid**2))
    return FringeFit(
        visibility=float(vis),
        visibility_err=float(errs[1]),
        phase=float(phi),
        phase_err=float(errs[2]),
        amplitude=float(amp),
        chi_square=chi2,
        ndof=max(counts.size - 3, 1),
    )


def combine_visibilities(fits) -> tuple[float, float]:
    """Inverse-variance weighted mean of several visibility fits."""
    vals = np.array([f.visibility for f in fits])
    errs = np.array([max(f.visibility_err, 1e-12) for f in fits])
    w = 1.0 / errs**2
    v = float(np.sum(w * vals) / np.sum(w))
    return v, float(1.0 / math.sqrt(np.sum(w)))


# ---------------------------------------------------------------------------
# probability estimates and derived quantities


@dataclass(frozen=True)
class ProbabilityEstimates:
    """Click-pattern fractions with binomial errors and their counts."""

    p00: float
    p01: float
    p10: float
    p11: float
    err00: float
    err01: float
    err10: float
    err11: float
    herald_count: int

    def values(self) -> dict[str, float]:
        return {"p00": self.p00, "p01": self.p01, "p10": self.p10, "p11": self.p11}

    def covariance(self) -> np.ndarray:
        """Multinomial covariance of (p00, p01, p10, p11)."""
        p = np.array([self.p00, self.p01, self.p10, self.p11])
        n = max(self.herald_count, 1)
        return (np.diag(p) - np.outer(p, p)) / n


def _binomial_err(k: int, n: int) -> float:
    if n <= 0:
        return 0.0
    if k == 0:
        return _POISSON_ZERO_UPPER / n  # one-sided 1-sigma upper bound
    p = k / n
    return math.sqrt(p * (1.0 - p) / n)


def estimate_probabilities(stats: CoincidenceStats) -> ProbabilityEstimates:
    """Per-herald click-pattern fractions with binomial standard errors.

    Zero counts get the one-sided 1-sigma Poisson upper bound 1.841/N.
    """
    n = stats.herald_count
    if n <= 0:
        raise AnalysisError("zero heralds")
    return ProbabilityEstimates(
        p00=stats.n00 / n,
        p01=stats.n01 / n,
        p10=stats.n10 / n,
        p11=stats.n11 / n,
        err00=_binomial_err(stats.n00, n),
        err01=_binomial_err(stats.n01, n),
        err10=_binomial_err(stats.n10, n),
        err11=_binomial_err(stats.n11, n),
        herald_count=n,
    )


def _propagate(grad: np.ndarray, cov: np.ndarray, extra: float = 0.0) -> float:
    return math.sqrt(max(float(grad @ cov @ grad) + extra, 0.0))


def concurrence(
    probs: ProbabilityEstimates, visibility: float, visibility_err: float = 0.0
) -> tuple[float, float, float]:
    """Concurrence max[0, 2|d| - 2 sqrt(p00 p11)] with propagated error.

    Returns (clipped value, error, unclipped value); the error is propagated
    on the unclipped form and reported even when the value clips at zero.
    When p11 = 0 the square-root term has no finite first-order derivative
    and its contribution is dropped (bootstrap covers that regime).
    """
    p00, p01, p10, p11 = probs.p00, probs.p01, probs.p10, probs.p11
    raw = formulas.concurrence_raw(p00, p01, p10, p11, visibility)
    d_v = p01 + p10
    if p00 > 0.0 and p11 > 0.0:
        g00 = -math.sqrt(p11 / p00)
        g11 = -math.sqrt(p00 / p11)
    else:
        g00 = 0.0
        g11 = 0.0
    grad = np.array([g00, visibility, visibility, g11])
    err = _propagate(grad, probs.covariance(), extra=(d_v * visibility_err) ** 2)
    return max(0.0, raw), err, raw


def h2c(probs: ProbabilityEstimates) -> tuple[float, float]:
    """Heralded cross-correlation p11/(p10 p01) with propagated error."""
    p01, p10, p11 = probs.p01, probs.p10, probs.p11
    if p01 * p10 <= 0.0:
        raise AnalysisError("insufficient single counts: p01 * p10 = 0")
    value = formulas.h2c_value(p01, p10, p11)
    denom = p01 * p10
    if p11 > 0.0:
        grad = np.array([0.0, -value / p01, -value / p10, 1.0 / denom])
        err = _propagate(grad, probs.covariance())
    else:
        err = probs.err11 / denom
    return value, err


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((matrix + matrix.conj().T) / 2.0)
    # the square root has infinite slope at zero, so rounding dust in the
    # null space would otherwise surface as ~sqrt(eps) errors
    cutoff = 1e-12 * max(float(w.max()), 0.0)
    w = np.where(w > cutoff, w, 0.0)
    return (v * np.sqrt(w)) @ v.conj().T


def _bell_state(phase: float = 0.0) -> np.ndarray:
    ket = np.zeros(4, dtype=complex)
    ket[1] = 1.0 / math.sqrt(2.0)
    ket[2] = np.exp(1j * phase) / math.sqrt(2.0)
    return np.outer(ket, ket.conj())


def fidelity_matrix_route(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Uhlmann fidelity (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2."""
    s = _psd_sqrt(rho)
    inner = _psd_sqrt(s @ sigma @ s)
    return float(np.trace(inner).real ** 2)


def effective_fidelity(
    probs: ProbabilityEstimates | dict,
    visibility: float,
    visibility_err: float = 0.0,
    phase: float = 0.0,
) -> tuple[float, float, float]:
    """Effective fidelity with the vacuum component discarded.

    Returns (closed form, error, matrix route).  The closed form is
    (1/2)(p01 + p10)(1 + V)/(p01 + p10 + p11); the matrix route zeroes the
    |00><00| element of the reconstructed state, renormalizes and evaluates
    the Uhlmann fidelity against the ideal Bell state.  The two must agree
    to numerical precision; both are returned so consumers can assert it.
    """
    if isinstance(probs, ProbabilityEstimates):
        p00, p01, p10, p11 = probs.p00, probs.p01, probs.p10, probs.p11
        cov = probs.covariance()
    else:
        p00, p01, p10, p11 = (probs[k] for k in ("p00", "p01", "p10", "p11"))
        cov = np.zeros((4, 4))
    s = p01 + p10
    if s + p11 <= 0.0:
        raise AnalysisError("all-zero one- and two-photon sector")
    closed = formulas.effective_fidelity_closed_form(p01, p10, p11, visibility)

    d = formulas.coherence_from_visibility(visibility, p01, p10)
    rho = density_matrix({"p00": p00, "p01": p01, "p10": p10, "p11": p11}, d, phase)
    rho_t = rho.copy()
    rho_t[0, 0] = 0.0
    tr = float(np.trace(rho_t).real)
    if tr <= 0.0:
        raise AnalysisError("all-zero one- and two-photon sector")
    matrix = fidelity_matrix_route(rho_t / tr, _bell_state(phase))

    ds = (1.0 + visibility) * p11 / (2.0 * (s + p11) ** 2)
    grad = np.array([0.0, ds, ds, -s * (1.0 + visibility) / (2.0 * (s + p11) ** 2)])
    err = _propagate(grad, cov, extra=(s / (2.0 * (s + p11)) * visibility_err) ** 2)
    return closed, err, matrix


def backtrace(
    probs: ProbabilityEstimates,
    visibility: float,
    efficiency_a: float,
    efficiency_b: float,
    visibility_err: float = 0.0,
) -> dict:
    """Rescale measured probabilities by the signal-path efficiencies.

    p01 detects an excitation of memory B through arm B, so it divides by
    efficiency_b (and p10 by efficiency_a, p11 by both); the vacuum term is
    whatever probability remains.  The concurrence is recomputed from the
    rescaled probabilities with the same visibility.
    """
    if not (0.0 < efficiency_a <= 1.0 and 0.0 < efficiency_b <= 1.0):
        raise AnalysisError("signal-path efficiencies must be in (0, 1]")
    q01 = probs.p01 / efficiency_b
    q10 = probs.p10 / efficiency_a
    q11 = probs.p11 / (efficiency_a * efficiency_b)
    q00 = 1.0 - q01 - q10 - q11
    for name, q in (("p01", q01), ("p10", q10), ("p11", q11), ("p00", q00)):
        if q < 0.0 or q > 1.0:
            raise AnalysisError(
                f"efficiency inconsistent with data: back-traced {name} = {q:.4g}"
            )
    scaled = ProbabilityEstimates(
        p00=q00,
        p01=q01,
        p10=q10,
        p11=q11,
        err00=math.hypot(
            probs.err01 / efficiency_b,
            math.hypot(probs.err10 / efficiency_a, probs.err11 / (efficiency_a * efficiency_b)),
        ),
        err01=probs.err01 / efficiency_b,
        err10=probs.err10 / efficiency_a,
        err11=probs.err11 / (efficiency_a * efficiency_b),
        herald_count=probs.herald_count,
    )
    # propagate on the measured fractions: the rescaled values are linear in
    # them, with q00 absorbing the complements
    if q00 > 0.0 and q11 > 0.0:
        ratio = math.sqrt(q11 / q00)
        inv_ratio = math.sqrt(q00 / q11)
    else:
        ratio = 0.0
        inv_ratio = 0.0
    g01 = (visibility + ratio) / efficiency_b
    g10 = (visibility + ratio) / efficiency_a
    g11 = -(inv_ratio - ratio) / (efficiency_a * efficiency_b)
    raw_grad_c = np.array([0.0, g01, g10, g11])
    c_raw = formulas.concurrence_raw(q00, q01, q10, q11, visibility)
    err = _propagate(
        raw_grad_c, probs.covariance(), extra=((q01 + q10) * visibility_err) ** 2
    )
    return {
        "probabilities": scaled,
        "concurrence": max(0.0, c_raw),
        "concurrence_err": err,
        "concurrence_raw": c_raw,
        "efficiency_a": efficiency_a,
        "efficiency_b": efficiency_b,
    }


def density_matrix(probs: dict | ProbabilityEstimates, d: float, phase: float = 0.0) -> np.ndarray:
    """Reconstructed 4x4 state over {00, 01, 10, 11}.

    Diagonal from the measured p_ij; the only coherence is d e^{+-i phase}
    between 01 and 10.  d is clipped to sqrt(p01 p10) (with a warning) so
    the output is always positive semidefinite.
    """
    if isinstance(probs, ProbabilityEstimates):
        p = probs.values()
    else:
        p = probs
    bound = math.sqrt(p["p01"] * p["p10"])
    if abs(d) > bound + 1e-15:
        warnings.warn(
            f"coherence {d:.4g} exceeds sqrt(p01 p10) = {bound:.4g}; clipping",
            stacklevel=2,
        )
        d = math.copysign(bound, d)
    rho = np.zeros((4, 4), dtype=complex)
    rho[0, 0] = p["p00"]
    rho[1, 1] = p["p01"]
    rho[2, 2] = p["p10"]
    rho[3, 3] = p["p11"]
    rho[1, 2] = d * np.exp(1j * phase)
    rho[2, 1] = d * np.exp(-1j * phase)
    return rho


def wootters_concurrence(rho: np.ndarray) -> float:
    """Concurrence of an arbitrary two-qubit density matrix."""
    sy = np.array([[0.0, -1j], [1j, 0.0]])
    yy = np.kron(sy, sy)
    rho_tilde = yy @ rho.conj() @ yy
    eigs = np.linalg.eigvals(rho @ rho_tilde)
    lam = np.sqrt(np.clip(eigs.real, 0.0, None))
    lam = np.sort(lam)[::-1]
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


# ---------------------------------------------------------------------------
# stream-level tomography


@dataclass
class Tomography:
    """Estimated link statistics with uncertainties, serializable to JSON."""

    config_digest: str
    seed: int
    integration_time: float
    herald_count: int
    herald_rate_hz: float
    herald_rate_err: float
    direct: CoincidenceStats | None = None
    probabilities: ProbabilityEstimates | None = None
    visibility: float | None = None
    visibility_err: float | None = None
    visibility_1: float | None = None
    visibility_1_err: float | None = None
    visibility_2: float | None = None
    visibility_2_err: float | None = None
    coherence: float | None = None
    concurrence: float | None = None
    concurrence_err: float | None = None
    concurrence_raw: float | None = None
    h2c: float | None = None
    h2c_err: float | None = None
    effective_fidelity: float | None = None
    effective_fidelity_err: float | None = None
    effective_fidelity_matrix: float | None = None
    backtraced: dict | None = None
    bootstrap: dict | None = None
    fringe_scan: FringeScan | None = field(default=None, repr=False)

    def to_json_dict(self) -> dict:
        def pair(v, e):
            return None if v is None else [v, e]

        out = {
            "schema": "afclink.tomography/1",
            "config_digest": self.config_digest,
            "seed": self.seed,
            "integration_time_s": self.integration_time,
            "herald_count": self.herald_count,
            "herald_rate_hz": [self.herald_rate_hz, self.herald_rate_err],
            "counts": None,
            "probabilities": None,
            "visibility": pair(self.visibility, self.visibility_err),
            "visibility_output_1": pair(self.visibility_1, self.visibility_1_err),
            "visibility_output_2": pair(self.visibility_2, self.visibility_2_err),
            "coherence": self.coherence,
            "concurrence": pair(self.concurrence, self.concurrence_err),
            "concurrence_raw": self.concurrence_raw,
            "h2c": pair(self.h2c, self.h2c_err),
            "effective_fidelity": pair(self.effective_fidelity, self.effective_fidelity_err),
            "effective_fidelity_matrix_route": self.effective_fidelity_matrix,
            "backtraced": None,
            "bootstrap": self.bootstrap,
        }
        if self.direct is not None:
            out["counts"] = {
                "heralds_direct": self.direct.herald_count,
                **self.direct.counts(),
            }
        if self.probabilities is not None:
            p = self.probabilities
            out["probabilities"] = {
                "p00": [p.p00, p.err00],
                "p01": [p.p01, p.err01],
                "p10": [p.p10, p.err10],
                "p11": [p.p11, p.err11],
            }
        if self.backtraced is not None:
            bt = self.backtraced
            q = bt["probabilities"]
            out["backtraced"] = {
                "efficiency_a": bt["efficiency_a"],
                "efficiency_b": bt["efficiency_b"],
                "p00": [q.p00, q.err00],
                "p01": [q.p01, q.err01],
                "p10": [q.p10, q.err10],
                "p11": [q.p11, q.err11],
                "concurrence": [bt["concurrence"], bt["concurrence_err"]],
                "concurrence_raw": bt["concurrence_raw"],
            }
        return out

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2, sort_keys=True))


def build_fringe_scan(
    stream: EventStream,
    config: LinkConfig,
    herald_channel: int = CH_HERALD_PLUS,
) -> FringeScan:
    """Group fringe-stage heralds by analysis phase and count windowed clicks."""
    timing = config.timing
    heralds = stream.channel_times(herald_channel)
    stages = stage_of_time_ps(timing, heralds)
    in_meas = in_measure_window(timing, heralds)
    is_direct, theta = stage_readout_arrays(config, stages)
    fringe_mask = in_meas & ~is_direct
    h_f = heralds[fringe_mask]
    th_f = theta[fringe_mask]
    tau = 0.5 * (config.memory_a.storage_time + config.memory_b.storage_time)
    r1 = stream.channel_times(CH_READOUT_1)
    r2 = stream.channel_times(CH_READOUT_2)
    hit1 = coincidence_flags(h_f, r1, tau, timing.coincidence_window)
    hit2 = coincidence_flags(h_f, r2, tau, timing.coincidence_window)
    phases = np.array(config.readout.fringe_phases())
    counts1, counts2, nher = [], [], []
    for ph in phases:
        m = np.abs(th_f - ph) < 1e-9
        counts1.append(int(np.sum(hit1[m])))
        counts2.append(int(np.sum(hit2[m])))
        nher.append(int(np.sum(m)))
    return FringeScan(
        thetas=phases,
        counts_1=np.array(counts1),
        counts_2=np.array(counts2),
        heralds=np.array(nher),
    )


def _bootstrap_block(stats, vis, vis_err, resamples, rng):
    """Bootstrap of the derived estimators over herald click patterns."""
    n = stats.herald_count
    p = np.array([stats.n00, stats.n01, stats.n10, stats.n11], dtype=float) / n
    draws = rng.multinomial(n, p, size=resamples)
    vs = rng.normal(vis, max(vis_err, 0.0), size=resamples)
    cs, hs, fs = [], [], []
    for row, v in zip(draws, vs):
        q = row / n
        d = formulas.coherence_from_visibility(v, q[1], q[2])
        cs.append(max(0.0, 2 * abs(d) - 2 * math.sqrt(max(q[0] * q[3], 0.0))))
        if q[1] * q[2] > 0:
            hs.append(q[3] / (q[1] * q[2]))
        if q[1] + q[2] + q[3] > 0:
            fs.append(0.5 * (q[1] + q[2]) * (1 + v) / (q[1] + q[2] + q[3]))
    return {
        "resamples": resamples,
        "concurrence_std": float(np.std(cs)) if cs else None,
        "h2c_std": float(np.std(hs)) if hs else None,
        "effective_fidelity_std": float(np.std(fs)) if fs else None,
    }


def analyze_stream(
    stream: EventStream,
    config: LinkConfig,
    herald_channel: int = CH_HERALD_PLUS,
    backtrace_efficiencies: tuple[float, float] | None = None,
    bootstrap_resamples: int = 0,
    bootstrap_seed: int = 7,
) -> Tomography:
    """Full tomography of an event stream.

    Heralds from direct stages feed the coincidence counts and p_ij;
    heralds from fringe stages feed per-phase fringe scans whose fits give
    the visibility (weighted over the two outputs).  The heralding rate
    counts every herald on the chosen channel over the stream duration.
    """
    stream.check_monotonic()
    timing = config.timing
    heralds = stream.channel_times(herald_channel)
    rate = heralds.size / stream.duration if stream.duration > 0 else 0.0
    rate_err = math.sqrt(max(heralds.size, 1)) / stream.duration if stream.duration > 0 else 0.0
    result = Tomography(
        config_digest=stream.config_digest,
        seed=stream.seed,
        integration_time=stream.duration,
        herald_count=int(heralds.size),
        herald_rate_hz=rate,
        herald_rate_err=rate_err,
    )
    if heralds.size == 0:
        return result

    stages = stage_of_time_ps(timing, heralds)
    in_meas = in_measure_window(timing, heralds)
    is_direct, _ = stage_readout_arrays(config, stages)
    tau = 0.5 * (config.memory_a.storage_time + config.memory_b.storage_time)

    direct_heralds = heralds[in_meas & is_direct]
    if direct_heralds.size > 0:
        stats = count_coincidences(
            stream, timing, tau, herald_channel, herald_times=direct_heralds
        )
        result.direct = stats
        result.probabilities = estimate_probabilities(stats)

    has_fringe = config.readout.mode in ("interleaved", "fringe")
    if has_fringe:
        scan = build_fringe_scan(stream, config, herald_channel)
        result.fringe_scan = scan
        if scan.heralds.sum() > 0 and np.count_nonzero(scan.heralds) >= 4:
            fit1 = fit_fringe(scan.thetas, scan.counts_1)
            fit2 = fit_fringe(scan.thetas, scan.counts_2)
            result.visibility_1 = fit1.visibility
            result.visibility_1_err = fit1.visibility_err
            result.visibility_2 = fit2.visibility
            result.visibility_2_err = fit2.visibility_err
            result.visibility, result.visibility_err = combine_visibilities([fit1, fit2])

    if result.probabilities is not None and result.visibility is not None:
        p = result.probabilities
        v, ve = result.visibility, result.visibility_err or 0.0
        result.coherence = formulas.coherence_from_visibility(v, p.p01, p.p10)
        c, ce, craw = concurrence(p, v, ve)
        result.concurrence, result.concurrence_err, result.concurrence_raw = c, ce, craw
        if p.p01 * p.p10 > 0:
            result.h2c, result.h2c_err = h2c(p)
        if p.p01 + p.p10 + p.p11 > 0:
            f, fe, fm = effective_fidelity(p, v, ve)
            result.effective_fidelity = f
            result.effective_fidelity_err = fe
            result.effective_fidelity_matrix = fm
        if backtrace_efficiencies is not None:
            result.backtraced = backtrace(
                p, v, backtrace_efficiencies[0], backtrace_efficiencies[1], ve
            )
        if bootstrap_resamples > 0 and result.direct is not None:
            rng = np.random.Generator(np.random.Philox(key=bootstrap_seed))
            result.bootstrap = _bootstrap_block(
                result.direct, v, ve, bootstrap_resamples, rng
            )
    return result
