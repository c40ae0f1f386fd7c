"""Exact density-operator algebra over photon-number-truncated bosonic modes.

States are dense complex density matrices over a small set of modes, each
truncated at ``n_max`` photons (default 2).  Mode 0 is the most significant
digit of the flat index, i.e. the density matrix lives on the kron-ordered
product space mode0 x mode1 x ...  All operations are pure functions that
return new states, so values can be shared freely between concurrent tasks.

The maximum space used by the link model is four modes of dimension 3
(81 x 81 matrices), so everything is dense and exact: the beam splitter is
the matrix exponential of its two-mode generator projected onto the
truncated space, which keeps it exactly unitary and exactly
total-photon-number conserving at any truncation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .config import DetectorParams

__all__ = [
    "FockError",
    "BosonicState",
    "DetectionOutcome",
    "tmsv",
    "pair_source_state",
    "thermal_pair_weights",
    "detector_click_weights",
]


class FockError(ValueError):
    """Raised for invalid mode indices or unphysical parameters."""


def _embed(op: np.ndarray, modes: Sequence[int], mode_count: int, dim: int) -> np.ndarray:
    """Expand an operator acting on ``modes`` to the full product space."""
    k = len(modes)
    rest = [m for m in range(mode_count) if m not in modes]
    order = list(modes) + rest
    full = np.kron(op, np.eye(dim ** (mode_count - k), dtype=complex))
    t = full.reshape((dim,) * (2 * mode_count))
    inv = np.argsort(order)
    axes = tuple(inv) + tuple(mode_count + p for p in inv)
    return t.transpose(axes).reshape(dim**mode_count, dim**mode_count)


@lru_cache(maxsize=64)
def _loss_kraus(n_max: int, transmission: float) -> tuple[np.ndarray, ...]:
    """Kraus operators of the pure-loss (beam splitter to vacuum) channel.

    K_k removes k photons: <n-k|K_k|n> = sqrt(C(n,k) eta^(n-k) (1-eta)^k).
    The set is exactly trace preserving on the truncated space.
    """
    dim = n_max + 1
    eta = transmission
    ops = []
    for k in range(dim):
        K = np.zeros((dim, dim), dtype=complex)
        for n in range(k, dim):
            K[n - k, n] = math.sqrt(math.comb(n, k) * eta ** (n - k) * (1.0 - eta) ** k)
        ops.append(K)
    return tuple(ops)


@lru_cache(maxsize=256)
def _two_mode_mixer(n_max: int, reflectivity: float, phase: float) -> np.ndarray:
    """Fock-basis matrix of the two-mode mixing unitary.

    U = expm(theta (e^{i phi} a+ b - e^{-i phi} a b+)) with sin^2 theta equal
    to the power reflectivity.  The generator conserves total photon number,
    so U is block diagonal over total-n sectors and exactly unitary on the
    truncated space.
    """
    dim = n_max + 1
    theta = math.asin(math.sqrt(reflectivity))
    a_dag = np.diag(np.sqrt(np.arange(1, dim)), k=-1).astype(complex)
    a = a_dag.conj().T
    adag_b = np.kron(a_dag, a)
    a_bdag = np.kron(a, a_dag)
    gen = theta * (np.exp(1j * phase) * adag_b - np.exp(-1j * phase) * a_bdag)
    return expm(gen)


def detector_click_weights(
    detector: DetectorParams, n_max: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-photon-number (no-click, click) probabilities of a detector.

    Threshold: P(no click | n) = (1 - dark) (1 - eta)^n.
    Linear:    P(no click | n) = (1 - dark) (1 - eta n), valid while
    eta * n_max <= 1 (enforced by config validation).
    """
    n = np.arange(n_max + 1, dtype=float)
    dark = detector.dark_click_probability_per_window
    if detector.response == "linear":
        survive = 1.0 - detector.efficiency * n
        if np.any(survive < -1e-12):
            raise FockError("linear detector response unphysical at this truncation")
        survive = np.clip(survive, 0.0, None)
    else:
        survive = (1.0 - detector.efficiency) ** n
    no_click = (1.0 - dark) * survive
    return no_click, 1.0 - no_click


@dataclass(frozen=True)
class DetectionOutcome:
    """Both branches of a threshold detection, detected mode traced out."""

    click_probability: float
    conditional_state_click: "BosonicState | None"
    conditional_state_no_click: "BosonicState | None"


@dataclass(frozen=True)
class BosonicState:
    """Density operator over ``mode_count`` modes truncated at ``n_max``.

    Treat instances as immutable values; operations return new states.
    """

    mode_count: int
    n_max: int
    density_matrix: np.ndarray

    # -- constructors -------------------------------------------------

    @staticmethod
    def vacuum(mode_count: int, n_max: int = 2) -> "BosonicState":
        dim = (n_max + 1) ** mode_count
        rho = np.zeros((dim, dim), dtype=complex)
        rho[0, 0] = 1.0
        return BosonicState(mode_count, n_max, rho)

    @staticmethod
    def number_state(occupations: Sequence[int], n_max: int = 2) -> "BosonicState":
        occupations = tuple(occupations)
        if any(n < 0 or n > n_max for n in occupations):
            raise FockError(f"occupations {occupations} exceed truncation {n_max}")
        mode_count = len(occupations)
        dim = (n_max + 1) ** mode_count
        idx = int(np.ravel_multi_index(occupations, (n_max + 1,) * mode_count))
        rho = np.zeros((dim, dim), dtype=complex)
        rho[idx, idx] = 1.0
        return BosonicState(mode_count, n_max, rho)

    @staticmethod
    def from_ket(ket: np.ndarray, mode_count: int, n_max: int) -> "BosonicState":
        ket = np.asarray(ket, dtype=complex).ravel()
        if ket.size != (n_max + 1) ** mode_count:
            raise FockError("ket length does not match mode count and truncation")
        norm = np.linalg.norm(ket)
        if norm == 0:
            raise FockError("zero ket")
        ket = ket / norm
        return BosonicState(mode_count, n_max, np.outer(ket, ket.conj()))

    # -- basic properties ---------------------------------------------

    @property
    def dim(self) -> int:
        return (self.n_max + 1) ** self.mode_count

    @property
    def trace(self) -> float:
        return float(np.trace(self.density_matrix).real)

    def _tensor_view(self) -> np.ndarray:
        shape = (self.n_max + 1,) * (2 * self.mode_count)
        return self.density_matrix.reshape(shape)

    def _check_mode(self, mode: int) -> None:
        if not 0 <= mode < self.mode_count:
            raise FockError(f"mode index {mode} out of range for {self.mode_count} modes")

    def tensor(self, other: "BosonicState") -> "BosonicState":
        if other.n_max != self.n_max:
            raise FockError("cannot tensor states with different truncations")
        return BosonicState(
            self.mode_count + other.mode_count,
            self.n_max,
            np.kron(self.density_matrix, other.density_matrix),
        )

    def renormalized(self) -> "BosonicState":
        tr = self.trace
        if tr <= 0:
            raise FockError("cannot renormalize a trace-zero state")
        return BosonicState(self.mode_count, self.n_max, self.density_matrix / tr)

    # -- channels ------------------------------------------------------

    def apply_loss(self, mode: int, transmission: float) -> "BosonicState":
        """Pure-loss channel on one mode (vacuum-ancilla beam splitter)."""
        self._check_mode(mode)
        if not 0.0 <= transmission <= 1.0:
            raise FockError(f"transmission {transmission!r} outside [0, 1]")
        if transmission == 1.0:
            return self
        out = np.zeros_like(self.density_matrix)
        for K in _loss_kraus(self.n_max, transmission):
            A = _embed(K, [mode], self.mode_count, self.n_max + 1)
            out += A @ self.density_matrix @ A.conj().T
        return BosonicState(self.mode_count, self.n_max, out)

    def apply_phase(self, mode: int, phase: float) -> "BosonicState":
        """Number-state phase e^{i n phase} on one mode."""
        self._check_mode(mode)
        diag = np.exp(1j * phase * np.arange(self.n_max + 1))
        U = _embed(np.diag(diag), [mode], self.mode_count, self.n_max + 1)
        return BosonicState(self.mode_count, self.n_max, U @ self.density_matrix @ U.conj().T)

    def apply_beam_splitter(
        self, mode_a: int, mode_b: int, reflectivity: float = 0.5, phase: float = 0.0
    ) -> "BosonicState":
        """Two-mode mixing unitary; reflectivity is the power reflection.

        The inverse of (r, phi) is (r, phi + pi).
        """
        self._check_mode(mode_a)
        self._check_mode(mode_b)
        if mode_a == mode_b:
            raise FockError("beam splitter needs two distinct modes")
        if not 0.0 <= reflectivity <= 1.0:
            raise FockError(f"reflectivity {reflectivity!r} outside [0, 1]")
        U2 = _two_mode_mixer(self.n_max, reflectivity, phase)
        U = _embed(U2, [mode_a, mode_b], self.mode_count, self.n_max + 1)
        return BosonicState(self.mode_count, self.n_max, U @ self.density_matrix @ U.conj().T)

    def dephased(self) -> "BosonicState":
        """Drop every off-diagonal element in the joint number basis."""
        return BosonicState(
            self.mode_count, self.n_max, np.diag(np.diag(self.density_matrix)).astype(complex)
        )

    def mix_with_dephased(self, coherent_weight: float) -> "BosonicState":
        """Convex mixture of this state with its fully dephased version."""
        if not 0.0 <= coherent_weight <= 1.0:
            raise FockError("coherent weight must be in [0, 1]")
        lam = coherent_weight
        rho = lam * self.density_matrix + (1.0 - lam) * self.dephased().density_matrix
        return BosonicState(self.mode_count, self.n_max, rho)

    def scale_coherences(self, factor: float) -> "BosonicState":
        """Multiply all off-diagonal number-basis elements by ``factor``."""
        return self.mix_with_dephased(factor)

    # -- measurement and reduction ------------------------------------

    def trace_out(self, mode: int) -> "BosonicState":
        """Partial trace over one mode; result renormalized."""
        self._check_mode(mode)
        dim = self.n_max + 1
        t = self._tensor_view()
        # contract the ket and bra axes of the traced mode
        out = np.trace(t, axis1=mode, axis2=self.mode_count + mode)
        rest = self.mode_count - 1
        rho = out.reshape(dim**rest, dim**rest)
        state = BosonicState(rest, self.n_max, rho)
        return state.renormalized()

    def measure_diagonal(
        self, modes: Sequence[int], outcome_weights: Sequence[np.ndarray]
    ) -> list[tuple[float, "BosonicState | None"]]:
        """Condition on a POVM diagonal in the number basis of ``modes``.

        ``outcome_weights[o]`` holds P(outcome o | occupations) over the
        joint number basis of the measured modes (shape (n_max+1,)*len(modes)
        or flat); the weights of all outcomes must sum to one pointwise.
        Returns (probability, conditional state of the remaining modes) per
        outcome; the state is None when the probability vanishes.  The
        measured modes are traced out.
        """
        modes = list(modes)
        for m in modes:
            self._check_mode(m)
        if len(set(modes)) != len(modes):
            raise FockError("measured modes must be distinct")
        dim = self.n_max + 1
        k = len(modes)
        rest = [m for m in range(self.mode_count) if m not in modes]
        t = self._tensor_view()
        # put measured-mode ket axes first, then rest kets, then same for bras
        perm = modes + rest
        axes = tuple(perm) + tuple(self.mode_count + p for p in perm)
        t = t.transpose(axes)
        meas_dim = dim**k
        rest_dim = dim ** len(rest)
        t = t.reshape(meas_dim, rest_dim, meas_dim, rest_dim)
        # diagonal POVM: only matched (n_meas, n_meas) blocks contribute
        blocks = np.einsum("iaib->iab", t)
        results: list[tuple[float, BosonicState | None]] = []
        total = np.zeros(meas_dim)
        for weights in outcome_weights:
            w = np.asarray(weights, dtype=float).ravel()
            if w.size != meas_dim:
                raise FockError("outcome weight array has wrong size")
            if np.any(w < -1e-12):
                raise FockError("outcome weights must be non-negative")
            total += w
            rho_rest = np.tensordot(w, blocks, axes=(0, 0))
            prob = float(np.trace(rho_rest).real)
            if prob <= 0.0:
                results.append((max(prob, 0.0), None))
            else:
                results.append(
                    (prob, BosonicState(len(rest), self.n_max, rho_rest / prob))
                )
        if np.any(np.abs(total - 1.0) > 1e-9):
            raise FockError("outcome weights do not sum to one")
        return results

    def measure_povm(
        self, modes: Sequence[int], operators: Sequence[np.ndarray]
    ) -> list[tuple[float, "BosonicState | None"]]:
        """Condition on a general POVM over ``modes`` (elements sum to one).

        The conditional state of the remaining modes is
        Tr_modes[(E x I) rho] / p, which equals the square-root-Kraus update
        reduced to the unmeasured modes.  Measured modes are traced out.
        """
        modes = list(modes)
        for m in modes:
            self._check_mode(m)
        if len(set(modes)) != len(modes):
            raise FockError("measured modes must be distinct")
        dim = self.n_max + 1
        k = len(modes)
        rest = [m for m in range(self.mode_count) if m not in modes]
        t = self._tensor_view()
        perm = modes + rest
        axes = tuple(perm) + tuple(self.mode_count + p for p in perm)
        t = t.transpose(axes)
        meas_dim = dim**k
        rest_dim = dim ** len(rest)
        t = t.reshape(meas_dim, rest_dim, meas_dim, rest_dim)
        results: list[tuple[float, BosonicState | None]] = []
        total = np.zeros((meas_dim, meas_dim), dtype=complex)
        for op in operators:
            E = np.asarray(op, dtype=complex)
            if E.shape != (meas_dim, meas_dim):
                raise FockError("POVM element has wrong dimension")
            total += E
            rho_rest = np.einsum("mk,kamb->ab", E, t)
            prob = float(np.trace(rho_rest).real)
            if prob <= 0.0:
                results.append((max(prob, 0.0), None))
            else:
                rho_rest = (rho_rest + rho_rest.conj().T) / 2.0
                results.append(
                    (prob, BosonicState(len(rest), self.n_max, rho_rest / prob))
                )
        if np.max(np.abs(total - np.eye(meas_dim))) > 1e-9:
            raise FockError("POVM elements do not sum to the identity")
        return results

    def detect_threshold(self, mode: int, detector: DetectorParams) -> DetectionOutcome:
        """Click/no-click measurement on one mode; the mode is traced out.

        The click element is 1 - (1 - dark)(1 - efficiency)^n per
        photon-number sector (or its linear-response variant when the
        detector is configured that way).
        """
        no_click, click = detector_click_weights(detector, self.n_max)
        (p_click, rho_click), (p_no, rho_no) = self.measure_diagonal(
            [mode], [click, no_click]
        )
        return DetectionOutcome(p_click, rho_click, rho_no)

    # -- inspection ----------------------------------------------------

    def diagonal_probabilities(self) -> np.ndarray:
        """Joint number-basis probabilities, shape (n_max+1,)*mode_count."""
        diag = np.diag(self.density_matrix).real
        return diag.reshape((self.n_max + 1,) * self.mode_count)

    def number_distribution(self, mode: int) -> np.ndarray:
        self._check_mode(mode)
        probs = self.diagonal_probabilities()
        axes = tuple(m for m in range(self.mode_count) if m != mode)
        return probs.sum(axis=axes) if axes else probs

    def mean_photon_number(self, mode: int) -> float:
        dist = self.number_distribution(mode)
        return float(np.dot(np.arange(self.n_max + 1), dist))

    def element(self, bra_occupations: Sequence[int], ket_occupations: Sequence[int]) -> complex:
        shape = (self.n_max + 1,) * self.mode_count
        i = int(np.ravel_multi_index(tuple(bra_occupations), shape))
        j = int(np.ravel_multi_index(tuple(ket_occupations), shape))
        return complex(self.density_matrix[i, j])

    def frobenius_distance(self, other: "BosonicState") -> float:
        return float(np.linalg.norm(self.density_matrix - other.density_matrix))

    def to_csv(self, path) -> None:
        """Debug dump of the density matrix as CSV (re and im per element)."""
        with open(path, "w") as fh:
            fh.write("row,col,re,im\n")
            for i in range(self.dim):
                for j in range(self.dim):
                    z = self.density_matrix[i, j]
                    fh.write(f"{i},{j},{z.real!r},{z.imag!r}\n")

    def assert_physical(self, atol: float = 1e-9) -> None:
        """Check Hermiticity, unit trace and positivity within tolerance."""
        rho = self.density_matrix
        herm = np.max(np.abs(rho - rho.conj().T))
        if herm > atol:
            raise FockError(f"state not Hermitian: deviation {herm:.3e}")
        tr = np.trace(rho)
        if abs(tr - 1.0) > atol:
            raise FockError(f"state trace {tr!r} differs from 1")
        eigmin = float(np.linalg.eigvalsh((rho + rho.conj().T) / 2.0).min())
        if eigmin < -max(atol, 1e-9):
            raise FockError(f"state has negative eigenvalue {eigmin:.3e}")


def thermal_pair_weights(pair_probability: float, n_max: int) -> np.ndarray:
    """Truncated thermal pair-number distribution, renormalized.

    P(n) proportional to p^n / (1+p)^(n+1); the mean of the untruncated
    distribution is p.
    """
    if not 0.0 <= pair_probability < 1.0:
        raise FockError(f"pair probability {pair_probability!r} outside [0, 1)")
    n = np.arange(n_max + 1, dtype=float)
    w = pair_probability**n / (1.0 + pair_probability) ** (n + 1.0)
    return w / w.sum()


def tmsv(pair_probability: float, n_max: int = 2) -> BosonicState:
    """Two-mode squeezed vacuum truncated at ``n_max`` photons per mode.

    Pure state sum_n c_n |n, n> with |c_n|^2 following the thermal pair
    distribution, renormalized after truncation.  p = 0 gives the vacuum.
    """
    weights = thermal_pair_weights(pair_probability, n_max)
    dim = n_max + 1
    ket = np.zeros(dim * dim, dtype=complex)
    for n in range(dim):
        ket[n * dim + n] = math.sqrt(weights[n])
    return BosonicState.from_ket(ket, 2, n_max)


def pair_source_state(
    pair_probability: float, n_max: int = 2, statistics: str = "thermal"
) -> BosonicState:
    """Two-mode (signal, idler) state emitted by a pair source per mode.

    ``thermal`` gives the coherent TMSV; ``poisson`` gives a diagnostic
    diagonal mixture of |n, n> with Poisson weights (same mean),
    renormalized after truncation.
    """
    if statistics == "thermal":
        return tmsv(pair_probability, n_max)
    if statistics != "poisson":
        raise FockError(f"unknown source statistics {statistics!r}")
    if not 0.0 <= pair_probability < 1.0:
        raise FockError(f"pair probability {pair_probability!r} outside [0, 1)")
    n = np.arange(n_max + 1, dtype=float)
    w = np.exp(-pair_probability) * pair_probability**n / np.array(
        [math.factorial(int(k)) for k in n]
    )
    w = w / w.sum()
    dim = n_max + 1
    rho = np.zeros((dim * dim, dim * dim), dtype=complex)
    for k in range(dim):
        rho[k * dim + k, k * dim + k] = w[k]
    return BosonicState(2, n_max, rho)
