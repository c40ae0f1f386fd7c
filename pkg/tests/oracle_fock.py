"""Independent brute-force oracles for the density-operator engine.

Everything here works on explicit kets (dictionaries mapping occupation
tuples to complex amplitudes) with textbook operator algebra, plus loss as
an explicit enumeration over Kraus branches.  No code is shared with the
package engine, so agreement between the two is a meaningful check.
"""

import math
from itertools import product

Ket = dict  # tuple[int, ...] -> complex


def normalize(ket: Ket) -> Ket:
    norm = math.sqrt(sum(abs(a) ** 2 for a in ket.values()))
    return {k: v / norm for k, v in ket.items()}


def tensor_ket(a: Ket, b: Ket) -> Ket:
    return {ka + kb: va * vb for ka, va in a.items() for kb, vb in b.items()}


def tmsv_ket(p: float, n_max: int) -> Ket:
    ket = {}
    for n in range(n_max + 1):
        ket[(n, n)] = math.sqrt(p**n / (1.0 + p) ** (n + 1))
    return normalize(ket)


def beam_splitter_ket(ket: Ket, mode_a: int, mode_b: int, r: float, phase: float,
                      n_max: int) -> Ket:
    """Creation operators transform as

    a+ -> cos(t) a+ - e^{-i phase} sin(t) b+
    b+ -> e^{+i phase} sin(t) a+ + cos(t) b+

    with sin^2(t) = r; components beyond the truncation are dropped,
    matching the projected-generator unitary of the engine on the sectors
    that fit.
    """
    theta = math.asin(math.sqrt(r))
    ct, st = math.cos(theta), math.sin(theta)
    out: Ket = {}
    for occ, amp in ket.items():
        na, nb = occ[mode_a], occ[mode_b]
        # expand (alpha a+ + beta b+)^na (gamma a+ + delta b+)^nb |0,0>
        alpha, beta = ct, -st * complex(math.cos(phase), -math.sin(phase))
        gamma, delta = st * complex(math.cos(phase), math.sin(phase)), ct
        base = amp / math.sqrt(math.factorial(na) * math.factorial(nb))
        for j in range(na + 1):
            for k in range(nb + 1):
                ja = j + k                # a+ power
                jb = na - j + nb - k      # b+ power
                if ja > n_max or jb > n_max:
                    continue
                coeff = (
                    base
                    * math.comb(na, j) * alpha**j * beta ** (na - j)
                    * math.comb(nb, k) * gamma**k * delta ** (nb - k)
                    * math.sqrt(math.factorial(ja) * math.factorial(jb))
                )
                new = list(occ)
                new[mode_a], new[mode_b] = ja, jb
                key = tuple(new)
                out[key] = out.get(key, 0.0) + coeff
    return out


def phase_ket(ket: Ket, mode: int, phi: float) -> Ket:
    return {
        occ: amp * complex(math.cos(phi * occ[mode]), math.sin(phi * occ[mode]))
        for occ, amp in ket.items()
    }


def loss_branches(branches, mode: int, eta: float):
    """Split every (weightless) ket branch over the loss Kraus operators.

    Input and output are lists of unnormalized kets; squared norms are the
    branch probabilities.
    """
    out = []
    for ket in branches:
        max_n = max(occ[mode] for occ in ket)
        for k in range(max_n + 1):
            new: Ket = {}
            for occ, amp in ket.items():
                n = occ[mode]
                if k > n:
                    continue
                factor = math.sqrt(math.comb(n, k) * eta ** (n - k) * (1 - eta) ** k)
                if factor == 0.0:
                    continue
                dst = list(occ)
                dst[mode] = n - k
                key = tuple(dst)
                new[key] = new.get(key, 0.0) + amp * factor
            if new:
                out.append(new)
    return out


def branch_probabilities(branches) -> dict:
    """Occupation probabilities of a mixture of unnormalized ket branches."""
    probs: dict = {}
    for ket in branches:
        for occ, amp in ket.items():
            probs[occ] = probs.get(occ, 0.0) + abs(amp) ** 2
    return probs


def mixture_element(branches, bra, ket) -> complex:
    """Density-matrix element <bra| rho |ket> of a branch mixture."""
    total = 0j
    for b in branches:
        total += b.get(bra, 0.0) * complex(b.get(ket, 0.0)).conjugate()
    return total


def thermal_probs(p: float, n_max: int):
    w = [p**n / (1.0 + p) ** (n + 1) for n in range(n_max + 1)]
    z = sum(w)
    return [x / z for x in w]


def heralded_click_statistics(
    pair_probability: float,
    idler_transmission: float,
    herald_efficiency: float,
    arm_efficiency_a: float,
    arm_efficiency_b: float,
    n_max: int = 2,
):
    """Exact heralded p_ij for symmetric thermal sources, by enumeration.

    Assumes the linear (single-excitation) herald response at a balanced
    splitter, so the herald weight of a configuration with n_a + n_b idler
    photons is kappa * t_i * (n_a + n_b) / 2, independent of interference,
    and the memory-arm threshold detections are Bernoulli thinnings.  This
    recomputes the engine's predictions through plain probability theory.
    """
    pw = thermal_probs(pair_probability, n_max)
    kappa = herald_efficiency * idler_transmission
    s11 = s10 = s01 = herald = 0.0
    for na, nb in product(range(n_max + 1), repeat=2):
        weight = pw[na] * pw[nb] * kappa * (na + nb) / 2.0
        if weight == 0.0:
            continue
        herald += weight
        click_a = 1.0 - (1.0 - arm_efficiency_a) ** na
        click_b = 1.0 - (1.0 - arm_efficiency_b) ** nb
        s11 += weight * click_a * click_b
        s10 += weight * click_a * (1.0 - click_b)
        s01 += weight * (1.0 - click_a) * click_b
    return {
        "herald": herald,
        "p11": s11 / herald,
        "p10": s10 / herald,
        "p01": s01 / herald,
        "h2c": s11 * herald / (s10 * s01),
    }
