"""Scalar estimator formulas shared by the analytic engine and the analysis.

Kept free of uncertainty propagation so that :mod:`afclink.link` can use the
same definitions for its predictions that :mod:`afclink.analysis` uses for
measured values.
"""

from __future__ import annotations

import math

__all__ = [
    "coherence_from_visibility",
    "concurrence_value",
    "h2c_value",
    "effective_fidelity_closed_form",
]


def coherence_from_visibility(visibility: float, p01: float, p10: float) -> float:
    """Off-diagonal magnitude d = V (p01 + p10) / 2."""
    return visibility * (p01 + p10) / 2.0


def concurrence_value(
    p00: float, p01: float, p10: float, p11: float, visibility: float
) -> float:
    """Concurrence max[0, 2|d| - 2 sqrt(p00 p11)] of the heralded state."""
    d = coherence_from_visibility(visibility, p01, p10)
    return max(0.0, 2.0 * abs(d) - 2.0 * math.sqrt(max(p00 * p11, 0.0)))


def concurrence_raw(
    p00: float, p01: float, p10: float, p11: float, visibility: float
) -> float:
    """Concurrence before clipping at zero (diagnostic)."""
    d = coherence_from_visibility(visibility, p01, p10)
    return 2.0 * abs(d) - 2.0 * math.sqrt(max(p00 * p11, 0.0))


def h2c_value(p01: float, p10: float, p11: float) -> float:
    """Heralded cross-correlation p11 / (p10 p01)."""
    if p01 * p10 <= 0.0:
        raise ZeroDivisionError("insufficient single counts: p01 * p10 = 0")
    return p11 / (p01 * p10)


def effective_fidelity_closed_form(
    p01: float, p10: float, p11: float, visibility: float
) -> float:
    """Overlap with the ideal Bell state after discarding the vacuum term.

    F = (1/2) (p01 + p10)(1 + V) / (p01 + p10 + p11).
    """
    s = p01 + p10
    if s + p11 <= 0.0:
        raise ZeroDivisionError("all-zero one- and two-photon sector")
    return 0.5 * s * (1.0 + visibility) / (s + p11)
