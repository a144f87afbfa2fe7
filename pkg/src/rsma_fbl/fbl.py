"""Finite-blocklength normal-approximation rate kernel."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG2E = 1.0 / math.log(2.0)


def q_func(x: float) -> float:
    """Standard Gaussian tail probability Q(x)."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def q_inv(epsilon: float) -> float:
    """Inverse of the Gaussian tail: z such that Q(z) = epsilon.

    Newton steps on log Q(z), safeguarded by a shrinking bisection bracket.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if epsilon == 0.5:
        return 0.0
    lo, hi = -40.0, 40.0
    target = math.log(epsilon)
    z = 0.0
    for _ in range(200):
        q = q_func(z)
        g = math.log(q) - target if q > 0 else math.inf
        if g > 0:
            lo = z
        else:
            hi = z
        pdf = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        step = g * q / pdf if q > 0 and pdf > 0 else math.inf
        z_new = z + step
        if not lo < z_new < hi:
            z_new = 0.5 * (lo + hi)
        if abs(z_new - z) <= 1e-15 * max(1.0, abs(z)):
            return z_new
        z = z_new
    return z


def penalty_constant(epsilon: float) -> float:
    """Q^{-1}(epsilon) * log2(e), the factor multiplying the dispersion term."""
    return q_inv(epsilon) * LOG2E


def dispersion(gamma):
    """Channel dispersion 1 - (1+gamma)^-2 (scalar or array)."""
    g = np.asarray(gamma, dtype=float)
    if np.any(g < 0):
        raise ValueError("SINR must be nonnegative")
    v = 1.0 - 1.0 / (1.0 + g) ** 2
    return float(v) if v.ndim == 0 else v


@dataclass(frozen=True)
class FblParams:
    epsilon: float
    blocklength: int
    time_fraction: float = 1.0
    infinite: bool = False

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 0.5:
            raise ValueError(f"epsilon {self.epsilon} outside (0, 0.5]")
        if not self.infinite and self.blocklength < 1:
            raise ValueError("blocklength must be >= 1")
        if not 0.0 < self.time_fraction <= 1.0:
            raise ValueError(f"time_fraction {self.time_fraction} outside (0, 1]")


def fbl_rate(gamma, params: FblParams):
    """Normal-approximation rate in bits per channel use.

    May be negative at low SINR; callers clamp when reporting.
    """
    g = np.asarray(gamma, dtype=float)
    shannon = np.log2(1.0 + g)
    if params.infinite:
        r = params.time_fraction * shannon
    else:
        b = penalty_constant(params.epsilon)
        r = params.time_fraction * (shannon - np.sqrt(dispersion(g) / params.blocklength) * b)
    return float(r) if np.ndim(r) == 0 else r
