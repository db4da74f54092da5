"""Smooth monotone cutoffs with exact plateaus.

Everything downstream builds its cutoffs from :func:`rho`, so plateau values
are bitwise 0.0 or 1.0 and partition identities hold up to rounding only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _g(t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def rho(lam):
    """C-infinity step: 1 for lam <= -1, 0 for lam >= 0, decreasing between.

    rho(lam) = g(-lam) / (g(-lam) + g(lam + 1)) with g(t) = exp(-1/t) for t > 0.
    Symmetric about lam = -1/2 where it equals 1/2.
    """
    lam_arr = np.asarray(lam, dtype=float)
    lam1 = np.atleast_1d(lam_arr)
    a = _g(-lam1)
    b = _g(lam1 + 1.0)
    out = np.empty_like(lam1)
    left = lam1 <= -1.0
    right = lam1 >= 0.0
    mid = ~(left | right)
    out[left] = 1.0
    out[right] = 0.0
    out[mid] = a[mid] / (a[mid] + b[mid])
    if lam_arr.ndim == 0:
        return float(out[0])
    return out


def phi_less(lam, tau: float, sigma: float):
    """Smooth version of [lam < tau]: 1 for lam <= tau, 0 for lam >= tau + sigma."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    lam = np.asarray(lam, dtype=float)
    val = rho((lam - (tau + sigma)) / sigma)
    # pin the plateaus against rounding in tau + sigma
    return _pin(val, lam <= tau, lam >= tau + sigma, 1.0, 0.0)


def phi_greater(lam, tau: float, sigma: float):
    """Smooth version of [lam > tau]: 0 for lam <= tau - sigma, 1 for lam >= tau.

    Equal to 1 - phi_less(lam, tau - sigma, sigma); evaluated as
    1 - rho((lam - tau) / sigma) so the upper plateau starts exactly at tau.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    lam = np.asarray(lam, dtype=float)
    val = 1.0 - rho((lam - tau) / sigma)
    return _pin(val, lam <= tau - sigma, lam >= tau, 0.0, 1.0)


def _pin(val, low_mask, high_mask, low_value, high_value):
    if np.ndim(val) == 0:
        if low_mask:
            return low_value
        if high_mask:
            return high_value
        return float(val)
    val = np.where(low_mask, low_value, val)
    return np.where(high_mask, high_value, val)


@dataclass(frozen=True)
class CutoffSpec:
    sigma: float
    tau: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def less(self, lam):
        return phi_less(lam, self.tau, self.sigma)

    def greater(self, lam):
        return phi_greater(lam, self.tau, self.sigma)


def chi0_radial(r):
    """Radial profile: 0 for r <= 1, 1 for r >= 2."""
    return rho(1.0 - np.asarray(r, dtype=float))


def chi0(x):
    """chi_0 of a vector (components along the last axis) or of a scalar."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return chi0_radial(abs(x))
    return chi0_radial(np.linalg.norm(x, axis=-1))


def psi_plus(tau, theta: float):
    """Angular profile: 1 for theta <= tau <= 1, 0 for tau <= theta / 2."""
    return phi_greater(tau, theta, theta / 2)


def psi_minus(tau, theta: float):
    """Angular profile: 1 for tau <= -theta, 0 for tau >= -theta / 2."""
    return phi_less(tau, -theta, theta / 2)
