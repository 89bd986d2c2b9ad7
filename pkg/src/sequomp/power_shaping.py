"""Power profiles for sequential detection: constant, optimal exponential, leakage-robust.

Profiles are indexed in detection order (strongest first), so every shaped
profile is strictly decreasing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .signal_model import PowerProfile

DEFAULT_THETA = 0.1


@dataclass(frozen=True)
class ShapingSpec:
    n: int
    lam: float
    snr_total: float
    theta: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be positive, got {self.n}")
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"lam must lie in (0, 1), got {self.lam}")
        if not self.snr_total > 0:
            raise ValueError(f"snr_total must be positive, got {self.snr_total}")
        if not 0.0 <= self.theta < 1.0:
            raise ValueError(f"theta must lie in [0, 1), got {self.theta}")


def constant_profile(spec: ShapingSpec) -> PowerProfile:
    p = np.full(spec.n, spec.snr_total / (spec.lam * spec.n))
    return PowerProfile(p, spec.lam)


def optimal_gamma(spec: ShapingSpec) -> float:
    """Largest achievable MSINR with no leakage: ((1+SNR)^(1/n) - 1) / lam."""
    return math.expm1(math.log1p(spec.snr_total) / spec.n) / spec.lam


def optimal_profile(spec: ShapingSpec) -> PowerProfile:
    """Exponential profile p_l = g (1 + g lam)^(n-l) with g the optimal MSINR.

    Every position sees exactly the same SINR g.
    """
    if spec.theta != 0:
        raise ValueError("optimal_profile assumes zero leakage; use robust_profile_closed_form")
    g = optimal_gamma(spec)
    expo = np.arange(spec.n - 1, -1, -1, dtype=float)
    p = g * np.exp(expo * math.log1p(g * spec.lam))
    return PowerProfile(p, spec.lam)


def gamma_for_theta(spec: ShapingSpec) -> float:
    """MSINR (leakage-charged) achieved by the robust profile at total SNR."""
    if math.isinf(spec.snr_total):
        if spec.theta == 0:
            return math.inf
        log_r = math.log(spec.theta) / spec.n
    else:
        log_r = (math.log1p(spec.theta * spec.snr_total) - math.log1p(spec.snr_total)) / spec.n
    one_minus_zeta = -math.expm1(log_r)
    zeta = math.exp(log_r)
    return one_minus_zeta / (spec.lam * (zeta - spec.theta))


def robust_profile_closed_form(spec: ShapingSpec) -> PowerProfile:
    """Geometric profile p_j = (SNR/lam) (1-z) z^(j-1) / (1-z^n)."""
    log_zeta = (math.log1p(spec.theta * spec.snr_total) - math.log1p(spec.snr_total)) / spec.n
    one_minus_zeta = -math.expm1(log_zeta)
    one_minus_zeta_n = -math.expm1(spec.n * log_zeta)
    j = np.arange(spec.n, dtype=float)
    p = (spec.snr_total / spec.lam) * one_minus_zeta * np.exp(j * log_zeta) / one_minus_zeta_n
    return PowerProfile(p, spec.lam)


def leakage_system(spec: ShapingSpec, gamma: float) -> np.ndarray:
    """Matrix M with M p = gamma * 1 encoding p_l = gamma (1 + theta lam S_<l + lam S_>l)."""
    n = spec.n
    ones = np.ones((n, n))
    coupling = spec.theta * np.tril(ones, -1) + np.triu(ones, 1)
    return np.eye(n) - gamma * spec.lam * coupling


def robust_profile_solve(spec: ShapingSpec, gamma: float) -> PowerProfile:
    """Direct dense solve of the leakage system for a given MSINR gamma."""
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    M = leakage_system(spec, gamma)
    try:
        p = scipy.linalg.solve(M, np.full(spec.n, gamma))
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"leakage system is singular at gamma={gamma}") from exc
    if not np.all(p > 0):
        raise ValueError(f"gamma={gamma} yields a nonpositive profile")
    return PowerProfile(p, spec.lam)


def gamma_by_bisection(spec: ShapingSpec, tol: float = 1e-10, max_iter: int = 200) -> float:
    """Find gamma whose solved leakage profile meets the SNR target.

    Cross-check for gamma_for_theta. ``tol`` bounds the relative SNR mismatch.
    """

    def snr_at(g):
        n = spec.n
        M = leakage_system(spec, g)
        p = scipy.linalg.solve(M, np.full(n, g))
        return spec.lam * p.sum() if np.all(p > 0) else math.inf

    lo, hi = 0.0, optimal_gamma(spec)
    # gamma_theta <= gamma_0 for theta >= 0; widen if rounding puts it just above
    while snr_at(hi) < spec.snr_total:
        hi *= 2.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        s = snr_at(mid)
        if abs(s - spec.snr_total) <= tol * spec.snr_total:
            return mid
        if s < spec.snr_total:
            lo = mid
        else:
            hi = mid
    raise RuntimeError(f"bisection did not reach SNR tolerance {tol}")


def make_profile(kind: str, n: int, lam: float, snr_total: float, theta: float = DEFAULT_THETA) -> PowerProfile:
    """Build a profile by name: 'constant', 'optimal' or 'robust'."""
    if kind == "constant":
        return constant_profile(ShapingSpec(n, lam, snr_total))
    if kind == "optimal":
        return optimal_profile(ShapingSpec(n, lam, snr_total))
    if kind == "robust":
        return robust_profile_closed_form(ShapingSpec(n, lam, snr_total, theta))
    raise ValueError(f"unknown profile kind {kind!r}")
