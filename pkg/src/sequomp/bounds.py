"""Closed-form measurement-count scalings for support detection.

All logarithms are natural. ``k`` may be fractional, so the SequOMP bounds
can pass ``k = lam * n`` directly.
"""

from __future__ import annotations

import math


def _check_kn(k, n):
    if not 0 < k < n:
        raise ValueError(f"need 0 < k < n, got k={k}, n={n}")


def L_func(k: float, n: float) -> float:
    """(sqrt(log(n-k)) + sqrt(log k))^2."""
    _check_kn(k, n)
    return (math.sqrt(math.log(n - k)) + math.sqrt(max(math.log(k), 0.0))) ** 2


def ml_necessary_m(k, n, snr, mar, delta=0.0) -> float:
    """Necessary measurements for ML detection; ``snr * mar = inf`` gives the noiseless m > k."""
    _check_kn(k, n)
    return 2 * (1 - delta) / (mar * snr) * k * math.log(n - k) + k


def ml_sufficient_m(k, n, snr, mar, C=1.0) -> float:
    """Sufficient measurements for ML detection with the unspecified constant C."""
    _check_kn(k, n)
    if not C > 0:
        raise ValueError("C must be positive")
    return C * max(k * math.log(n - k) / (mar * snr), k * math.log(n / k))


def thresholding_sufficient_m(k, n, snr, mar, delta=0.0) -> float:
    _check_kn(k, n)
    if math.isinf(snr):
        return 2 * (1 + delta) * k * L_func(k, n) / mar
    return 2 * (1 + delta) * (1 + snr) * k * L_func(k, n) / (snr * mar)


def lasso_omp_scaling_m(k, n, variant: str) -> float:
    """High-SNR scalings: lasso 2k log(n-k) + k + 1, OMP 2k log(n-k)."""
    _check_kn(k, n)
    base = 2 * k * math.log(n - k)
    if variant == "omp":
        return base
    if variant == "lasso":
        return base + k + 1
    raise ValueError(f"variant must be 'lasso' or 'omp', got {variant!r}")


def sequomp_sufficient_m(n, lam, gamma, delta=0.0, use_4log=False) -> float:
    """Sufficient measurements for SequOMP with MSINR gamma: 2(1+delta) L / gamma + lam n.

    ``use_4log`` replaces L with its upper bound 4 log(n(1-lam)).
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    k = lam * n
    L = 4 * math.log(n * (1 - lam)) if use_4log else L_func(k, n)
    return 2 * (1 + delta) * L / gamma + k


def sequomp_known_ranks_m(n, lam, snr, mar, delta=0.0) -> float:
    """SequOMP bound with only the power ordering known (worst-case MSINR)."""
    sm = snr * mar
    k = lam * n
    factor = 1.0 if math.isinf(sm) else (1 + sm) / sm
    return 2 * (1 + delta) * k * factor * L_func(k, n) + k


def sequomp_best_profile_m(n, lam, snr, delta=0.0) -> float:
    """Large-n form of the SequOMP bound under the optimal exponential profile."""
    k = lam * n
    return 2 * (1 + delta) * L_func(k, n) / math.log1p(snr) * k + k


def gamma_lower_bound(snrmin, lam, n) -> float:
    """MSINR floor of any non-increasing profile with given smallest power."""
    return snrmin / (1 + lam * n * snrmin)


def epsilon_for_delta(delta) -> float:
    return math.sqrt(1 + delta) - 1


def theorem_threshold_mu(n, lam, m, epsilon) -> float:
    """Threshold (1+eps) log(n(1-lam)) / (m - lam n) used by the SequOMP guarantee."""
    if not m > lam * n:
        raise ValueError(f"need m > lam*n, got m={m}, lam*n={lam * n}")
    return (1 + epsilon) * math.log(n * (1 - lam)) / (m - lam * n)
