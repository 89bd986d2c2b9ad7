"""Observation model y = A x + d with a Bernoulli-activity sparse signal.

Normalization: A and d have i.i.d. N(0, 1/m) entries, so the conditional
SNR of a signal x is simply ||x||^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


def sub_seed(master_seed: int, *keys: int) -> int:
    """Derive a 64-bit seed from a master seed and integer keys.

    The result depends only on the arguments, so work items can be seeded
    independently of the order in which they execute.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


def _check_lambda(lam: float) -> None:
    if not 0.0 < lam < 1.0:
        raise ValueError(f"activity probability must lie in (0, 1), got {lam!r}")


@dataclass(frozen=True)
class ProblemDims:
    n: int
    m: int
    lam: float

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError(f"dimensions must be positive, got n={self.n}, m={self.m}")
        _check_lambda(self.lam)


@dataclass(frozen=True)
class PowerProfile:
    """Conditional powers p_j = s_j^2 of the n components plus activity probability.

    ``declared_snr``, when given, is checked against lam * sum(p).
    """

    powers: np.ndarray
    lam: float
    declared_snr: Optional[float] = None

    def __post_init__(self):
        p = np.asarray(self.powers, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("powers must be a nonempty 1-d sequence")
        if not np.all(np.isfinite(p)) or np.any(p <= 0):
            raise ValueError("every conditional power must be positive and finite")
        _check_lambda(self.lam)
        p.setflags(write=False)
        object.__setattr__(self, "powers", p)
        if self.declared_snr is not None:
            snr = self.snr()
            if abs(snr - self.declared_snr) > 1e-12 * max(abs(self.declared_snr), 1e-300):
                raise ValueError(f"profile SNR {snr!r} does not match declared {self.declared_snr!r}")

    @property
    def n(self) -> int:
        return self.powers.size

    def snr(self) -> float:
        return float(self.lam * np.sum(self.powers))

    def snrmin(self) -> float:
        return float(np.min(self.powers))

    def mar(self) -> float:
        return self.lam * self.n * self.snrmin() / self.snr()

    def sigma_hat_sq(self, ell: int) -> float:
        return sigma_hat_sq(self, ell)

    def msinr(self, theta: float = 0.0) -> float:
        return msinr(self, theta)

    def reordered(self, order: Sequence[int]) -> "PowerProfile":
        """Profile with powers permuted so that new[i] = old[order[i]] (0-based)."""
        return PowerProfile(self.powers[np.asarray(order)], self.lam)


@dataclass(frozen=True)
class SignalInstance:
    b: np.ndarray
    s: np.ndarray
    x: np.ndarray
    support: tuple = field(default=())

    @property
    def k(self) -> int:
        return len(self.support)


@dataclass(frozen=True)
class MeasurementInstance:
    A: np.ndarray
    d: np.ndarray
    y: np.ndarray

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]


def draw_signal(profile: PowerProfile, rng_seed: int, random_signs: bool = False) -> SignalInstance:
    """Draw b_j ~ Bernoulli(lam) and form x_j = b_j s_j with s_j = +-sqrt(p_j).

    Signs are positive unless ``random_signs`` is set, in which case they are
    i.i.d. uniform on {-1, +1}.
    """
    rng = np.random.default_rng(rng_seed)
    n = profile.n
    b = (rng.random(n) < profile.lam).astype(np.int8)
    s = np.sqrt(profile.powers)
    if random_signs:
        s = s * rng.choice(np.array([-1.0, 1.0]), size=n)
    x = b * s
    return SignalInstance(b=b, s=s, x=x, support=tuple(int(j) for j in np.flatnonzero(b)))


def draw_measurement(x, dims: ProblemDims, rng_seed: int) -> MeasurementInstance:
    """Draw A (m x n) and d (m) with N(0, 1/m) entries and return y = A x + d."""
    x = np.asarray(x, dtype=float)
    if x.shape != (dims.n,):
        raise ValueError(f"signal has shape {x.shape}, expected ({dims.n},)")
    rng = np.random.default_rng(rng_seed)
    scale = 1.0 / np.sqrt(dims.m)
    A = rng.standard_normal((dims.m, dims.n)) * scale
    d = rng.standard_normal(dims.m) * scale
    return MeasurementInstance(A=A, d=d, y=A @ x + d)


def snr_of(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x @ x)


def _active_energies(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    e = x[x != 0] ** 2
    if e.size == 0:
        raise ValueError("signal has empty support")
    return e


def mar_of(x) -> float:
    """Minimum-to-average ratio of the nonzero energies, in (0, 1]."""
    e = _active_energies(x)
    return float(e.min() / (e.sum() / e.size))


def snrmin_of(x) -> float:
    return float(_active_energies(x).min())


def sigma_hat_sq(profile: PowerProfile, ell: int) -> float:
    """Average noise-plus-interference power 1 + lam * sum_{j > ell} p_j (ell is 1-based)."""
    if not 1 <= ell <= profile.n:
        raise IndexError(f"ell={ell} outside 1..{profile.n}")
    return float(1.0 + profile.lam * np.sum(profile.powers[ell:]))


def msinr(profile: PowerProfile, theta: float = 0.0) -> float:
    """Minimum over positions of p_l / (1 + theta*lam*sum_{j<l} p_j + lam*sum_{j>l} p_j).

    theta = 0 is the standard MSINR; theta > 0 charges a leakage fraction of
    the already-detected components as extra interference.
    """
    p = profile.powers
    lam = profile.lam
    head = np.concatenate(([0.0], np.cumsum(p)[:-1]))
    tail = np.concatenate((np.cumsum(p[::-1])[::-1][1:], [0.0]))
    return float(np.min(p / (1.0 + theta * lam * head + lam * tail)))
