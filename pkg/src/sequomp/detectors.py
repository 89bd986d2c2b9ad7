"""Support detectors: thresholding, SequOMP, OMP and the true-support oracle.

Indices are 0-based. Each detector has a single-instance form returning a
:class:`DetectorOutput` and a batched form over a stack of T problems
(``A`` of shape (T, m, n), ``y`` of shape (T, m)) used by the Monte Carlo
harness. The batched kernels are plain numpy and make the same decisions as
the single-instance versions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .signal_model import MeasurementInstance

# residual column norm below RANK_TOL * ||a_j|| counts as lying in the detected span
RANK_TOL = 1e-10


@dataclass(frozen=True)
class DetectorOutput:
    support: tuple
    statistics: np.ndarray
    threshold: float
    order: np.ndarray
    trace: list = field(default_factory=list)


def correlation_rho(a, y) -> float:
    """Squared correlation coefficient |a'y|^2 / (||a||^2 ||y||^2)."""
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    na2 = a @ a
    ny2 = y @ y
    if na2 == 0 or ny2 == 0:
        raise ValueError("correlation of a zero vector is undefined")
    return float((a @ y) ** 2 / (na2 * ny2))


def project_residual(basis, v) -> np.ndarray:
    """Remove from v its component in span(basis); basis columns must be orthonormal."""
    v = np.array(v, dtype=float)
    basis = np.asarray(basis, dtype=float)
    if basis.size == 0:
        return v
    # two passes of modified Gram-Schmidt
    for _ in range(2):
        for q in basis.T:
            v -= (q @ v) * q
    return v


class _Basis:
    """Orthonormal basis of accepted columns, grown by MGS with reorthogonalization."""

    def __init__(self, m: int):
        self.cols = np.empty((m, 0))

    def residual(self, v):
        return project_residual(self.cols, v)

    def append(self, residual):
        q = project_residual(self.cols, residual)
        q /= np.linalg.norm(q)
        self.cols = np.column_stack((self.cols, q))


def _projected_rho(pa, a_norm2, r) -> float:
    na2 = pa @ pa
    r2 = r @ r
    if na2 <= (RANK_TOL ** 2) * a_norm2 or r2 == 0:
        return 0.0
    return float((pa @ r) ** 2 / (na2 * r2))


def _check_order(order, n) -> np.ndarray:
    if order is None:
        return np.arange(n)
    order = np.asarray(order, dtype=int)
    if order.shape != (n,) or not np.array_equal(np.sort(order), np.arange(n)):
        raise ValueError("order must be a permutation of 0..n-1")
    return order


def threshold_detect(meas: MeasurementInstance, mu: float) -> DetectorOutput:
    A, y = meas.A, meas.y
    rho = threshold_stats_batch(A[None], y[None])[0]
    support = tuple(int(j) for j in np.flatnonzero(rho > mu))
    return DetectorOutput(support, rho, mu, np.arange(meas.n))


def _sequential(meas, mu, order, accept_fn):
    A, y = meas.A, meas.y
    order = _check_order(order, meas.n)
    basis = _Basis(meas.m)
    r = y.copy()
    rho = np.zeros(meas.n)
    accepted = []
    trace = []
    for idx in order:
        a = A[:, idx]
        pa = basis.residual(a)
        rho[idx] = _projected_rho(pa, a @ a, r)
        in_span = pa @ pa <= (RANK_TOL ** 2) * (a @ a)
        take = accept_fn(idx, rho[idx]) and not in_span
        trace.append((int(idx), rho[idx], take))
        if take:
            accepted.append(int(idx))
            basis.append(pa)
            q = basis.cols[:, -1]
            r = r - (q @ r) * q
    return accepted, rho, order, trace


def sequomp_detect(meas: MeasurementInstance, mu: float, order: Optional[Sequence[int]] = None) -> DetectorOutput:
    """One pass over the columns in ``order``, projecting off every accepted column.

    ``order`` defaults to 0..n-1, which is strongest-first for shaped profiles.
    """
    accepted, rho, order, trace = _sequential(meas, mu, order, lambda idx, r: r > mu)
    return DetectorOutput(tuple(sorted(accepted)), rho, mu, order, trace)


def oracle_rho_detect(meas: MeasurementInstance, true_support, mu: float,
                      order: Optional[Sequence[int]] = None) -> DetectorOutput:
    """Test-only detector that projects off the true active columns preceding each index.

    Its support equals the true support exactly when SequOMP's does.
    """
    truth = set(int(j) for j in true_support)
    _, rho, order, trace = _sequential(meas, mu, order, lambda idx, r: idx in truth)
    support = tuple(int(j) for j in np.flatnonzero(rho > mu))
    return DetectorOutput(support, rho, mu, order, trace)


def omp_detect(meas: MeasurementInstance, mu: Optional[float] = None,
               n_iter: Optional[int] = None) -> DetectorOutput:
    """Orthogonal matching pursuit with either a threshold or a fixed iteration count.

    Each iteration selects, among the remaining columns, the one with the
    largest projected correlation (ties go to the lowest index). With ``mu``
    the loop stops once that correlation is not above ``mu``; with ``n_iter``
    it runs exactly that many iterations.
    """
    if (mu is None) == (n_iter is None):
        raise ValueError("give exactly one of mu or n_iter")
    A, y = meas.A, meas.y
    m, n = A.shape
    if n_iter is not None and n_iter > min(m, n):
        raise ValueError(f"n_iter={n_iter} exceeds min(m, n)={min(m, n)}")
    basis = _Basis(m)
    r = y.copy()
    a_norm2 = np.einsum("ij,ij->j", A, A)
    rho = np.zeros(n)
    selected: list = []
    trace = []
    max_iter = n_iter if n_iter is not None else min(m, n)
    for _ in range(max_iter):
        best, best_rho, best_pa = -1, -1.0, None
        for j in range(n):
            if j in selected:
                continue
            pa = basis.residual(A[:, j])
            rj = _projected_rho(pa, a_norm2[j], r)
            if pa @ pa <= (RANK_TOL ** 2) * a_norm2[j]:
                rj = -1.0
            rho[j] = max(rj, 0.0)
            if rj > best_rho:
                best, best_rho, best_pa = j, rj, pa
        if best < 0 or (mu is not None and not best_rho > mu):
            break
        selected.append(best)
        trace.append((best, best_rho))
        basis.append(best_pa)
        q = basis.cols[:, -1]
        r = r - (q @ r) * q
    threshold = mu if mu is not None else float("nan")
    return DetectorOutput(tuple(sorted(selected)), rho, threshold, np.arange(n), trace)


# --- batched kernels -------------------------------------------------------


def threshold_stats_batch(A: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Correlations rho (T, n) of every column with y for a stack of problems."""
    num = np.einsum("tmn,tm->tn", A, y) ** 2
    a2 = np.einsum("tmn,tmn->tn", A, A)
    y2 = np.einsum("tm,tm->t", y, y)
    return num / (a2 * y2[:, None])


def _reorth(Q, cnt, idx, q):
    """Project q (rows for trials idx) off the stored basis rows Q[idx, :cnt] and normalize."""
    k = int(cnt[idx].max()) if idx.size else 0
    if k:
        Qi = Q[idx, :k]
        q = q - np.einsum("tkm,tk->tm", Qi, np.einsum("tkm,tm->tk", Qi, q))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def _store(Q, cnt, idx, q):
    need = int(cnt[idx].max()) + 1
    if need > Q.shape[1]:
        grown = np.zeros((Q.shape[0], max(2 * Q.shape[1], need), Q.shape[2]))
        grown[:, :Q.shape[1]] = Q
        Q = grown
    Q[idx, cnt[idx]] = q
    cnt[idx] += 1
    return Q


def sequential_batch(A: np.ndarray, y: np.ndarray, mu: float, order=None,
                     truth: Optional[np.ndarray] = None):
    """SequOMP over a stack of problems, or the oracle pass when ``truth`` is given.

    ``truth`` is a (T, n) boolean mask of true supports; when present, the
    projections follow the true support instead of the detector's decisions.
    Returns ``(rho, detected)``, both (T, n) in original index order.
    """
    T, m, n = A.shape
    order = _check_order(order, n)
    PA = A[:, :, order].copy()
    a2 = np.einsum("tmn,tmn->tn", PA, PA)
    r = y.copy()
    rho = np.zeros((T, n))
    Q = np.zeros((T, 8, m))
    cnt = np.zeros(T, dtype=int)
    tol2 = RANK_TOL ** 2
    for pos in range(n):
        pa = PA[:, :, pos]
        na2 = np.einsum("tm,tm->t", pa, pa)
        r2 = np.einsum("tm,tm->t", r, r)
        ok = (na2 > tol2 * a2[:, pos]) & (r2 > 0)
        num = np.einsum("tm,tm->t", pa, r) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            rp = np.where(ok, num / (na2 * r2), 0.0)
        rho[:, order[pos]] = rp
        if truth is None:
            take = rp > mu
        else:
            take = truth[:, order[pos]] & (na2 > tol2 * a2[:, pos])
        idx = np.flatnonzero(take)
        if idx.size == 0 or pos == n - 1:
            continue
        q = _reorth(Q, cnt, idx, pa[idx] / np.sqrt(na2[idx])[:, None])
        Q = _store(Q, cnt, idx, q)
        rest = PA[idx, :, pos + 1:]
        rest -= q[:, :, None] * np.einsum("tm,tmk->tk", q, rest)[:, None, :]
        PA[idx, :, pos + 1:] = rest
        r[idx] -= q * np.einsum("tm,tm->t", q, r[idx])[:, None]
    detected = rho > mu
    return rho, detected


def omp_batch(A: np.ndarray, y: np.ndarray, mu: Optional[float] = None,
              n_iter: Optional[int] = None) -> np.ndarray:
    """OMP over a stack of problems; returns the (T, n) boolean selection mask."""
    if (mu is None) == (n_iter is None):
        raise ValueError("give exactly one of mu or n_iter")
    T, m, n = A.shape
    if n_iter is not None and n_iter > min(m, n):
        raise ValueError(f"n_iter={n_iter} exceeds min(m, n)={min(m, n)}")
    selected = np.zeros((T, n), dtype=bool)
    live = np.arange(T)
    PA = A.copy()
    a2 = np.einsum("tmn,tmn->tn", A, A)
    r = y.copy()
    Q = np.zeros((T, 8, m))
    cnt = np.zeros(T, dtype=int)
    tol2 = RANK_TOL ** 2
    max_iter = n_iter if n_iter is not None else min(m, n)
    for _ in range(max_iter):
        if live.size == 0:
            break
        na2 = np.einsum("tmn,tmn->tn", PA, PA)
        r2 = np.einsum("tm,tm->t", r, r)
        num = np.einsum("tmn,tm->tn", PA, r) ** 2
        ok = (na2 > tol2 * a2[live]) & ~selected[live]
        with np.errstate(divide="ignore", invalid="ignore"):
            rho = np.where(ok & (r2 > 0)[:, None], num / (na2 * r2[:, None]), 0.0)
        rho[~ok] = -1.0
        best = np.argmax(rho, axis=1)
        best_rho = rho[np.arange(live.size), best]
        go = best_rho >= 0 if mu is None else best_rho > mu
        keep = np.flatnonzero(go)
        live, best, PA, r, na2, Q, cnt = (live[keep], best[keep], PA[keep], r[keep],
                                          na2[keep], Q[keep], cnt[keep])
        if live.size == 0:
            break
        selected[live, best] = True
        rows = np.arange(live.size)
        q = PA[rows, :, best] / np.sqrt(na2[rows, best])[:, None]
        q = _reorth(Q, cnt, rows, q)
        Q = _store(Q, cnt, rows, q)
        PA -= q[:, :, None] * np.einsum("tm,tmn->tn", q, PA)[:, None, :]
        r -= q * np.einsum("tm,tm->t", q, r)[:, None]
    return selected
