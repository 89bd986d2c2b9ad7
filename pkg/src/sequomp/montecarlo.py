"""Monte Carlo estimation of false-alarm and missed-detection rates.

Rates are counted per index exposure: every inactive index of every trial
is one chance for a false alarm, every active index one chance for a miss.

Each trial draws its signal from ``sub_seed(master, stream, trial)`` and its
measurement from ``sub_seed(master, stream, m, trial)``. Trials are processed
in fixed chunks of ``CHUNK`` and the per-chunk counts are summed, so results
are identical for any number of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, List, Optional

import numpy as np
from scipy import stats

from . import detectors
from .power_shaping import DEFAULT_THETA, make_profile
from .signal_model import PowerProfile, ProblemDims, draw_measurement, draw_signal, sub_seed

CHUNK = 100
MAX_CALIBRATION_ITER = 40

ESTIMATE_STREAM = 0
CALIBRATE_STREAM = 1
SELFTEST_STREAM = 2

DETECTORS = ("thresholding", "sequomp", "omp", "oracle")
PROFILES = ("constant", "optimal", "robust")
ORDERS = ("sorted", "reversed")


class CalibrationError(RuntimeError):
    def __init__(self, message, best_mu):
        super().__init__(message)
        self.best_mu = best_mu


@dataclass(frozen=True)
class ExperimentConfig:
    dims: ProblemDims
    profile_kind: str = "constant"
    detector: str = "sequomp"
    snr_db: float = 20.0
    pfa_target: float = 1e-3
    trials: int = 1000
    master_seed: int = 0
    theta: float = DEFAULT_THETA
    calibration_trials: Optional[int] = None
    order: str = "sorted"
    random_signs: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not 0.0 < self.pfa_target < 1.0:
            raise ValueError("pfa_target must lie in (0, 1)")
        if self.profile_kind not in PROFILES:
            raise ValueError(f"profile_kind must be one of {PROFILES}, got {self.profile_kind!r}")
        if self.detector not in DETECTORS:
            raise ValueError(f"detector must be one of {DETECTORS}, got {self.detector!r}")
        if self.order not in ORDERS:
            raise ValueError(f"order must be one of {ORDERS}, got {self.order!r}")
        if self.calibration_trials is not None and self.calibration_trials < 1:
            raise ValueError("calibration_trials must be at least 1")

    @property
    def snr(self) -> float:
        return 10.0 ** (self.snr_db / 10.0)

    @property
    def n_calibration(self) -> int:
        return self.calibration_trials if self.calibration_trials is not None else 10 * self.trials

    def profile(self) -> PowerProfile:
        return make_profile(self.profile_kind, self.dims.n, self.dims.lam, self.snr, self.theta)

    def detection_order(self) -> np.ndarray:
        order = np.argsort(-self.profile().powers, kind="stable")
        return order[::-1].copy() if self.order == "reversed" else order

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = {"n": self.dims.n, "m": self.dims.m, "lambda": self.dims.lam}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config field(s): {', '.join(sorted(unknown))}")
        if "dims" not in d:
            raise ValueError("missing config field: dims")
        dims = d.pop("dims")
        try:
            d["dims"] = ProblemDims(n=int(dims["n"]), m=int(dims.get("m", 1)),
                                    lam=float(dims.get("lambda", dims.get("lam"))))
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ValueError(f"invalid config field: dims ({exc})") from exc
        casts = {"profile_kind": str, "detector": str, "snr_db": float, "pfa_target": float,
                 "trials": int, "master_seed": int, "theta": float, "order": str, "random_signs": bool,
                 "calibration_trials": lambda v: None if v is None else int(v)}
        for name, cast in casts.items():
            if name in d:
                try:
                    d[name] = cast(d[name])
                except (TypeError, ValueError) as exc:
                    raise ValueError(f"invalid config field: {name} ({exc})") from exc
        return cls(**d)


@dataclass
class ExperimentResult:
    m: int
    mu: float
    pfa_hat: float
    pmd_hat: float
    trials: int
    fa_events: int
    md_events: int
    inactive_exposures: int
    active_exposures: int
    seed: int
    per_m: Optional[list] = None

    @property
    def pfa_se(self) -> float:
        return _binomial_se(self.pfa_hat, self.inactive_exposures)

    @property
    def pmd_se(self) -> float:
        return _binomial_se(self.pmd_hat, self.active_exposures)


def _binomial_se(p, n):
    return math.sqrt(p * (1 - p) / n) if n else float("nan")


@dataclass
class _Counts:
    fa: int = 0
    md: int = 0
    inactive: int = 0
    active: int = 0
    null_stats: List[np.ndarray] = field(default_factory=list)

    def __add__(self, other):
        return _Counts(self.fa + other.fa, self.md + other.md, self.inactive + other.inactive,
                       self.active + other.active, self.null_stats + other.null_stats)


def draw_batch(config: ExperimentConfig, m: int, trial_ids: Iterable[int], stream: int,
               profile: Optional[PowerProfile] = None):
    """Stack the signals and measurements of the given trials."""
    profile = profile or config.profile()
    dims = ProblemDims(config.dims.n, m, config.dims.lam)
    A, y, truth = [], [], []
    for t in trial_ids:
        sig = draw_signal(profile, sub_seed(config.master_seed, stream, t), config.random_signs)
        meas = draw_measurement(sig.x, dims, sub_seed(config.master_seed, stream, m, t))
        A.append(meas.A)
        y.append(meas.y)
        truth.append(sig.b.astype(bool))
    return np.stack(A), np.stack(y), np.stack(truth)


def _detect(config, A, y, truth, mu, order):
    """Return (detected mask, statistics or None). Statistics only for mu-free detectors."""
    if config.detector == "thresholding":
        rho = detectors.threshold_stats_batch(A, y)
        return rho > mu, rho
    if config.detector == "sequomp":
        _, det = detectors.sequential_batch(A, y, mu, order)
        return det, None
    if config.detector == "oracle":
        rho, det = detectors.sequential_batch(A, y, mu, order, truth=truth)
        return det, rho
    return detectors.omp_batch(A, y, mu=mu), None


def _run_chunk(config, m, mu, stream, ids, profile, order, keep_null):
    A, y, truth = draw_batch(config, m, ids, stream, profile)
    det, rho = _detect(config, A, y, truth, mu, order)
    c = _Counts(fa=int(np.sum(det & ~truth)), md=int(np.sum(~det & truth)),
                inactive=int(np.sum(~truth)), active=int(np.sum(truth)))
    if keep_null and rho is not None:
        c.null_stats = [rho[~truth]]
    return c


def _run(config, m, mu, stream, n_trials, workers=1, keep_null=False) -> _Counts:
    profile = config.profile()
    order = config.detection_order()
    chunks = [range(s, min(s + CHUNK, n_trials)) for s in range(0, n_trials, CHUNK)]
    job = lambda ids: _run_chunk(config, m, mu, stream, ids, profile, order, keep_null)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, chunks))
    else:
        parts = [job(ids) for ids in chunks]
    total = _Counts()
    for p in parts:
        total = total + p
    return total


def _result(config, m, mu, c: _Counts, trials) -> ExperimentResult:
    pfa = c.fa / c.inactive if c.inactive else 0.0
    pmd = c.md / c.active if c.active else 0.0
    return ExperimentResult(m=m, mu=mu, pfa_hat=pfa, pmd_hat=pmd, trials=trials, fa_events=c.fa,
                            md_events=c.md, inactive_exposures=c.inactive, active_exposures=c.active,
                            seed=config.master_seed)


def estimate_rates(config: ExperimentConfig, m: int, mu: float, workers: int = 1,
                   stream: int = ESTIMATE_STREAM, trials: Optional[int] = None) -> ExperimentResult:
    """Estimate P_FA and P_MD of the configured detector at threshold mu."""
    if m < 1:
        raise ValueError("m must be positive")
    trials = config.trials if trials is None else trials
    return _result(config, m, mu, _run(config, m, mu, stream, trials, workers), trials)


def null_quantile_guess(config: ExperimentConfig, m: int) -> float:
    """Threshold giving the target P_FA if inactive correlations were exactly null.

    A column independent of the residual in an r-dimensional space has squared
    correlation distributed Beta(1/2, (r-1)/2); sequential detectors work in
    roughly m - lam*n dimensions.
    """
    r = m if config.detector == "thresholding" else m - config.dims.lam * config.dims.n
    r = max(r, 2.0)
    return float(stats.beta.isf(config.pfa_target, 0.5, (r - 1) / 2))


def calibrate_threshold(config: ExperimentConfig, m: int, workers: int = 1) -> float:
    """Find mu whose estimated false-alarm rate matches ``config.pfa_target``.

    Bisection on mu in (0, 1) over a fixed set of calibration trials (common
    random numbers, disjoint from the estimation trials). The bracket starts
    around the null-distribution quantile and is widened until it straddles
    the target. Stops when |pfa_hat - target| <= max(0.2 target, 2 SE).
    """
    target = config.pfa_target
    n_cal = config.n_calibration
    cache = {}

    if config.detector in ("thresholding", "oracle"):
        # statistics do not depend on mu: one pass, then evaluate any mu exactly
        c = _run(config, m, 0.5, CALIBRATE_STREAM, n_cal, workers, keep_null=True)
        null = np.concatenate(c.null_stats) if c.null_stats else np.zeros(0)
        inactive = c.inactive

        def pfa(mu):
            return (np.count_nonzero(null > mu) / inactive) if inactive else 0.0, inactive
    else:
        def pfa(mu):
            if mu not in cache:
                c = _run(config, m, mu, CALIBRATE_STREAM, n_cal, workers)
                cache[mu] = ((c.fa / c.inactive) if c.inactive else 0.0, c.inactive)
            return cache[mu]

    def close(p, exposures):
        se = _binomial_se(target, exposures) if exposures else math.inf
        return abs(p - target) <= max(0.2 * target, 2 * se)

    best_mu, best_err = None, math.inf
    iterations = 0

    def probe(mu):
        nonlocal best_mu, best_err, iterations
        iterations += 1
        p, exposures = pfa(mu)
        err = abs(p - target)
        if err < best_err:
            best_mu, best_err = mu, err
        return p, close(p, exposures)

    mu0 = min(max(null_quantile_guess(config, m), 1e-12), 1 - 1e-12)
    p, ok = probe(mu0)
    if ok:
        return mu0
    # widen geometrically towards the target until it is bracketed
    lo, hi = (mu0, None) if p > target else (None, mu0)
    step = 1.5
    while (lo is None or hi is None) and iterations < MAX_CALIBRATION_ITER:
        if hi is None:
            cand = min(lo * step, 1.0 - (1.0 - lo) / step)
            p, ok = probe(cand)
            if ok:
                return cand
            lo, hi = (cand, None) if p > target else (lo, cand)
        else:
            cand = hi / step
            p, ok = probe(cand)
            if ok:
                return cand
            lo, hi = (cand, hi) if p > target else (None, cand)
        step *= 1.5
    while iterations < MAX_CALIBRATION_ITER and lo is not None and hi is not None:
        mid = 0.5 * (lo + hi)
        p, ok = probe(mid)
        if ok:
            return mid
        if p > target:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(
        f"threshold calibration did not reach P_FA={target} within {MAX_CALIBRATION_ITER} iterations "
        f"(best mu={best_mu}, |error|={best_err})", best_mu)


def sweep_m(config: ExperimentConfig, m_grid, workers: int = 1,
            stop_below_pmd: Optional[float] = None) -> List[ExperimentResult]:
    """Calibrate and estimate at every m of an increasing grid.

    With ``stop_below_pmd`` the sweep ends at the first m whose P_MD is at or
    below that level.
    """
    grid = [int(m) for m in m_grid]
    if not grid:
        raise ValueError("m grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("m grid must be strictly increasing")
    out = []
    for m in grid:
        mu = calibrate_threshold(config, m, workers)
        res = estimate_rates(config, m, mu, workers)
        out.append(res)
        if stop_below_pmd is not None and res.pmd_hat <= stop_below_pmd:
            break
    return out


def first_m_below(results: List[ExperimentResult], level: float = 0.01) -> Optional[int]:
    for r in results:
        if r.pmd_hat <= level:
            return r.m
    return None


def find_crossing(config: ExperimentConfig, m_grid, level: float = 0.01, workers: int = 1,
                  confirm: int = 2):
    """Locate the first grid m with P_MD <= level without sweeping every point.

    Bisects the grid assuming P_MD falls with m, then re-checks up to
    ``confirm`` grid points below the hit and moves down if any of them also
    qualifies. Each m uses its own seeds, so a result at a given m equals the
    one a full sweep would produce. Returns (m or None, {m: result}).
    """
    grid = sorted({int(m) for m in m_grid})
    if not grid:
        raise ValueError("m grid is empty")
    seen = {}

    def at(i):
        m = grid[i]
        if m not in seen:
            seen[m] = estimate_rates(config, m, calibrate_threshold(config, m, workers), workers)
        return seen[m]

    lo, hi = -1, len(grid) - 1
    if at(hi).pmd_hat > level:
        return None, seen
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if at(mid).pmd_hat <= level:
            hi = mid
        else:
            lo = mid
    i = hi
    while True:
        below = [j for j in range(i - 1, max(i - 1 - confirm, -1), -1) if at(j).pmd_hat <= level]
        if not below:
            return grid[i], seen
        i = min(below)


@dataclass
class SelftestReport:
    expected: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    z: np.ndarray
    draws: int

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))


def residual_variance_selftest(config: ExperimentConfig, draws: int, x=None,
                               m: Optional[int] = None) -> SelftestReport:
    """Compare mean ||e_i||^2 with (m_i/m) sigma^2(i) for a fixed signal.

    e_i = P_i (y - a_i x_i), where P_i projects off the true active columns
    preceding i, m_i is the dimension of P_i's range and
    sigma^2(i) = 1 + sum_{j>i} x_j^2. The signal is held fixed while A and d
    are redrawn. ``x`` defaults to one draw from the configured profile.
    """
    n = config.dims.n
    m = config.dims.m if m is None else m
    if x is None:
        x = draw_signal(config.profile(), sub_seed(config.master_seed, SELFTEST_STREAM),
                        config.random_signs).x
    x = np.asarray(x, dtype=float)
    active = x != 0
    preceding = np.concatenate(([0], np.cumsum(active)[:-1]))
    m_i = m - preceding
    tail = np.concatenate((np.cumsum((x ** 2)[::-1])[::-1][1:], [0.0]))
    expected = (m_i / m) * (1.0 + tail)

    dims = ProblemDims(n, m, config.dims.lam)
    total = np.zeros(n)
    total_sq = np.zeros(n)
    for start in range(0, draws, CHUNK):
        ids = range(start, min(start + CHUNK, draws))
        meas = [draw_measurement(x, dims, sub_seed(config.master_seed, SELFTEST_STREAM, m, t)) for t in ids]
        A = np.stack([me.A for me in meas])
        y = np.stack([me.y for me in meas])
        e2 = _residual_energies(A, y, x, active)
        total += e2.sum(axis=0)
        total_sq += (e2 ** 2).sum(axis=0)
    mean = total / draws
    var = (total_sq / draws - mean ** 2) * draws / (draws - 1)
    se = np.sqrt(var / draws)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, (mean - expected) / se, 0.0)
    return SelftestReport(expected=expected, mean=mean, se=se, z=z, draws=draws)


def _residual_energies(A, y, x, active):
    T, m, n = A.shape
    PA = A.copy()
    r = y.copy()
    e2 = np.zeros((T, n))
    for i in range(n):
        e = r - x[i] * PA[:, :, i]
        e2[:, i] = np.einsum("tm,tm->t", e, e)
        if active[i] and i < n - 1:
            q = PA[:, :, i] / np.linalg.norm(PA[:, :, i], axis=1, keepdims=True)
            rest = PA[:, :, i + 1:]
            rest -= q[:, :, None] * np.einsum("tm,tmk->tk", q, rest)[:, None, :]
            r = r - q * np.einsum("tm,tm->t", q, r)[:, None]
    return e2


def with_m(config: ExperimentConfig, m: int) -> ExperimentConfig:
    return replace(config, dims=ProblemDims(config.dims.n, m, config.dims.lam))
