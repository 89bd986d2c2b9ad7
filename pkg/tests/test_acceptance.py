"""Acceptance gate: every criterion at its stated tolerance.

Each test prints one PASS/FAIL line; the lines are repeated in the
"acceptance criteria" section at the end of the pytest run.
"""

import itertools
import json
import math

import numpy as np

from sequomp import bounds, cli
from sequomp import detectors as det
from sequomp.montecarlo import ExperimentConfig, calibrate_threshold, estimate_rates, find_crossing, \
    residual_variance_selftest
from sequomp.power_shaping import (ShapingSpec, gamma_for_theta, make_profile, optimal_profile,
                                   robust_profile_closed_form, robust_profile_solve)
from sequomp.signal_model import PowerProfile, ProblemDims, draw_measurement, draw_signal, msinr, snr_of, \
    mar_of, snrmin_of, sub_seed

STEP5_GRID = list(range(20, 501, 5))


def figure_cfg(detector, profile):
    return cli.figure_config(detector, profile, {})


def crossings(curves):
    found = {}
    for detector, profile in curves:
        m, _ = find_crossing(figure_cfg(detector, profile), STEP5_GRID, level=0.01)
        found[(detector, profile)] = m
    return found


def within(m, ref, tol):
    return m is not None and abs(m - ref) <= tol * ref


def test_fig2_detector_comparison(report):
    refs = {("thresholding", "constant"): 210, ("sequomp", "constant"): 170, ("sequomp", "robust"): 95}
    found = crossings(refs)
    close = all(within(found[c], refs[c], 0.15) for c in refs)
    ms = [found[c] for c in refs]
    ordered = None not in ms and ms[2] < ms[1] < ms[0]
    detail = ", ".join(f"{d}-{p} m={found[(d, p)]} (ref {r})" for (d, p), r in refs.items())
    ok = report("criterion 1 (detector comparison, +-15%, ordering)", close and ordered,
                f"{detail}; ordering {'holds' if ordered else 'violated'}")
    assert ok


def test_fig3_omp_shaping(report):
    refs = {("omp", "constant"): 85, ("omp", "robust"): 65}
    found = crossings(refs)
    close = all(within(found[c], refs[c], 0.20) for c in refs)
    ordered = None not in found.values() and found[("omp", "robust")] < found[("omp", "constant")]
    detail = ", ".join(f"{d}-{p} m={found[(d, p)]} (ref {r})" for (d, p), r in refs.items())
    ok = report("criterion 2 (OMP with shaping, +-20%, ordering)", close and ordered,
                f"{detail}; ordering {'holds' if ordered else 'violated'}")
    assert ok


def test_fig1_theory_consistency(report):
    cells = []
    for lam, snr_db in cli.SOMP_BOUND_CELLS:
        gamma, m_theory = cli.somp_bound_theory(lam, snr_db)
        m = math.ceil(m_theory)
        base = figure_cfg("sequomp", "robust")
        cfg = ExperimentConfig.from_dict(dict(base.to_dict(), dims={"n": 100, "m": m, "lambda": lam},
                                              snr_db=snr_db))
        res = estimate_rates(cfg, m, calibrate_threshold(cfg, m))
        cells.append((lam, snr_db, m, res.pmd_hat))
    ok = all(0.005 <= p <= 0.15 for *_, p in cells)
    detail = "; ".join(f"lam={l} {s:g}dB m={m} P_MD={p:.4f}" for l, s, m, p in cells)
    assert report("criterion 3 (P_MD at theoretical m in [0.5%, 15%])", ok, detail)


def test_shaping_oracle_equivalence(report):
    worst, worst0 = 0.0, 0.0
    for theta, n, snr, lam in itertools.product([0.0, 0.05, 0.1, 0.3, 0.7], [2, 10, 100],
                                                [1.0, 10.0, 100.0], [0.1, 0.3]):
        spec = ShapingSpec(n, lam, snr, theta)
        closed = robust_profile_closed_form(spec).powers
        solved = robust_profile_solve(spec, gamma_for_theta(spec)).powers
        worst = max(worst, float(np.max(np.abs(closed - solved) / solved)))
        if theta == 0.0:
            ref = optimal_profile(spec).powers
            worst0 = max(worst0, float(np.max(np.abs(closed - ref) / ref)))
    ok = worst < 1e-9 and worst0 < 1e-10
    assert report("criterion 4 (closed-form shaping vs linear solve)", ok,
                  f"max rel err {worst:.2e} (tol 1e-9), theta=0 vs exponential {worst0:.2e} (tol 1e-10)")


def test_true_support_oracle_equivalence(report):
    n, m, lam, snr = 50, 100, 0.1, 100.0
    dims = ProblemDims(n, m, lam)
    mu = bounds.theorem_threshold_mu(n, lam, m, 0.1)
    mismatches, trials, successes = 0, 0, 0
    for kind in ("constant", "robust"):
        prof = make_profile(kind, n, lam, snr, 0.1)
        for t in range(1000):
            sig = draw_signal(prof, sub_seed(2024, 0, t))
            meas = draw_measurement(sig.x, dims, sub_seed(2024, 1, t))
            a = det.sequomp_detect(meas, mu).support == sig.support
            b = det.oracle_rho_detect(meas, sig.support, mu).support == sig.support
            mismatches += a != b
            successes += a
            trials += 1
    assert report("criterion 5 (SequOMP vs true-support oracle success)", mismatches == 0,
                  f"{mismatches} discrepancies over {trials} trials ({successes} successes, mu={mu:.4f})")


def test_residual_selftest(report):
    cfg = ExperimentConfig(ProblemDims(20, 40, 0.1), profile_kind="robust")
    rep = residual_variance_selftest(cfg, 10_000)
    ok = rep.max_abs_z <= 3
    assert report("criterion 6 (residual energy self-test)", ok,
                  f"max |z| = {rep.max_abs_z:.2f} over {len(rep.z)} indices, {rep.draws} draws")


def test_identity_suite(report):
    rng = np.random.default_rng(7)
    failures = []
    for _ in range(2000):
        x = rng.standard_normal(rng.integers(1, 40)) * (rng.random() * 10)
        x[rng.random(x.size) < 0.5] = 0.0
        if np.any(x):
            k = np.count_nonzero(x)
            if not math.isclose(snrmin_of(x), snr_of(x) * mar_of(x) / k, rel_tol=1e-12):
                failures.append("snrmin identity")
                break
    for n in range(3, 10_001):
        k = np.arange(2, n)
        k = k[k < n / 2]
        if k.size:
            L = (np.sqrt(np.log(n - k)) + np.sqrt(np.log(k))) ** 2
            if not (np.all(np.log(n - k) < L) and np.all(L < 4 * np.log(n - k))):
                failures.append(f"L sandwich n={n}")
                break
    for kind_n, lam, snr in itertools.product([1, 10, 100], [0.1, 0.3], [1.0, 10.0, 100.0]):
        for theta in (0.0, 0.1):
            if not math.isclose(robust_profile_closed_form(ShapingSpec(kind_n, lam, snr, theta)).snr(), snr,
                                rel_tol=1e-10):
                failures.append("profile SNR normalization")
    for _ in range(2000):
        p = np.sort(rng.exponential(size=rng.integers(1, 50)) * 10 ** rng.uniform(-2, 2))[::-1]
        lam = rng.uniform(0.01, 0.99)
        prof = PowerProfile(p, lam)
        floor = prof.snrmin() / (1 + lam * prof.n * prof.snrmin())
        if prof.msinr() < floor * (1 - 1e-12):
            failures.append("gamma lower bound")
            break
    for n in range(1, 8):
        for _ in range(5):
            p = rng.exponential(size=n) * 10 ** rng.uniform(-1, 2)
            lam = rng.uniform(0.05, 0.9)
            best = msinr(PowerProfile(np.sort(p)[::-1], lam))
            if any(msinr(PowerProfile(p[list(perm)], lam)) > best * (1 + 1e-12)
                   for perm in itertools.permutations(range(n))):
                failures.append(f"msinr argmax n={n}")
    assert report("criterion 7 (identity suite)", not failures,
                  "all identities hold" if not failures else "; ".join(failures))


def test_manifest_determinism(tmp_path, report):
    cfg = figure_cfg("sequomp", "robust")
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    codes = [cli.main(["sweep", "--config", str(path), "--m-grid", "90:100:10", "--out", str(a)]),
             cli.main(["sweep", "--manifest", str(a / "manifest.json"), "--out", str(b), "--threads", "4"]),
             cli.main(["sweep", "--manifest", str(a / "manifest.json"), "--out", str(c), "--threads", "1"])]
    same = codes == [0, 0, 0] and (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes() \
        == (c / "sweep.csv").read_bytes()
    assert report("criterion 8 (manifest rerun byte-identical, 1 vs 4 threads)", same,
                  f"exit codes {codes}, CSVs {'identical' if same else 'differ'}")
