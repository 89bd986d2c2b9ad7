import math

import numpy as np
import pytest
from scipy import stats

from sequomp import montecarlo as mc
from sequomp.signal_model import ProblemDims


def cfg(**kw):
    base = dict(dims=ProblemDims(30, 40, 0.1), detector="sequomp", profile_kind="robust",
                snr_db=20.0, pfa_target=0.01, trials=200, calibration_trials=400)
    base.update(kw)
    return mc.ExperimentConfig(**base)


@pytest.mark.parametrize("detector", ["thresholding", "sequomp", "omp", "oracle"])
def test_extreme_thresholds(detector):
    c = cfg(detector=detector, trials=100)
    r = mc.estimate_rates(c, 40, 1.0)
    assert r.pfa_hat == 0.0 and r.pmd_hat == 1.0
    if detector in ("thresholding", "sequomp"):
        r = mc.estimate_rates(c, 40, 0.0)
        assert r.pfa_hat == 1.0 and r.pmd_hat == 0.0


def test_exposure_bookkeeping():
    r = mc.estimate_rates(cfg(trials=250), 40, 0.2)
    assert r.inactive_exposures + r.active_exposures == 250 * 30
    assert r.pfa_hat == r.fa_events / r.inactive_exposures
    assert r.pmd_hat == r.md_events / r.active_exposures
    assert r.pmd_se == pytest.approx(math.sqrt(r.pmd_hat * (1 - r.pmd_hat) / r.active_exposures))


def test_thresholding_null_statistics_follow_beta():
    # an inactive column is independent of y, so its squared correlation is Beta(1/2, (m-1)/2)
    c = cfg(detector="thresholding", dims=ProblemDims(20, 30, 0.2))
    A, y, truth = mc.draw_batch(c, 30, range(600), mc.ESTIMATE_STREAM)
    from sequomp.detectors import threshold_stats_batch
    null = threshold_stats_batch(A, y)[~truth]
    assert null.size > 8000
    assert stats.kstest(null, stats.beta(0.5, 29 / 2).cdf).pvalue > 1e-3


def test_calibration_at_median():
    m = 30
    c = cfg(detector="thresholding", dims=ProblemDims(20, m, 0.2), pfa_target=0.5,
            calibration_trials=5000)
    mu = mc.calibrate_threshold(c, m)
    # independent oracle: 1e5 squared correlations of a Gaussian column with an independent vector
    rng = np.random.default_rng(12345)
    a = rng.standard_normal((100_000, m))
    y = rng.standard_normal((100_000, m))
    null = np.einsum("ij,ij->i", a, y) ** 2 / (np.einsum("ij,ij->i", a, a) * np.einsum("ij,ij->i", y, y))
    # calibration stops within max(0.2 target, 2 SE) of the target
    assert 0.4 <= np.mean(null > mu) <= 0.6
    assert abs(mu - np.median(null)) < 0.01


def test_calibration_matches_null_quantile():
    m = 30
    c = cfg(detector="thresholding", dims=ProblemDims(20, m, 0.2), pfa_target=0.05,
            calibration_trials=5000)
    mu = mc.calibrate_threshold(c, m)
    assert abs(stats.beta(0.5, (m - 1) / 2).sf(mu) - 0.05) <= 0.2 * 0.05


@pytest.mark.parametrize("detector", ["sequomp", "omp"])
def test_fresh_seed_reestimate(detector):
    c = cfg(detector=detector, calibration_trials=2000, trials=2000)
    mu = mc.calibrate_threshold(c, 40)
    r = mc.estimate_rates(c, 40, mu)
    cal_exposures = 2000 * 30 * 0.9
    slack = max(0.2 * c.pfa_target, 2 * math.sqrt(c.pfa_target / cal_exposures))
    assert abs(r.pfa_hat - c.pfa_target) <= slack + 3 * r.pfa_se


def test_threshold_falls_with_m():
    c = cfg(detector="thresholding", dims=ProblemDims(50, 100, 0.1), pfa_target=1e-2, calibration_trials=500)
    mus = [mc.calibrate_threshold(c, m) for m in (100, 200, 400)]
    assert mus[0] > mus[1] > mus[2]


def test_rates_monotone_in_mu():
    c = cfg(detector="thresholding", trials=300)
    mus = np.linspace(0.01, 0.5, 12)
    res = [mc.estimate_rates(c, 40, mu) for mu in mus]
    assert all(b.pfa_hat <= a.pfa_hat for a, b in zip(res, res[1:]))
    assert all(b.pmd_hat >= a.pmd_hat for a, b in zip(res, res[1:]))
    seq = [mc.estimate_rates(cfg(trials=300), 40, mu) for mu in (0.02, 0.1, 0.4)]
    assert seq[0].pfa_hat > seq[1].pfa_hat > seq[2].pfa_hat
    assert seq[0].pmd_hat < seq[1].pmd_hat < seq[2].pmd_hat


def test_pmd_falls_with_m():
    res = mc.sweep_m(cfg(), [25, 50, 100])
    assert res[0].pmd_hat > res[1].pmd_hat > res[2].pmd_hat


def test_thread_count_does_not_change_results():
    c = cfg(trials=350)
    a = mc.estimate_rates(c, 40, 0.15, workers=1)
    b = mc.estimate_rates(c, 40, 0.15, workers=4)
    assert (a.fa_events, a.md_events, a.inactive_exposures) == (b.fa_events, b.md_events, b.inactive_exposures)
    assert mc.calibrate_threshold(c, 40, workers=1) == mc.calibrate_threshold(c, 40, workers=3)


def test_sorted_order_beats_reversed():
    base = cfg(dims=ProblemDims(50, 60, 0.1), trials=400, calibration_trials=800)
    fwd = mc.sweep_m(base, [60])[0]
    rev = mc.sweep_m(cfg(dims=ProblemDims(50, 60, 0.1), trials=400, calibration_trials=800,
                         order="reversed"), [60])[0]
    assert fwd.pmd_hat < rev.pmd_hat


def test_sweep_grid_validation():
    with pytest.raises(ValueError):
        mc.sweep_m(cfg(), [])
    with pytest.raises(ValueError):
        mc.sweep_m(cfg(), [40, 40])
    with pytest.raises(ValueError):
        mc.estimate_rates(cfg(), 0, 0.1)


def test_sweep_early_stop_and_first_crossing():
    res = mc.sweep_m(cfg(), [20, 40, 80, 160], stop_below_pmd=0.05)
    assert res[-1].pmd_hat <= 0.05
    assert all(r.pmd_hat > 0.05 for r in res[:-1])
    assert mc.first_m_below(res, 0.05) == res[-1].m
    assert mc.first_m_below(res, -1.0) is None


def test_find_crossing_agrees_with_full_sweep():
    c = cfg(trials=150, calibration_trials=300)
    grid = list(range(20, 101, 10))
    full = mc.sweep_m(c, grid)
    m, seen = mc.find_crossing(c, grid, level=0.03)
    assert m == mc.first_m_below(full, 0.03)
    for r in full:
        if r.m in seen:
            assert seen[r.m].pmd_hat == r.pmd_hat and seen[r.m].mu == r.mu
    assert len(seen) < len(grid)
    assert mc.find_crossing(c, [20, 21], level=0.0)[0] is None


def test_calibration_error_carries_best_mu(monkeypatch):
    monkeypatch.setattr(mc, "MAX_CALIBRATION_ITER", 2)
    monkeypatch.setattr(mc, "null_quantile_guess", lambda config, m: 0.95)
    c = cfg(detector="thresholding", pfa_target=0.3, calibration_trials=2000)
    with pytest.raises(mc.CalibrationError) as info:
        mc.calibrate_threshold(c, 40)
    assert 0 < info.value.best_mu < 1


def test_config_dict_round_trip_and_errors():
    c = cfg(random_signs=True)
    assert mc.ExperimentConfig.from_dict(c.to_dict()) == c
    with pytest.raises(ValueError, match="colour"):
        mc.ExperimentConfig.from_dict({"dims": {"n": 5, "lambda": 0.1}, "colour": "red"})
    with pytest.raises(ValueError, match="dims"):
        mc.ExperimentConfig.from_dict({"detector": "omp"})
    with pytest.raises(ValueError, match="trials"):
        mc.ExperimentConfig.from_dict({"dims": {"n": 5, "lambda": 0.1}, "trials": "x"})
    with pytest.raises(ValueError, match="detector"):
        mc.ExperimentConfig.from_dict({"dims": {"n": 5, "lambda": 0.1}, "detector": "lasso"})
    assert cfg(calibration_trials=None, trials=7).n_calibration == 70


def test_signal_seed_is_shared_across_m():
    c = cfg()
    _, _, t1 = mc.draw_batch(c, 40, range(5), mc.ESTIMATE_STREAM)
    _, _, t2 = mc.draw_batch(c, 60, range(5), mc.ESTIMATE_STREAM)
    assert np.array_equal(t1, t2)


def test_selftest_zero_signal():
    c = cfg(dims=ProblemDims(10, 20, 0.2))
    rep = mc.residual_variance_selftest(c, 3000, x=np.zeros(10))
    np.testing.assert_allclose(rep.expected, 1.0)
    assert rep.max_abs_z <= 4


def test_selftest_all_active_and_last_index():
    c = cfg(dims=ProblemDims(6, 20, 0.2))
    x = np.array([3.0, 2.0, 1.5, 1.0, 0.5, 0.2])
    rep = mc.residual_variance_selftest(c, 3000, x=x)
    # the last index sees no tail and five removed dimensions
    assert rep.expected[-1] == pytest.approx(15 / 20)
    assert rep.expected[0] == pytest.approx(1 + np.sum(x[1:] ** 2))
    assert rep.max_abs_z <= 4
