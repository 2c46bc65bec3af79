import numpy as np
import pytest

from fctica._utils import correlation, is_correlation
from fctica.exceptions import DataError
from fctica.regression import dual_regression
from fctica.simulate import (
    BASE_FC,
    GeneratingTemplate,
    StudyConfig,
    assemble_data,
    build_study,
    gaussian_kernel,
    generate_group_ics,
    generate_subject_fc,
    generate_subject_ics,
    generate_timecourses,
    signal_scale,
)


def test_single_bump_map_peaks_at_one():
    t = generate_group_ics((40, 40), Q=2, n_bumps=1, seed=0)
    for m in t.mean:
        assert m.max() == pytest.approx(1.0)
        img = m.reshape(40, 40)
        peak = np.unravel_index(img.argmax(), img.shape)
        # unimodal: values decrease moving away from the peak along the row
        row = img[peak[0]]
        assert np.all(np.diff(row[: peak[1] + 1]) >= 0) and np.all(np.diff(row[peak[1]:]) <= 0)


def test_disjoint_bumps_are_uncorrelated():
    t = generate_group_ics(
        (55, 55), Q=2, n_bumps=1, centers=[[(15, 15)], [(40, 40)]], widths=[[3.0], [3.0]]
    )
    assert t.mean[0] @ t.mean[1] == 0
    # centering leaves a small negative correlation set by the support size
    assert abs(np.corrcoef(t.mean)[0, 1]) < 0.05


def test_generating_sd_floor():
    t = generate_group_ics((55, 55), seed=1)
    assert np.all(t.sd[t.mean == 0] == 0.01)
    assert np.allclose(t.sd, 0.4 * np.abs(t.mean) + 0.01)
    with pytest.raises(DataError):
        generate_group_ics((20, 20), Q=1)


def test_zero_sd_gives_mean_map():
    t = generate_group_ics((30, 30), Q=2, seed=2)
    t0 = GeneratingTemplate(t.grid, t.mean, np.zeros_like(t.sd), t.fwhm)
    assert np.array_equal(generate_subject_ics(t0, seed=3), t.mean)


def test_subject_map_variance_matches_generator():
    t = generate_group_ics((30, 30), Q=2, seed=4)
    rng = np.random.default_rng(5)
    maps = np.stack([generate_subject_ics(t, rng) for _ in range(500)])
    var = maps.var(0, ddof=1)
    sel = t.sd > 0.05
    assert np.all(np.abs(var[sel] / t.sd[sel] ** 2 - 1) < 0.15 + 4 * np.sqrt(2 / 499))
    assert np.median(np.abs(var[sel] / t.sd[sel] ** 2 - 1)) < 0.1


def test_deviation_is_spatially_smooth():
    t = generate_group_ics((55, 55), Q=2, seed=6, sd_scale=0.0, sd_floor=1.0)
    dev = (generate_subject_ics(t, seed=7) - t.mean).reshape(2, 55, 55)
    inner = dev[:, 10:-10, 10:-10]
    a = inner[:, :, :-1].ravel()
    b = inner[:, :, 1:].ravel()
    assert np.corrcoef(a, b)[0, 1] > 0.5
    assert gaussian_kernel(8.0).sum() == pytest.approx(1.0)


def test_subject_fc_concentrates_and_is_valid():
    out = generate_subject_fc(BASE_FC, df=1e6, seed=0)
    assert np.max(np.abs(out - BASE_FC)) < 0.01
    assert np.all(np.diag(out) == 1.0) and is_correlation(out)
    rng = np.random.default_rng(1)
    draws = np.stack([generate_subject_fc(np.eye(4), 60, rng) for _ in range(1000)])
    assert np.max(np.abs(draws.mean(0) - np.eye(4))) < 0.02
    iu = np.triu_indices(4, 1)
    assert abs(np.mean(draws[:, iu[0], iu[1]] > 0) - 0.5) < 0.05
    with pytest.raises(DataError):
        generate_subject_fc(np.eye(4), df=3)


def test_time_courses_independence_and_lln():
    T = 2000
    C = correlation(generate_timecourses(np.eye(5), T, seed=0))
    assert np.max(np.abs(C[np.triu_indices(5, 1)])) < 4 / np.sqrt(T)
    A = generate_timecourses(BASE_FC, 10_000, seed=1)
    assert np.max(np.abs(correlation(A) - BASE_FC)) < 0.03
    assert np.allclose(A.var(0, ddof=1), 1) and np.allclose(A.mean(0), 0)


def test_ar1_time_courses_autocorrelation():
    A = generate_timecourses(BASE_FC, 5000, model="ar1", phi=0.5, seed=2)
    lag1 = [np.corrcoef(a[:-1], a[1:])[0, 1] for a in A.T]
    assert np.all(np.abs(np.array(lag1) - 0.5) < 0.05)
    with pytest.raises(DataError):
        generate_timecourses(BASE_FC, 10, model="ar2")
    with pytest.raises(DataError):
        generate_timecourses(BASE_FC, 1)


def test_snr_definition_example():
    rng = np.random.default_rng(3)
    A = generate_timecourses(np.eye(2), 100, seed=rng)
    S = np.ones((2, 500))
    assert signal_scale(A, S) == pytest.approx(1.0)
    Y, sigma_e = assemble_data(A, S, 0.5, seed=4)
    assert sigma_e == pytest.approx(2.0)
    with pytest.raises(DataError):
        signal_scale(A, np.zeros((2, 10)))
    with pytest.raises(DataError):
        assemble_data(A, S, 0.0)


def test_peak_rule_switch():
    A = generate_timecourses(np.eye(2), 50, seed=0)
    S = np.zeros((2, 1000))
    S[:, :5] = 2.0
    S[:, 5:10] = 1.0
    assert signal_scale(A, S, "peak") == pytest.approx(2.0)
    assert signal_scale(A, S, "top1") == pytest.approx(np.sqrt((5 * 4 + 5 * 1) / 10))


def test_noise_limits():
    rng = np.random.default_rng(5)
    A = generate_timecourses(BASE_FC, 200, seed=rng)
    S = rng.standard_normal((5, 600))
    Y, _ = assemble_data(A, S, 1e12, seed=6)
    assert np.allclose(Y, A @ S, atol=1e-8)
    Y, sigma_e = assemble_data(A, S, 0.5, seed=7)
    ratio = np.var(Y - A @ S) / sigma_e**2
    assert 0.95 <= ratio <= 1.05


def test_study_is_deterministic():
    kw = dict(grid=(20, 20), n_train=3, n_test=3, T_total=100, T_model=50, seed=9)
    a, b = build_study(**kw), build_study(**kw)
    for s, t in zip(a.train + a.test, b.train + b.test):
        assert np.array_equal(s.S_true, t.S_true)
        assert np.array_equal(s.A_true, t.A_true)
        assert np.array_equal(s.data(), t.data())
    c = build_study(**{**kw, "seed": 10})
    assert not np.array_equal(a.test[0].A_true, c.test[0].A_true)


def test_study_layout_and_truths():
    study = build_study(grid=(20, 20), n_train=2, n_test=3, T_total=120, T_model=60, seed=1)
    assert len(study.train) == 2 and len(study.test) == 3
    s = study.test[0]
    assert s.data().shape == (120, 400)
    assert s.model_data().shape == (60, 400)
    assert np.array_equal(s.model_data(), s.data(0, 60))
    assert np.allclose(s.fc_holdout, correlation(s.A_true[60:]))
    assert np.allclose(s.fc_model(40), correlation(s.A_true[:40]))
    assert all(is_correlation(x.FC_true) for x in study.train + study.test)
    with pytest.raises(DataError):
        s.model_data(61)
    with pytest.raises(DataError):
        StudyConfig(Q=3)
    with pytest.raises(DataError):
        StudyConfig(T_model=2000)


def test_default_study_config_shape():
    cfg = StudyConfig(n_train=500, n_test=50)
    assert (cfg.Q, cfg.T_total, cfg.T_model) == (5, 1200, 600)
    assert StudyConfig().grid == (55, 55) and StudyConfig().n_train == 100


def test_dual_regression_sanity_floor():
    study = build_study(n_train=2, n_test=3, seed=0)
    for s in study.test:
        fit = dual_regression(s.model_data(), study.group_maps)
        err = np.abs(correlation(fit.A_hat) - s.fc_model())
        assert err[np.triu_indices(5, 1)].mean() < 0.25
