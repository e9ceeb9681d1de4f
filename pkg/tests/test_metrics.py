import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evprop.geometry import quat_from_axis_angle
from evprop.metrics import (
    AlignmentError,
    MetricsReport,
    PairedSamples,
    align_series,
    compute_rpm_metrics,
    compute_state_metrics,
    gt_attitude,
    pearson,
    windowed_error,
)


def pairs_from(est, gt, step_us=10_000):
    est = np.asarray(est, float).reshape(len(est), -1)
    gt = np.asarray(gt, float).reshape(len(gt), -1)
    return PairedSamples(np.arange(len(est)) * step_us, est, gt)


def test_identical_timestamps_all_paired():
    t = np.arange(0, 100_000, 10_000)
    p = align_series(t, t * 1.0, t, t * 2.0)
    assert len(p) == len(t) and p.n_unpaired == 0
    assert np.array_equal(p.gt[:, 0], t * 2.0)


def test_kilohertz_truth_pairs_every_estimate():
    gt_t = np.arange(0, 1_000_000, 1000)
    est_t = np.arange(0, 1_000_000, 10_000) + 300
    p = align_series(est_t, np.zeros(len(est_t)), gt_t, gt_t.astype(float))
    assert len(p) == len(est_t)
    assert np.array_equal(p.gt[:, 0], est_t - 300)


def test_nearest_pairing_and_tolerance():
    p = align_series([100, 20_000], [1, 2], [0, 1000, 2000], [10, 11, 12])
    assert p.gt[:, 0].tolist() == [10] and p.n_unpaired == 1


def test_alignment_errors():
    with pytest.raises(AlignmentError):
        align_series([0, 1000], [1, 2], [10**9, 10**9 + 1], [1, 2])
    with pytest.raises(AlignmentError):
        align_series([1000, 0], [1, 2], [0, 1000], [1, 2])
    with pytest.raises(AlignmentError):
        align_series([], [], [0], [1])


def test_perfect_estimates_give_zero_errors():
    gt = np.linspace(500, 600, 100)
    m = compute_rpm_metrics(pairs_from(gt, gt), warmup_us=0).props[0]
    assert m.mae == m.rmse == m.mape == 0


def test_constant_offset():
    gt = np.linspace(500, 600, 100)
    m = compute_rpm_metrics(pairs_from(gt + 10, gt), warmup_us=0).props[0]
    assert m.mae == pytest.approx(10) and m.rmse == pytest.approx(10)
    assert m.rmse >= m.mae


def test_gaussian_noise_rmse_and_mae():
    rng = np.random.default_rng(0)
    sigma = 3.0
    gt = np.full(200_000, 500.0)
    m = compute_rpm_metrics(pairs_from(gt + rng.normal(0, sigma, gt.size), gt, 10), warmup_us=0).props[0]
    assert m.rmse == pytest.approx(sigma, rel=0.01)
    assert m.mae == pytest.approx(sigma * math.sqrt(2 / math.pi), rel=0.01)


def test_constant_truth_has_undefined_correlation():
    gt = np.full(50, 520.0)
    est = gt + np.random.default_rng(1).normal(0, 1, 50)
    assert compute_rpm_metrics(pairs_from(est, gt), warmup_us=0).props[0].pearson is None
    assert pearson([1.0], [2.0]) is None
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)


def test_warmup_excluded():
    gt = np.full(100, 500.0)
    est = gt.copy()
    est[:30] = 0  # first 300 ms at 10 ms spacing
    m = compute_rpm_metrics(pairs_from(est, gt)).props[0]
    assert m.mae == 0 and m.n == 70


def test_invalid_estimates_skipped():
    gt = np.linspace(500, 600, 100)
    est = gt.copy()
    est[50:60] = np.nan
    m = compute_rpm_metrics(pairs_from(est, gt), warmup_us=0).props[0]
    assert m.n == 90 and m.mae == 0


def test_windowed_error_bins():
    t = np.array([0, 500_000, 1_000_000, 2_500_000])
    out = windowed_error(t, np.array([1.0, 3.0, 5.0, 7.0]), 0)
    assert out == [(0, 2.0), (1, 5.0), (2, 7.0)]


def test_best_permutation_recovers_swapped_labels():
    rng = np.random.default_rng(2)
    gt = 500 + 20 * rng.random((200, 4)) + np.arange(4) * 30
    est = gt[:, [1, 0, 2, 3]]
    r = compute_rpm_metrics(pairs_from(est, gt), warmup_us=0)
    assert r.permutation == (1, 0, 2, 3)
    assert r.best_mean_mape == 0
    assert r.best_mean_mape <= r.mean_mape


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(100, 1000), st.floats(-200, 200)), min_size=2, max_size=40),
       st.randoms(use_true_random=False))
def test_rmse_at_least_mae_and_order_invariant(rows, rnd):
    gt = np.array([r[0] for r in rows])
    est = gt + np.array([r[1] for r in rows])
    a = compute_rpm_metrics(pairs_from(est, gt), warmup_us=0).props[0]
    assert a.rmse >= a.mae >= 0 and a.mape >= 0
    idx = list(range(len(rows)))
    rnd.shuffle(idx)
    b = compute_rpm_metrics(pairs_from(est[idx], gt[idx]), warmup_us=0).props[0]
    assert b.mae == pytest.approx(a.mae) and b.rmse == pytest.approx(a.rmse)
    assert b.mape == pytest.approx(a.mape)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(*[st.floats(100, 1000)] * 8), min_size=2, max_size=20))
def test_best_permutation_never_worse_than_identity(rows):
    a = np.array(rows)
    r = compute_rpm_metrics(pairs_from(a[:, :4], a[:, 4:]), warmup_us=0)
    assert r.best_mean_mape <= r.mean_mape + 1e-12


def test_equal_absolute_errors_give_rmse_equal_mae():
    gt = np.full(33, 0.7)
    est = gt + np.where(np.arange(33) % 2, 0.1, -0.1)
    m = compute_rpm_metrics(pairs_from(est, gt), warmup_us=0).props[0]
    assert m.rmse == m.mae


def test_state_metrics_examples():
    gt = np.zeros((100, 8))
    s = compute_state_metrics(pairs_from(gt, gt), warmup_us=0)
    assert s.pos_rmse == (0, 0, 0) and s.roll_rmse_deg == 0
    est = gt.copy()
    est[:, 2] = 0.9
    assert compute_state_metrics(pairs_from(est, gt), warmup_us=0).pos_rmse[2] == pytest.approx(0.9)
    one = compute_state_metrics(pairs_from(np.full((1, 8), -0.4), np.zeros((1, 8))), warmup_us=0)
    assert one.vel_rmse[1] == pytest.approx(0.4)
    assert one.pitch_rmse_deg == pytest.approx(math.degrees(0.4))


def test_attitude_error_wraps():
    est = np.zeros((1, 8))
    gt = np.zeros((1, 8))
    est[0, 6], gt[0, 6] = math.pi - 0.01, -math.pi + 0.01
    assert compute_state_metrics(pairs_from(est, gt), warmup_us=0).roll_rmse_deg == pytest.approx(
        math.degrees(0.02))


def test_gt_attitude_from_quaternions():
    q = [quat_from_axis_angle((1, 0, 0), math.radians(10)), quat_from_axis_angle((0, 1, 0), math.radians(-7)),
         quat_from_axis_angle((1, 0, 0), math.pi)]
    a = np.degrees(gt_attitude(q))
    assert a[0] == pytest.approx((10, 0))
    assert a[1] == pytest.approx((0, -7))
    assert np.all(np.isnan(a[2]))


def test_report_thresholds():
    gt = np.full((100, 4), 500.0)
    est = gt + 1.0
    r = MetricsReport(compute_rpm_metrics(pairs_from(est, gt), warmup_us=0), None, 100, 0)
    assert r.violations({"mape_max": 1.0}) == []
    assert len(r.violations({"mape_max": 0.0})) == 4
    assert r.violations({"bogus_max": 1.0}) == ["bogus_max: unknown metric"]
    text = r.to_text()
    assert "prop1.mape = 0.2\n" in text and "prop1.pearson = undefined" in text
    assert r.to_csv().startswith("prop,window_s,mean_abs_err\n")
