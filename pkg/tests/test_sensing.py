import math

import numpy as np
import pytest
from scipy import stats

from colloc.core_types import NoiseSpec
from colloc.scenarios import default_scenario, generate_truth
from colloc.sensing import (EventKind, RngStream, disturb_truth, generate_events,
                            initial_estimates, sample_gaussian)

ZERO_NOISE = NoiseSpec(process_r=np.zeros((6, 6)), gps_sigma=0, odom_sigma=0, uwb_sigma=0,
                       imu_accel_sigma=0, imu_gyro_sigma=0)


def test_same_seed_same_sequence():
    a, b = RngStream(42, (1, 2)), RngStream(42, (1, 2))
    assert np.array_equal(sample_gaussian(a, 1.0, 100), sample_gaussian(b, 1.0, 100))
    assert not np.array_equal(sample_gaussian(RngStream(43, (1, 2)), 1.0, 5),
                              sample_gaussian(RngStream(42, (1, 2)), 1.0, 5))


def test_zero_sigma_is_exact_zero():
    s = RngStream(1)
    assert sample_gaussian(s, 0.0) == 0.0
    assert not np.any(sample_gaussian(s, 0.0, 50))
    with pytest.raises(ValueError):
        sample_gaussian(s, -1.0)


def test_gaussian_moments():
    x = sample_gaussian(RngStream(7, (3,)), 1.0, 100_000)
    assert abs(x.mean()) <= 0.013
    assert 0.97 <= x.var() <= 1.03
    # goodness of fit against the standard normal
    assert stats.kstest(x, "norm").pvalue > 1e-3


def test_children_independent_of_parent_position():
    parent = RngStream(5)
    first = parent.child(2, 1).standard_normal(10)
    parent.standard_normal(1000)
    assert np.array_equal(parent.child(2, 1).standard_normal(10), first)


def test_sibling_streams_uncorrelated():
    a = RngStream(9).child(1, 0).standard_normal(50_000)
    b = RngStream(9).child(1, 1).standard_normal(50_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 4.0 / math.sqrt(50_000)


def test_seed_range_checked():
    with pytest.raises(ValueError):
        RngStream(-1)


def _events(cfg, seed=0):
    return generate_events(generate_truth(cfg), cfg, RngStream(seed))


def test_v2v_count_in_ten_seconds():
    cfg = default_scenario("parallel", run_length=50.0)   # 10 s at 5 m/s
    ev = _events(cfg)
    assert cfg.n_ticks == 1000
    assert ev.count(EventKind.UWB_V2V) == 100
    assert ev.count(EventKind.GPS) == 2 * 100
    assert ev.count(EventKind.IMU) == 2 * 1000


def test_tunnel_has_no_gps():
    ev = _events(default_scenario("tunnel"))
    assert ev.count(EventKind.GPS) == 0
    assert ev.count(EventKind.UWB_LANDMARK) > 0


def test_zero_noise_values_equal_truth():
    for kind in ("parallel", "crossing", "tunnel"):
        ev = _events(default_scenario(kind, noise=ZERO_NOISE))
        assert np.array_equal(np.nan_to_num(ev.value), np.nan_to_num(ev.truth))


def test_events_sorted_and_private_before_relative():
    ev = _events(default_scenario("tunnel", n_vehicles=3))
    order = np.lexsort((ev.target, ev.source, ev.kind, ev.tick))
    assert np.array_equal(order, np.arange(len(ev)))
    assert EventKind.UWB_V2V > max(EventKind.GPS, EventKind.ODOM, EventKind.UWB_LANDMARK)


def test_out_of_range_pairs_are_dropped():
    cfg = default_scenario("parallel", lane_offset=60.0)
    assert _events(cfg).count(EventKind.UWB_V2V) == 0


def test_disabling_gps_keeps_other_streams():
    a = _events(default_scenario("parallel"), seed=3)
    b = _events(default_scenario("parallel", gps_enabled=False), seed=3)
    assert np.array_equal(a.without(EventKind.GPS).value, b.value, equal_nan=True)


def test_measurement_noise_statistics():
    cfg = default_scenario("parallel", run_length=400.0)
    ev = _events(cfg, seed=11)
    for kind, sigma in ((EventKind.GPS, cfg.noise.gps_sigma), (EventKind.UWB_V2V, cfg.noise.uwb_sigma),
                        (EventKind.ODOM, cfg.noise.odom_sigma)):
        m = ev.kind == int(kind)
        err = (ev.value[m] - ev.truth[m])
        err = err[np.isfinite(err)]
        n = err.size
        assert abs(err.mean()) < 4 * sigma / math.sqrt(n)
        lo, hi = stats.chi2.ppf([1e-4, 1 - 1e-4], n - 1) / (n - 1)
        assert lo <= err.var(ddof=1) / sigma ** 2 <= hi


def test_event_access_and_csv(tmp_path):
    ev = _events(default_scenario("parallel", run_length=10.0))
    e = ev[0]
    assert e.kind == EventKind.IMU and e.tick == 1 and len(e.value) == 2
    assert len(ev[:3]) == 3
    ev.to_csv(tmp_path / "events.csv")
    lines = (tmp_path / "events.csv").read_text().splitlines()
    assert len(lines) == len(ev) + 1


def test_initial_estimate_error_distribution():
    cfg = default_scenario("parallel")
    truth = generate_truth(cfg)
    errs = np.array([initial_estimates(truth, cfg, RngStream(s))[0] - truth.states[0, 0]
                     for s in range(4000)])
    errs[:, 2] = (errs[:, 2] + np.pi) % (2 * np.pi) - np.pi
    C = np.cov(errs.T)
    np.testing.assert_allclose(np.diag(C), np.diag(cfg.initial_cov), rtol=0.1)
    # squared Mahalanobis distance ~ chi-square with 6 dof
    d2 = np.einsum("ij,jk,ik->i", errs, np.linalg.inv(cfg.initial_cov), errs)
    assert d2.mean() == pytest.approx(6.0, abs=4 * math.sqrt(12 / 4000))


def test_disturb_truth_identity_with_zero_velocity_block():
    cfg = default_scenario("parallel", noise=ZERO_NOISE)
    nominal = generate_truth(cfg)
    assert disturb_truth(nominal, cfg, RngStream(0)) is nominal


def test_disturb_truth_positions_integrate_velocity():
    cfg = default_scenario("crossing")
    truth = disturb_truth(generate_truth(cfg), cfg, RngStream(4))
    s = truth.states
    np.testing.assert_allclose(s[1:, :, :2], s[:-1, :, :2] + cfg.dt * s[:-1, :, 3:5], atol=1e-9)
    # perturbation covariance equals the vehicle-frame block rotated to world frame
    d = s[:, 0, 3:5] - np.array([cfg.speed, 0.0])   # vehicle 0 heads along +x
    n = d.shape[0]
    np.testing.assert_allclose(d.var(axis=0), np.diag(cfg.noise.process_r)[3:5], rtol=0.1)
    assert abs(np.corrcoef(d.T)[0, 1]) < 4 / math.sqrt(n)
