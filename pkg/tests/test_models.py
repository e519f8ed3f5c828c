import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from colloc.core_types import DegenerateGeometryError, NoiseSpec
from colloc.models import (
    ImuControl, Landmark, control_jacobian, gps_model, landmark_range_model, motion_jacobian,
    motion_step, odom_model, process_noise, process_noise_from_vars, range_model,
)
from conftest import central_diff, jacobian_close, random_state
from jacobian_suite import run_suite

coord = st.floats(min_value=-500, max_value=500, allow_nan=False)


# --- Jacobians against finite differences -----------------------------------------------

def test_all_jacobians_match_finite_differences():
    assert run_suite(n_states=1000) == {name: 0 for name in
                                        ("motion", "control", "gps", "odom", "range_i",
                                         "range_j", "landmark")}


def test_oracle_rejects_a_perturbed_jacobian(rng):
    x = random_state(rng)
    u, dt = (0.3, 0.1), 0.05
    F = motion_jacobian(x, u, dt)
    numeric = central_diff(lambda s: motion_step(s, u, dt), x, angular_out=(2,))
    assert jacobian_close(F, numeric)
    F[3, 2] *= 1 + 1e-3
    assert not jacobian_close(F, numeric)


def test_motion_jacobian_across_heading_wrap():
    x = np.array([0, 0, math.pi - 1e-4, -3.0, 0.0, 0.5])
    u, dt = (0.0, 0.5), 0.01   # theta' crosses +pi
    numeric = central_diff(lambda s: motion_step(s, u, dt), x, angular_out=(2,))
    assert jacobian_close(motion_jacobian(x, u, dt), numeric)


def test_zero_speed_branch_is_directional_derivative(rng):
    th = 0.7
    x = np.array([1.0, 2.0, th, 0.0, 0.0, 0.1])
    F = motion_jacobian(x, (0.5, 0.0), 0.1)
    assert np.all(np.isfinite(F))
    # one-sided derivative along the heading direction
    h = 1e-7
    xp = x.copy()
    xp[3:5] = h * math.cos(th), h * math.sin(th)
    d = (motion_step(xp, (0.5, 0.0), 0.1) - motion_step(x, (0.5, 0.0), 0.1)) / h
    np.testing.assert_allclose(F[3:5, 3:5] @ [math.cos(th), math.sin(th)], d[3:5], atol=1e-6)
    _, H = odom_model(np.zeros(6))
    assert np.array_equal(H, [[0, 0, 0, 1, 0, 0]])


def test_position_rows_exact_dt(rng):
    for _ in range(100):
        x = random_state(rng)
        dt = rng.uniform(1e-4, 1.0)
        F = motion_jacobian(x, (rng.normal(), rng.normal()), dt)
        assert F[0, 3] == dt and F[1, 4] == dt and F[2, 5] == dt


def test_small_dt_limit_rows_approach_identity(rng):
    x = random_state(rng)
    for dt in (1e-3, 1e-6, 1e-9):
        F = motion_jacobian(x, (0.2, 0.1), dt)
        assert np.abs(F[:3] - np.eye(6)[:3]).max() <= dt * (1 + np.abs(x).max())


# --- motion examples and properties -------------------------------------------------------

@pytest.mark.parametrize("x, u, dt, expected", [
    ([0, 0, 0, 1, 0, 0], (0, 0), 1.0, [1, 0, 0, 1, 0, 0]),
    ([0, 0, math.pi / 2, 0, 1, 0], (0, 0), 2.0, [0, 2, math.pi / 2, 0, 1, 0]),
    ([0, 0, 0, 0, 0, 0], (1, 0), 0.1, [0, 0, 0, 0.1, 0, 0]),
])
def test_motion_examples(x, u, dt, expected):
    np.testing.assert_allclose(motion_step(x, ImuControl(*u), dt), expected, atol=1e-15)


@settings(max_examples=300)
@given(coord, coord, st.floats(-10, 10), st.floats(-30, 30), st.floats(-30, 30),
       st.floats(-2, 2), st.floats(-1, 1), st.floats(1e-4, 1.0))
def test_speed_preserved_without_acceleration(x, y, th, vx, vy, om, gyro, dt):
    out = motion_step([x, y, th, vx, vy, om], (0.0, gyro), dt)
    assert math.hypot(out[3], out[4]) == pytest.approx(math.hypot(vx, vy), abs=1e-12, rel=1e-15)
    assert out[5] == gyro
    assert -math.pi < out[2] <= math.pi


def test_control_jacobian_layout():
    G = control_jacobian([0, 0, 0.0, 1, 0, 0.0], 0.1)
    np.testing.assert_allclose(G[:, 0], [0, 0, 0, 0.1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(G[:, 1], [0, 0, 0, 0, 0, 1])


# --- measurement examples -------------------------------------------------------------------

def test_gps_example():
    z, H = gps_model([3, -4, 0.1, 1, 1, 0])
    np.testing.assert_array_equal(z, [3, -4])
    np.testing.assert_array_equal(H, np.eye(6)[:2])


def test_odom_examples():
    z, H = odom_model([0, 0, 0, 3, 4, 0])
    assert z[0] == 5.0
    np.testing.assert_allclose(H, [[0, 0, 0, 0.6, 0.8, 0]])
    z, H = odom_model(np.zeros(6))
    assert z[0] == 0.0


def test_range_examples():
    z, Hi, Hj = range_model([0, 0, 0, 0, 0, 0], [3, 4, 0, 0, 0, 0])
    assert z[0] == 5.0
    np.testing.assert_allclose(Hi, [[-0.6, -0.8, 0, 0, 0, 0]])
    np.testing.assert_allclose(Hj, [[0.6, 0.8, 0, 0, 0, 0]])
    z, Hi, _ = range_model([1, 1, 0, 0, 0, 0], [1, 3, 0, 0, 0, 0])
    assert z[0] == 2.0
    np.testing.assert_allclose(Hi, [[0, -1, 0, 0, 0, 0]])


def test_landmark_examples():
    z, H = landmark_range_model(np.zeros(6), Landmark(0, 0.0, 5.0))
    assert z[0] == 5.0
    np.testing.assert_allclose(H, [[0, -1, 0, 0, 0, 0]])
    z, H = landmark_range_model([3, 4, 0, 0, 0, 0], Landmark(1, 0.0, 0.0))
    assert z[0] == 5.0
    np.testing.assert_allclose(H, [[0.6, 0.8, 0, 0, 0, 0]])


@given(coord, coord, coord, coord)
def test_range_symmetry(x1, y1, x2, y2):
    a, b = np.array([x1, y1, 0, 0, 0, 0]), np.array([x2, y2, 0, 0, 0, 0])
    if math.hypot(x1 - x2, y1 - y2) < 0.1:
        return
    z1, Hi, Hj = range_model(a, b)
    z2, _, _ = range_model(b, a)
    assert z1[0] == z2[0]
    assert np.array_equal(Hi, -Hj)


def test_degenerate_geometry_raises():
    with pytest.raises(DegenerateGeometryError):
        range_model(np.zeros(6), [0.05, 0, 0, 0, 0, 0])
    with pytest.raises(DegenerateGeometryError):
        landmark_range_model(np.zeros(6), (0, 0.0, 0.01))


# --- process noise -------------------------------------------------------------------

def test_process_noise_is_covariance_and_matches_definition(rng):
    noise = NoiseSpec(second_order=False)
    for _ in range(200):
        x = random_state(rng)
        dt = rng.uniform(1e-3, 0.1)
        R = process_noise(x, dt, noise)
        assert np.allclose(R, R.T, atol=1e-18)
        assert np.linalg.eigvalsh(R).min() >= -1e-15
        G = control_jacobian(x, dt)
        th = x[2] + x[5] * dt
        c, s = math.cos(th), math.sin(th)
        rot = np.array([[c, -s], [s, c]])
        expected = G @ np.diag([noise.imu_accel_sigma ** 2, noise.imu_gyro_sigma ** 2]) @ G.T
        expected += np.diag(np.diag(noise.process_r))
        expected[3:5, 3:5] += rot @ noise.process_r[3:5, 3:5] @ rot.T - noise.process_r[3:5, 3:5]
        np.testing.assert_allclose(R, expected, atol=1e-15)


def test_second_order_term_along_heading():
    x = np.array([0, 0, 0.0, 4.0, 0.0, 0.0])
    base = process_noise_from_vars(x, 0.01, 0.0, 0.0, np.zeros((6, 6)))
    extra = process_noise_from_vars(x, 0.01, 0.0, 0.0, np.zeros((6, 6)), heading_var=0.01)
    diff = extra - base
    assert diff[3, 3] == pytest.approx(0.5 * 16 * 1e-4)
    diff[3, 3] = 0.0
    assert not diff.any()


def test_second_order_term_matches_monte_carlo():
    # velocity error of a heading-perturbed constant-speed vector along the heading
    rng = np.random.default_rng(3)
    s, var = 5.0, 0.02
    d = rng.normal(0, math.sqrt(var), 400_000)
    forward = s * np.cos(d)
    assert np.var(forward) == pytest.approx(0.5 * s * s * var * var, rel=0.03)
