"""Motion and measurement models with analytic Jacobians.

Motion model (explicit Euler, ground-vehicle kinematics)::

    x'  = x + vx*dt            s' = hypot(vx, vy) + accel*dt
    y'  = y + vy*dt            vx' = s' cos(theta')
    th' = wrap(th + om*dt)     vy' = s' sin(theta')
    om' = gyro

Measurement models return ``(z, H)``; relative range returns ``(z, Hi, Hj)``.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .core_types import (
    IOM, ITH, IVX, IVY, IX, IY, STATE_DIM,
    DegenerateGeometryError, NoiseSpec, wrap_angle,
)

RANGE_EPSILON = 0.1
SPEED_EPSILON = 1e-6


class ImuControl(NamedTuple):
    accel: float = 0.0
    gyro: float = 0.0


class Landmark(NamedTuple):
    id: int
    x: float
    y: float


def motion_step(state, u, dt: float) -> np.ndarray:
    x, y, th, vx, vy, om = np.asarray(state, dtype=float)
    accel, gyro = u
    th_new = wrap_angle(th + om * dt)
    s_new = math.hypot(vx, vy) + accel * dt
    return np.array([
        x + vx * dt,
        y + vy * dt,
        th_new,
        s_new * math.cos(th_new),
        s_new * math.sin(th_new),
        gyro,
    ])


def _speed_gradient(vx: float, vy: float, th: float):
    s = math.hypot(vx, vy)
    if s >= SPEED_EPSILON:
        return vx / s, vy / s
    # zero speed: derivative along the heading direction
    return math.cos(th), math.sin(th)


def motion_jacobian(state, u, dt: float) -> np.ndarray:
    x, y, th, vx, vy, om = np.asarray(state, dtype=float)
    accel, _ = u
    th_new = th + om * dt
    c, s = math.cos(th_new), math.sin(th_new)
    s_new = math.hypot(vx, vy) + accel * dt
    dsx, dsy = _speed_gradient(vx, vy, th)

    F = np.zeros((STATE_DIM, STATE_DIM))
    F[IX, IX] = 1.0
    F[IX, IVX] = dt
    F[IY, IY] = 1.0
    F[IY, IVY] = dt
    F[ITH, ITH] = 1.0
    F[ITH, IOM] = dt
    F[IVX, ITH] = -s_new * s
    F[IVX, IVX] = dsx * c
    F[IVX, IVY] = dsy * c
    F[IVX, IOM] = -s_new * s * dt
    F[IVY, ITH] = s_new * c
    F[IVY, IVX] = dsx * s
    F[IVY, IVY] = dsy * s
    F[IVY, IOM] = s_new * c * dt
    # omega' = gyro: row stays zero
    return F


def control_jacobian(state, dt: float) -> np.ndarray:
    """d f / d (accel, gyro), a 6x2 matrix."""
    _, _, th, _, _, om = np.asarray(state, dtype=float)
    th_new = th + om * dt
    G = np.zeros((STATE_DIM, 2))
    G[IVX, 0] = dt * math.cos(th_new)
    G[IVY, 0] = dt * math.sin(th_new)
    G[IOM, 1] = 1.0
    return G


def process_noise(state, dt: float, noise: NoiseSpec, heading_var: float = 0.0) -> np.ndarray:
    """Per-step process noise: control noise mapped through f plus the floor."""
    return process_noise_from_vars(state, dt, noise.imu_accel_sigma ** 2,
                                   noise.imu_gyro_sigma ** 2, noise.process_r,
                                   heading_var if noise.second_order else 0.0)


def process_noise_from_vars(state, dt: float, accel_var: float, gyro_var: float, floor,
                            heading_var: float = 0.0) -> np.ndarray:
    """``G diag(accel_var, gyro_var) G^T`` plus ``floor`` rotated into the world frame.

    The velocity block of ``floor`` is given in the vehicle frame (forward,
    lateral) at the predicted heading; its lateral entry acts as sideslip noise.

    ``heading_var`` is the prior heading variance. When positive, the
    second-order covariance term of the map ``(speed, heading) -> velocity``,
    ``speed**2 * heading_var**2 / 2``, is added along the heading: a heading
    error ``d`` shortens the predicted velocity by ``speed * d**2 / 2``, which
    the first-order Jacobian cannot represent.
    """
    _, _, th, vx, vy, om = np.asarray(state, dtype=float)
    th_new = th + om * dt
    c, s = math.cos(th_new), math.sin(th_new)
    G = control_jacobian(state, dt)
    T = np.eye(STATE_DIM)
    T[IVX, IVX], T[IVX, IVY] = c, -s
    T[IVY, IVX], T[IVY, IVY] = s, c
    floor = np.array(floor, dtype=float)
    if heading_var > 0.0:
        floor[IVX, IVX] += 0.5 * (vx * vx + vy * vy) * heading_var * heading_var
    return (G * [accel_var, gyro_var]) @ G.T + T @ floor @ T.T


def gps_model(state):
    x = np.asarray(state, dtype=float)
    H = np.zeros((2, STATE_DIM))
    H[0, IX] = 1.0
    H[1, IY] = 1.0
    return x[[IX, IY]].copy(), H


def odom_model(state):
    x = np.asarray(state, dtype=float)
    vx, vy = x[IVX], x[IVY]
    s = math.hypot(vx, vy)
    H = np.zeros((1, STATE_DIM))
    if s >= SPEED_EPSILON:
        H[0, IVX] = vx / s
        H[0, IVY] = vy / s
    else:
        H[0, IVX] = 1.0
    return np.array([s]), H


def range_model(xi, xj):
    xi = np.asarray(xi, dtype=float)
    xj = np.asarray(xj, dtype=float)
    dx = xi[IX] - xj[IX]
    dy = xi[IY] - xj[IY]
    r = math.hypot(dx, dy)
    if r < RANGE_EPSILON:
        raise DegenerateGeometryError(f"range {r:.3g} m below {RANGE_EPSILON} m")
    Hi = np.zeros((1, STATE_DIM))
    Hi[0, IX] = dx / r
    Hi[0, IY] = dy / r
    return np.array([r]), Hi, -Hi


def landmark_range_model(state, landmark):
    x = np.asarray(state, dtype=float)
    _, lx, ly = landmark
    dx = x[IX] - lx
    dy = x[IY] - ly
    r = math.hypot(dx, dy)
    if r < RANGE_EPSILON:
        raise DegenerateGeometryError(f"range {r:.3g} m below {RANGE_EPSILON} m")
    H = np.zeros((1, STATE_DIM))
    H[0, IX] = dx / r
    H[0, IY] = dy / r
    return np.array([r]), H
