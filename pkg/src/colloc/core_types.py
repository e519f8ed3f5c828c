"""Shared domain types and small-matrix helpers.

State vectors are plain ``numpy`` arrays of length 6 laid out as
``[x, y, theta, vx, vy, omega]``; :class:`VehicleState` is the named view of
the same layout for callers that prefer attribute access.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

STATE_DIM = 6
IX, IY, ITH, IVX, IVY, IOM = range(STATE_DIM)

# Minimum eigenvalue accepted for a diagonal covariance block.
PSD_TOL = -1e-9
SYMMETRY_RTOL = 1e-12
# lateral velocity (sideslip) variance per step, (m/s)^2
SLIP_VAR = 0.05 ** 2


class NumericalError(ArithmeticError):
    """A filter step hit a non-invertible or non-finite quantity."""


class DegenerateGeometryError(ValueError):
    """Range model evaluated at (nearly) coincident positions."""


class VehicleState(NamedTuple):
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    omega: float = 0.0

    @classmethod
    def from_array(cls, a) -> "VehicleState":
        a = np.asarray(a, dtype=float)
        return cls(*(float(v) for v in a[:STATE_DIM]))

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)


@dataclass(frozen=True)
class CrossCorrFactor:
    """One side of the factorisation ``Sigma_ij = sigma_ij @ sigma_ji.T``."""

    sigma: np.ndarray
    owner: int
    other: int


@dataclass(frozen=True)
class NoiseSpec:
    """Noise magnitudes for simulation and filtering (SI units).

    ``process_r`` is a floor added to the process noise on every prediction
    step, on top of the control-noise contribution mapped through the motion
    model. Its velocity block is expressed in the vehicle frame (forward,
    lateral); the lateral entry is sideslip noise that keeps the covariance
    well conditioned across the velocity/heading coupling of the motion model.
    ``second_order`` adds the heading-uncertainty term described in
    :func:`colloc.models.process_noise_from_vars` to each prediction.
    """

    process_r: np.ndarray = field(
        default_factory=lambda: np.diag([1e-8, 1e-8, 1e-10, 1e-8, SLIP_VAR, 1e-8])
    )
    gps_sigma: float = 0.2
    odom_sigma: float = 0.05
    uwb_sigma: float = 0.2
    imu_accel_sigma: float = 0.05
    imu_gyro_sigma: float = 0.01
    second_order: bool = True

    def __post_init__(self):
        r = np.array(self.process_r, dtype=float)
        if r.shape != (STATE_DIM, STATE_DIM):
            raise ValueError(f"process_r must be 6x6, got shape {r.shape}")
        object.__setattr__(self, "process_r", r)
        for name in ("gps_sigma", "odom_sigma", "uwb_sigma",
                     "imu_accel_sigma", "imu_gyro_sigma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be a finite value >= 0, got {v!r}")
        if not np.allclose(r, r.T, rtol=0, atol=1e-15 * max(1.0, np.abs(r).max())):
            raise ValueError("process_r must be symmetric")
        if np.linalg.eigvalsh(r).min() < PSD_TOL:
            raise ValueError("process_r must be positive semidefinite")

    def to_dict(self) -> dict:
        return {
            "process_r": self.process_r.tolist(),
            "gps_sigma": self.gps_sigma,
            "odom_sigma": self.odom_sigma,
            "uwb_sigma": self.uwb_sigma,
            "imu_accel_sigma": self.imu_accel_sigma,
            "imu_gyro_sigma": self.imu_gyro_sigma,
            "second_order": self.second_order,
        }


def decompose_cross_correlation(s):
    """Split a cross-covariance into ``(sigma_ij, sigma_ji) = (S, I)``."""
    s = np.array(s, dtype=float)
    return s, np.eye(s.shape[0])


def reconstruct_cross_correlation(sigma_ij, sigma_ji):
    return np.asarray(sigma_ij) @ np.asarray(sigma_ji).T


def enforce_symmetry(s):
    s = np.asarray(s, dtype=float)
    return (s + s.T) / 2.0


def wrap_angle(a: float) -> float:
    """Wrap into (-pi, pi]; -pi maps to +pi."""
    r = math.remainder(a, 2.0 * math.pi)
    if r <= -math.pi:
        r = math.pi
    return r


def wrap_angles(a):
    """Vectorised :func:`wrap_angle`."""
    a = np.asarray(a, dtype=float)
    r = a - 2.0 * math.pi * np.round(a / (2.0 * math.pi))
    return np.where(r <= -math.pi, r + 2.0 * math.pi, np.where(r > math.pi, r - 2.0 * math.pi, r))


def min_eigenvalue(m) -> float:
    return float(np.linalg.eigvalsh(enforce_symmetry(m)).min())


def is_covariance(m, tol: float = PSD_TOL) -> bool:
    """True when ``m`` is symmetric (relative 1e-12) and numerically PSD."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or not np.all(np.isfinite(m)):
        return False
    scale = max(1.0, float(np.abs(m).max()))
    if np.abs(m - m.T).max() > SYMMETRY_RTOL * scale:
        return False
    return min_eigenvalue(m) >= tol
