"""Standalone EKF, centralized (CCL) and decentralized (DCL) filters.

All filter values are immutable: every step returns a new filter. The DCL
relative update is split into the two halves run by the detecting and the
detected vehicle; they communicate only through :class:`DetectMessage` and
:class:`ReplyMessage`.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .core_types import (
    ITH, STATE_DIM, CrossCorrFactor, NumericalError,
    enforce_symmetry, reconstruct_cross_correlation, wrap_angle,
)
from .models import motion_jacobian, motion_step, range_model

# Cholesky-based condition proxy above which the rescaling solve is regularized.
COND_LIMIT = 1e12
TIKHONOV = 1e-12

MeasurementModel = Callable[[np.ndarray], tuple]


@dataclass(frozen=True)
class EkfFilter:
    id: int
    x_hat: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class DclVehicleFilter:
    id: int
    x_hat: np.ndarray
    cov: np.ndarray
    factors: Mapping[int, np.ndarray]

    @classmethod
    def initial(cls, vid: int, x0, cov0, vehicle_ids: Sequence[int]) -> "DclVehicleFilter":
        # uncorrelated start: Sigma_ij = 0 -> sigma_ij = 0 (sigma_ji = I on the other side)
        factors = {j: np.zeros((STATE_DIM, STATE_DIM)) for j in vehicle_ids if j != vid}
        return cls(vid, np.array(x0, dtype=float), np.array(cov0, dtype=float), factors)

    def factor(self, other: int) -> CrossCorrFactor:
        return CrossCorrFactor(self.factors[other], self.id, other)


@dataclass(frozen=True)
class DetectMessage:
    sender: int
    x_j: np.ndarray
    cov_jj: np.ndarray
    sigma_ji: np.ndarray


@dataclass(frozen=True)
class ReplyMessage:
    sender: int
    x_j_new: np.ndarray
    cov_jj_new: np.ndarray


@dataclass(frozen=True)
class CclFilter:
    x_hat: np.ndarray
    cov: np.ndarray

    @classmethod
    def initial(cls, x0s, cov0s) -> "CclFilter":
        x0s = [np.asarray(x, dtype=float) for x in x0s]
        n = len(x0s)
        cov = np.zeros((STATE_DIM * n, STATE_DIM * n))
        for i, c in enumerate(cov0s):
            cov[_blk(i), _blk(i)] = c
        return cls(np.concatenate(x0s), cov)

    @property
    def n_vehicles(self) -> int:
        return self.x_hat.size // STATE_DIM

    def state(self, i: int) -> np.ndarray:
        return self.x_hat[_blk(i)]

    def block(self, i: int, j: int | None = None) -> np.ndarray:
        return self.cov[_blk(i), _blk(i if j is None else j)]


def _blk(i: int) -> slice:
    return slice(STATE_DIM * i, STATE_DIM * (i + 1))


def _gain(P, H, Q):
    S = H @ P @ H.T + np.atleast_2d(Q)
    if not np.all(np.isfinite(S)):
        raise NumericalError("non-finite innovation covariance")
    if S.shape == (1, 1):
        if not S[0, 0] > 0:
            raise NumericalError(f"innovation variance {S[0, 0]!r} not positive")
        S_inv = 1.0 / S
    else:
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise NumericalError("innovation covariance not positive definite") from None
        S_inv = np.linalg.inv(S)
    return P @ H.T @ S_inv


def _residual(z, z_pred, angular=()):
    nu = np.atleast_1d(np.asarray(z, dtype=float)) - np.atleast_1d(z_pred)
    for k in angular:
        nu[k] = wrap_angle(nu[k])
    return nu


def _wrap_heading(x, n_vehicles=1):
    x = x.copy()
    for i in range(n_vehicles):
        x[STATE_DIM * i + ITH] = wrap_angle(x[STATE_DIM * i + ITH])
    return x


def _check_finite(x, P):
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(P))):
        raise NumericalError("non-finite state or covariance")


def guarded_solve_right(A, P):
    """Return ``A @ inv(P)`` for symmetric positive definite ``P``.

    Falls back to ``P + 1e-12 I`` when a Cholesky factorisation fails or
    the squared diagonal ratio of the factor exceeds ``COND_LIMIT``.
    """
    try:
        L = np.linalg.cholesky(P)
        d = np.diag(L)
        ill = (d.max() / d.min()) ** 2 > COND_LIMIT
    except np.linalg.LinAlgError:
        ill = True
    if ill:
        P = P + TIKHONOV * np.eye(P.shape[0])
        try:
            np.linalg.cholesky(P)
        except np.linalg.LinAlgError:
            raise NumericalError("prior covariance not invertible") from None
    # A P^-1 = (P^-1 A^T)^T since P is symmetric
    return np.linalg.solve(P, A.T).T


# --- standalone EKF -----------------------------------------------------------

def ekf_predict(f: EkfFilter, u, dt: float, R) -> EkfFilter:
    F = motion_jacobian(f.x_hat, u, dt)
    x = motion_step(f.x_hat, u, dt)
    P = enforce_symmetry(F @ f.cov @ F.T + R)
    _check_finite(x, P)
    return replace(f, x_hat=x, cov=P)


def ekf_private_update(f: EkfFilter, z, model: MeasurementModel, Q, angular=()) -> EkfFilter:
    z_pred, H = model(f.x_hat)
    K = _gain(f.cov, H, Q)
    x = _wrap_heading(f.x_hat + K @ _residual(z, z_pred, angular))
    P = enforce_symmetry((np.eye(STATE_DIM) - K @ H) @ f.cov)
    _check_finite(x, P)
    return replace(f, x_hat=x, cov=P)


# --- decentralized -------------------------------------------------------------

def dcl_predict(f: DclVehicleFilter, u, dt: float, R) -> DclVehicleFilter:
    F = motion_jacobian(f.x_hat, u, dt)
    x = motion_step(f.x_hat, u, dt)
    P = enforce_symmetry(F @ f.cov @ F.T + R)
    _check_finite(x, P)
    factors = {j: F @ s for j, s in f.factors.items()}
    return replace(f, x_hat=x, cov=P, factors=factors)


def dcl_private_update(f: DclVehicleFilter, z, model: MeasurementModel, Q,
                       angular=()) -> DclVehicleFilter:
    z_pred, H = model(f.x_hat)
    K = _gain(f.cov, H, Q)
    x = _wrap_heading(f.x_hat + K @ _residual(z, z_pred, angular))
    A = np.eye(STATE_DIM) - K @ H
    P = enforce_symmetry(A @ f.cov)
    _check_finite(x, P)
    factors = {j: A @ s for j, s in f.factors.items()}
    return replace(f, x_hat=x, cov=P, factors=factors)


def dcl_detect_message(f_j: DclVehicleFilter, detector: int) -> DetectMessage:
    """What the detected vehicle sends to the detector."""
    return DetectMessage(f_j.id, f_j.x_hat.copy(), f_j.cov.copy(), f_j.factors[detector].copy())


def dcl_relative_update_detector(f_i: DclVehicleFilter, msg: DetectMessage, r: float,
                                 Q_uwb) -> tuple[DclVehicleFilter, ReplyMessage]:
    j = msg.sender
    n = STATE_DIM
    cov_ij = reconstruct_cross_correlation(f_i.factors[j], msg.sigma_ji)
    cov_aa = np.block([[f_i.cov, cov_ij], [cov_ij.T, msg.cov_jj]])
    z_pred, Hi, Hj = range_model(f_i.x_hat, msg.x_j)
    Ha = np.hstack([Hi, Hj])
    K = _gain(cov_aa, Ha, Q_uwb)
    xa = np.concatenate([f_i.x_hat, msg.x_j]) + K @ _residual(r, z_pred)
    xa = _wrap_heading(xa, 2)
    post = enforce_symmetry((np.eye(2 * n) - K @ Ha) @ cov_aa)
    _check_finite(xa, post)

    cov_ii = post[:n, :n]
    factors = {j: post[:n, n:].copy()}
    others = [k for k in f_i.factors if k != j]
    if others:
        rescale = guarded_solve_right(cov_ii, f_i.cov)
        for k in others:
            factors[k] = rescale @ f_i.factors[k]
    f_new = replace(f_i, x_hat=xa[:n], cov=cov_ii.copy(), factors=factors)
    return f_new, ReplyMessage(f_i.id, xa[n:].copy(), post[n:, n:].copy())


def dcl_relative_update_detected(f_j: DclVehicleFilter, reply: ReplyMessage) -> DclVehicleFilter:
    i = reply.sender
    factors = {i: np.eye(STATE_DIM)}
    others = [k for k in f_j.factors if k != i]
    if others:
        rescale = guarded_solve_right(reply.cov_jj_new, f_j.cov)
        for k in others:
            factors[k] = rescale @ f_j.factors[k]
    return replace(f_j, x_hat=reply.x_j_new.copy(), cov=reply.cov_jj_new.copy(), factors=factors)


def dcl_relative_update(filters: dict, i: int, j: int, r: float, Q_uwb) -> dict:
    """Run the two-party exchange between vehicles ``i`` (detector) and ``j``."""
    msg = dcl_detect_message(filters[j], i)
    f_i, reply = dcl_relative_update_detector(filters[i], msg, r, Q_uwb)
    out = dict(filters)
    out[i] = f_i
    out[j] = dcl_relative_update_detected(filters[j], reply)
    return out


# --- centralized ---------------------------------------------------------------

def ccl_predict(f: CclFilter, controls: Sequence, dt: float, R: Sequence) -> CclFilter:
    """Predict every vehicle; ``R`` holds one 6x6 process noise per vehicle."""
    n = f.n_vehicles
    x = f.x_hat.copy()
    F = np.zeros_like(f.cov)
    Rb = np.zeros_like(f.cov)
    for i in range(n):
        xi = f.x_hat[_blk(i)]
        F[_blk(i), _blk(i)] = motion_jacobian(xi, controls[i], dt)
        x[_blk(i)] = motion_step(xi, controls[i], dt)
        Rb[_blk(i), _blk(i)] = R[i]
    P = enforce_symmetry(F @ f.cov @ F.T + Rb)
    _check_finite(x, P)
    return CclFilter(x, P)


def ccl_update(f: CclFilter, z, z_pred, H_full, Q, angular=()) -> CclFilter:
    H_full = np.atleast_2d(H_full)
    K = _gain(f.cov, H_full, Q)
    x = _wrap_heading(f.x_hat + K @ _residual(z, z_pred, angular), f.n_vehicles)
    P = enforce_symmetry((np.eye(f.cov.shape[0]) - K @ H_full) @ f.cov)
    _check_finite(x, P)
    return CclFilter(x, P)


def ccl_private_update(f: CclFilter, vehicle: int, z, model: MeasurementModel, Q,
                       angular=()) -> CclFilter:
    z_pred, H = model(f.state(vehicle))
    H_full = np.zeros((H.shape[0], f.cov.shape[0]))
    H_full[:, _blk(vehicle)] = H
    return ccl_update(f, z, z_pred, H_full, Q, angular)


def ccl_relative_update(f: CclFilter, i: int, j: int, r: float, Q_uwb) -> CclFilter:
    z_pred, Hi, Hj = range_model(f.state(i), f.state(j))
    H_full = np.zeros((1, f.cov.shape[0]))
    H_full[:, _blk(i)] = Hi
    H_full[:, _blk(j)] = Hj
    return ccl_update(f, r, z_pred, H_full, Q_uwb)
