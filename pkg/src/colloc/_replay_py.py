"""Pure-Python replay backend, built directly on :mod:`colloc.filters`.

Slow but the reference: the compiled kernel is tested against it.
"""
from __future__ import annotations

from functools import partial
from typing import NamedTuple

import numpy as np

from . import filters as flt
from .core_types import ITH, PSD_TOL, DegenerateGeometryError, NumericalError
from .models import gps_model, landmark_range_model, odom_model, process_noise_from_vars

EKF, DCL, CCL = 0, 1, 2
IMU, GPS, ODOM, UWB_LANDMARK, UWB_V2V = range(5)

STATUS_OK = 0
STATUS_NUMERICAL = 1


class ReplayOutput(NamedTuple):
    est: np.ndarray          # (K+1, N, 6)
    nees: np.ndarray         # (K+1, N)
    trace: np.ndarray        # (K+1, N) trace of each diagonal covariance block
    psd_failures: int        # (tick, vehicle) blocks with min eigenvalue < -1e-9
    status: int
    skipped: int             # range updates skipped for degenerate geometry


def block_metrics(est, covs, truth):
    """NEES, trace and PSD failures for stacked ``(..., 6)`` / ``(..., 6, 6)`` arrays."""
    err = est - truth
    err[..., ITH] = np.arctan2(np.sin(err[..., ITH]), np.cos(err[..., ITH]))
    trace = np.trace(covs, axis1=-2, axis2=-1)
    psd_bad = np.linalg.eigvalsh(covs).min(axis=-1) < PSD_TOL
    nees = np.full(trace.shape, np.nan)
    try:
        L = np.linalg.cholesky(covs)
    except np.linalg.LinAlgError:
        L = None
    if L is not None:
        w = np.linalg.solve(L, err[..., None])[..., 0]
        nees = np.einsum("...i,...i->...", w, w)
    else:
        for idx in np.ndindex(trace.shape):
            try:
                Li = np.linalg.cholesky(covs[idx])
            except np.linalg.LinAlgError:
                continue
            w = np.linalg.solve(Li, err[idx])
            nees[idx] = w @ w
    return nees, trace, int(np.count_nonzero(psd_bad))


def replay(algo, x0, cov0, tick, kind, source, target, value, n_ticks, truth_states,
           landmarks, dt, process_r, accel_var, gyro_var, gps_var, odom_var, uwb_var,
           ekf_landmarks, second_order=False):
    N = x0.shape[0]
    ids = list(range(N))
    Q_gps = gps_var * np.eye(2)
    Q_odom = np.array([[odom_var]])
    Q_uwb = np.array([[uwb_var]])
    est = np.full((n_ticks + 1, N, 6), np.nan)
    covs = np.full((n_ticks + 1, N, 6, 6), np.nan)
    for i in ids:
        covs[:, i] = np.eye(6)

    if algo == CCL:
        ccl = flt.CclFilter.initial(list(x0), list(cov0))
    elif algo == DCL:
        fs = {i: flt.DclVehicleFilter.initial(i, x0[i], cov0[i], ids) for i in ids}
    else:
        fs = {i: flt.EkfFilter(i, np.array(x0[i], float), np.array(cov0[i], float)) for i in ids}

    def record(k):
        for i in ids:
            if algo == CCL:
                est[k, i] = ccl.state(i)
                covs[k, i] = ccl.block(i)
            else:
                est[k, i] = fs[i].x_hat
                covs[k, i] = fs[i].cov

    def hvar(P):
        return float(P[2, 2]) if second_order else 0.0

    record(0)
    predict = flt.dcl_predict if algo == DCL else flt.ekf_predict
    private = flt.dcl_private_update if algo == DCL else flt.ekf_private_update
    status = STATUS_OK
    skipped = 0
    n = tick.size
    e = 0
    k_done = 0
    try:
        for k in range(1, n_ticks + 1):
            controls = [(0.0, 0.0)] * N
            while e < n and tick[e] == k:
                kd, s, tg = int(kind[e]), int(source[e]), int(target[e])
                val = value[e]
                if kd == IMU:
                    u = (float(val[0]), float(val[1]))
                    if algo == CCL:
                        controls[s] = u
                        if e + 1 >= n or tick[e + 1] != k or kind[e + 1] != IMU:
                            R = [process_noise_from_vars(ccl.state(i), dt, accel_var, gyro_var,
                                                         process_r, hvar(ccl.block(i)))
                                 for i in ids]
                            ccl = flt.ccl_predict(ccl, controls, dt, R)
                    else:
                        R = process_noise_from_vars(fs[s].x_hat, dt, accel_var, gyro_var,
                                                    process_r, hvar(fs[s].cov))
                        fs[s] = predict(fs[s], u, dt, R)
                elif kd in (GPS, ODOM, UWB_LANDMARK):
                    if kd == GPS:
                        z, model, Q = val[:2], gps_model, Q_gps
                    elif kd == ODOM:
                        z, model, Q = val[:1], odom_model, Q_odom
                    else:
                        if algo == EKF and not ekf_landmarks:
                            e += 1
                            continue
                        lm = (tg, landmarks[tg, 0], landmarks[tg, 1])
                        z, model, Q = val[:1], partial(landmark_range_model, landmark=lm), Q_uwb
                    try:
                        if algo == CCL:
                            ccl = flt.ccl_private_update(ccl, s, z, model, Q)
                        else:
                            fs[s] = private(fs[s], z, model, Q)
                    except DegenerateGeometryError:
                        skipped += 1
                elif kd == UWB_V2V and algo != EKF:
                    try:
                        if algo == CCL:
                            ccl = flt.ccl_relative_update(ccl, s, tg, float(val[0]), Q_uwb)
                        else:
                            fs = flt.dcl_relative_update(fs, s, tg, float(val[0]), Q_uwb)
                    except DegenerateGeometryError:
                        skipped += 1
                e += 1
            record(k)
            k_done = k
    except NumericalError:
        status = STATUS_NUMERICAL

    nees, trace, psd_failures = block_metrics(
        est[:k_done + 1], covs[:k_done + 1], truth_states[:k_done + 1])
    nees_full = np.full((n_ticks + 1, N), np.nan)
    trace_full = np.full((n_ticks + 1, N), np.nan)
    nees_full[:k_done + 1] = nees
    trace_full[:k_done + 1] = trace
    return ReplayOutput(est, nees_full, trace_full, psd_failures, status, skipped)
