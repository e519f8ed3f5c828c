# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled replay of one run for the EKF, DCL and CCL filters.

Mirrors ``colloc._replay_py.replay`` operation for operation (same update
order, same symmetrization, same guarded solve); results agree to rounding.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport M_PI, NAN, cos, sin, sqrt, hypot, remainder, isfinite
from libc.string cimport memcpy, memset
from libc.stdlib cimport malloc, free

from colloc._replay_py import ReplayOutput

cnp.import_array()

cdef enum:
    D = 6
    DD = 36
    MAXV = 10
    MAXN = 60

cdef enum:
    EKF = 0
    DCL = 1
    CCL = 2

cdef enum:
    K_IMU = 0
    K_GPS = 1
    K_ODOM = 2
    K_LMK = 3
    K_V2V = 4

cdef double RANGE_EPS = 0.1
cdef double SPEED_EPS = 1e-6
cdef double PSD_TOL = 1e-9
cdef double COND_LIMIT = 1e12
cdef double TIKHONOV = 1e-12


cdef struct Params:
    double dt
    double accel_var
    double gyro_var
    double gps_var
    double odom_var
    double uwb_var
    bint second_order
    double floor[36]


cdef inline double wrap(double a) noexcept nogil:
    cdef double r = remainder(a, 2.0 * M_PI)
    if r <= -M_PI:
        r = M_PI
    return r


cdef inline void mm(const double* A, const double* B, double* C, int n, int m, int p) noexcept nogil:
    # C[n,p] = A[n,m] @ B[m,p]
    cdef int i, j, k
    cdef double s
    for i in range(n):
        for j in range(p):
            s = 0.0
            for k in range(m):
                s += A[i * m + k] * B[k * p + j]
            C[i * p + j] = s


cdef inline void mm_bt(const double* A, const double* B, double* C, int n, int m, int p) noexcept nogil:
    # C[n,p] = A[n,m] @ B[p,m].T
    cdef int i, j, k
    cdef double s
    for i in range(n):
        for j in range(p):
            s = 0.0
            for k in range(m):
                s += A[i * m + k] * B[j * m + k]
            C[i * p + j] = s


cdef inline void symmetrize(double* P, int n) noexcept nogil:
    cdef int i, j
    cdef double v
    for i in range(n):
        for j in range(i + 1, n):
            v = (P[i * n + j] + P[j * n + i]) / 2.0
            P[i * n + j] = v
            P[j * n + i] = v


cdef inline void set_identity(double* A, int n) noexcept nogil:
    cdef int i
    memset(A, 0, n * n * sizeof(double))
    for i in range(n):
        A[i * n + i] = 1.0


cdef int cholesky(const double* A, double* L, int n) noexcept nogil:
    """Lower factor of SPD ``A``; returns 0 on success, -1 otherwise."""
    cdef int i, j, k
    cdef double s
    memset(L, 0, n * n * sizeof(double))
    for j in range(n):
        s = A[j * n + j]
        for k in range(j):
            s -= L[j * n + k] * L[j * n + k]
        if not (s > 0.0):
            return -1
        L[j * n + j] = sqrt(s)
        for i in range(j + 1, n):
            s = A[i * n + j]
            for k in range(j):
                s -= L[i * n + k] * L[j * n + k]
            L[i * n + j] = s / L[j * n + j]
    return 0


cdef void chol_solve(const double* L, double* b, int n) noexcept nogil:
    """Solve ``L L^T y = b`` in place."""
    cdef int i, k
    cdef double s
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i * n + k] * b[k]
        b[i] = s / L[i * n + i]
    for i in range(n - 1, -1, -1):
        s = b[i]
        for k in range(i + 1, n):
            s -= L[k * n + i] * b[k]
        b[i] = s / L[i * n + i]


cdef int right_inverse_product(const double* Pnew, const double* Pold, double* A) noexcept nogil:
    """A = Pnew @ inv(Pold) for 6x6 SPD Pold, regularized when ill conditioned."""
    cdef double L[36]
    cdef double Preg[36]
    cdef double col[6]
    cdef int i, j, ill = 0
    cdef double dmax, dmin
    if cholesky(Pold, L, D) != 0:
        ill = 1
    else:
        dmax = L[0]
        dmin = L[0]
        for i in range(1, D):
            if L[i * D + i] > dmax:
                dmax = L[i * D + i]
            if L[i * D + i] < dmin:
                dmin = L[i * D + i]
        if (dmax / dmin) * (dmax / dmin) > COND_LIMIT:
            ill = 1
    if ill:
        memcpy(Preg, Pold, DD * sizeof(double))
        for i in range(D):
            Preg[i * D + i] += TIKHONOV
        if cholesky(Preg, L, D) != 0:
            return -1
    # column j of inv(Pold) @ Pnew^T is row j of A
    for j in range(D):
        for i in range(D):
            col[i] = Pnew[j * D + i]
        chol_solve(L, col, D)
        for i in range(D):
            A[j * D + i] = col[i]
    return 0


# --- models ----------------------------------------------------------------------

cdef inline void motion(double* x, double acc, double gyr, double dt) noexcept nogil:
    cdef double th = wrap(x[2] + x[5] * dt)
    cdef double s = hypot(x[3], x[4]) + acc * dt
    x[0] = x[0] + x[3] * dt
    x[1] = x[1] + x[4] * dt
    x[2] = th
    x[3] = s * cos(th)
    x[4] = s * sin(th)
    x[5] = gyr


cdef inline void motion_jac(const double* x, double acc, double dt, double* F) noexcept nogil:
    cdef double th = x[2] + x[5] * dt
    cdef double c = cos(th), s = sin(th)
    cdef double sp = hypot(x[3], x[4])
    cdef double sn = sp + acc * dt
    cdef double dsx, dsy
    if sp >= SPEED_EPS:
        dsx = x[3] / sp
        dsy = x[4] / sp
    else:
        dsx = cos(x[2])
        dsy = sin(x[2])
    memset(F, 0, DD * sizeof(double))
    F[0] = 1.0
    F[3] = dt
    F[7] = 1.0
    F[10] = dt
    F[14] = 1.0
    F[17] = dt
    F[20] = -sn * s
    F[21] = dsx * c
    F[22] = dsy * c
    F[23] = -sn * s * dt
    F[26] = sn * c
    F[27] = dsx * s
    F[28] = dsy * s
    F[29] = sn * c * dt


# The motion Jacobian has a fixed sparsity pattern (identity-plus-dt position
# rows, dense velocity rows over columns 2..5, zero yaw-rate row); the two
# products below exploit it.

cdef inline void f_left(const double* F, const double* A, double* C) noexcept nogil:
    """C = F @ A for a motion Jacobian F."""
    cdef int c
    for c in range(D):
        C[c] = A[c] + F[3] * A[18 + c]
        C[6 + c] = A[6 + c] + F[10] * A[24 + c]
        C[12 + c] = A[12 + c] + F[17] * A[30 + c]
        C[18 + c] = F[20] * A[12 + c] + F[21] * A[18 + c] + F[22] * A[24 + c] + F[23] * A[30 + c]
        C[24 + c] = F[26] * A[12 + c] + F[27] * A[18 + c] + F[28] * A[24 + c] + F[29] * A[30 + c]
        C[30 + c] = 0.0


cdef inline void f_right_t(const double* A, const double* F, double* C) noexcept nogil:
    """C = A @ F.T for a motion Jacobian F."""
    cdef int r
    cdef const double* a
    for r in range(D):
        a = A + r * D
        C[r * D] = a[0] + F[3] * a[3]
        C[r * D + 1] = a[1] + F[10] * a[4]
        C[r * D + 2] = a[2] + F[17] * a[5]
        C[r * D + 3] = F[20] * a[2] + F[21] * a[3] + F[22] * a[4] + F[23] * a[5]
        C[r * D + 4] = F[26] * a[2] + F[27] * a[3] + F[28] * a[4] + F[29] * a[5]
        C[r * D + 5] = 0.0


cdef inline void proc_noise(const double* x, const Params* p, double hvar, double* R) noexcept nogil:
    cdef double th = x[2] + x[5] * p.dt
    cdef double c = cos(th), s = sin(th)
    cdef double T[36]
    cdef double TF[36]
    cdef double fl[36]
    cdef double g3 = p.dt * c, g4 = p.dt * s
    set_identity(T, D)
    T[21] = c
    T[22] = -s
    T[27] = s
    T[28] = c
    memcpy(fl, p.floor, DD * sizeof(double))
    if p.second_order and hvar > 0.0:
        fl[21] += 0.5 * (x[3] * x[3] + x[4] * x[4]) * hvar * hvar
    mm(T, fl, TF, D, D, D)
    mm_bt(TF, T, R, D, D, D)
    R[21] += g3 * p.accel_var * g3
    R[22] += g3 * p.accel_var * g4
    R[27] += g4 * p.accel_var * g3
    R[28] += g4 * p.accel_var * g4
    R[35] += p.gyro_var


cdef inline int meas_private(int kind, const double* x, const double* lm, double* zp,
                             double* H, int off, int n) noexcept nogil:
    """Predicted measurement and Jacobian row(s) placed at column ``off`` of an
    ``n``-wide H. Returns the row count, or 0 for degenerate geometry."""
    cdef double s, dx, dy, r
    if kind == K_GPS:
        memset(H, 0, 2 * n * sizeof(double))
        zp[0] = x[0]
        zp[1] = x[1]
        H[off] = 1.0
        H[n + off + 1] = 1.0
        return 2
    memset(H, 0, n * sizeof(double))
    if kind == K_ODOM:
        s = hypot(x[3], x[4])
        zp[0] = s
        if s >= SPEED_EPS:
            H[off + 3] = x[3] / s
            H[off + 4] = x[4] / s
        else:
            H[off + 3] = 1.0
        return 1
    dx = x[0] - lm[0]
    dy = x[1] - lm[1]
    r = hypot(dx, dy)
    if r < RANGE_EPS:
        return 0
    zp[0] = r
    H[off] = dx / r
    H[off + 1] = dy / r
    return 1


cdef int kalman_update(double* x, double* P, int n, const double* H, const double* nu,
                       const double* Q, int m, double* K, double* PHt) noexcept nogil:
    """In-place EKF update; leaves the gain in ``K`` (n x m). Returns -1 on a
    non-positive-definite innovation covariance."""
    cdef int i, j, r, c
    cdef double S[4]
    cdef double Si[4]
    cdef double v, det
    for i in range(n):
        for r in range(m):
            v = 0.0
            for j in range(n):
                v += P[i * n + j] * H[r * n + j]
            PHt[i * m + r] = v
    for r in range(m):
        for c in range(m):
            v = Q[r * m + c]
            for i in range(n):
                v += H[r * n + i] * PHt[i * m + c]
            S[r * m + c] = v
    if m == 1:
        if not (S[0] > 0.0 and isfinite(S[0])):
            return -1
        Si[0] = 1.0 / S[0]
    else:
        det = S[0] * S[3] - S[1] * S[2]
        if not (S[0] > 0.0 and det > 0.0 and isfinite(det)):
            return -1
        Si[0] = S[3] / det
        Si[1] = -S[1] / det
        Si[2] = -S[2] / det
        Si[3] = S[0] / det
    for i in range(n):
        for c in range(m):
            v = 0.0
            for r in range(m):
                v += PHt[i * m + r] * Si[r * m + c]
            K[i * m + c] = v
    for i in range(n):
        v = 0.0
        for r in range(m):
            v += K[i * m + r] * nu[r]
        x[i] += v
    # P <- P - K (H P), with H P = PHt^T for symmetric P
    for i in range(n):
        for j in range(n):
            v = 0.0
            for r in range(m):
                v += K[i * m + r] * PHt[j * m + r]
            P[i * n + j] -= v
    symmetrize(P, n)
    return 0


cdef void apply_update_to_factor(double* sig, const double* K, const double* H, int m) noexcept nogil:
    # sig <- sig - K (H sig); H is m x 6, K is 6 x m
    cdef double Hs[12]
    cdef int r, c, k, i
    cdef double v
    for r in range(m):
        for c in range(D):
            v = 0.0
            for k in range(D):
                v += H[r * D + k] * sig[k * D + c]
            Hs[r * D + c] = v
    for i in range(D):
        for c in range(D):
            v = 0.0
            for r in range(m):
                v += K[i * m + r] * Hs[r * D + c]
            sig[i * D + c] -= v


cdef int block_metrics(const double* x, const double* P, const double* truth,
                       double* nees, double* trace) noexcept nogil:
    """NEES and trace of one diagonal block; returns 1 when the block fails
    the PSD tolerance."""
    cdef double L[36]
    cdef double e[6]
    cdef int i, k
    cdef double v, s = 0.0
    trace[0] = 0.0
    for i in range(D):
        trace[0] += P[i * D + i]
        e[i] = x[i] - truth[i]
    e[2] = wrap(e[2])
    if cholesky(P, L, D) == 0:
        # |L^-1 e|^2
        for i in range(D):
            v = e[i]
            for k in range(i):
                v -= L[i * D + k] * e[k]
            e[i] = v / L[i * D + i]
            s += e[i] * e[i]
        nees[0] = s
        return 0
    nees[0] = NAN
    memcpy(L, P, DD * sizeof(double))
    for i in range(D):
        L[i * D + i] += PSD_TOL
    return 0 if psd_check(L) else 1


cdef bint psd_check(const double* A) noexcept nogil:
    cdef double L[36]
    return cholesky(A, L, D) == 0


cdef inline bint all_finite(const double* a, int n) noexcept nogil:
    cdef int i
    for i in range(n):
        if not isfinite(a[i]):
            return False
    return True


def replay(int algo, x0, cov0, tick, kind, source, target, value, int n_ticks,
           truth_states, landmarks, double dt, process_r, double accel_var,
           double gyro_var, double gps_var, double odom_var, double uwb_var,
           bint ekf_landmarks, bint second_order=False):
    cdef double[:, ::1] X0 = np.ascontiguousarray(x0, dtype=np.float64)
    cdef double[:, :, ::1] C0 = np.ascontiguousarray(cov0, dtype=np.float64)
    cdef long long[::1] ev_tick = np.ascontiguousarray(tick, dtype=np.int64)
    cdef int[::1] ev_kind = np.ascontiguousarray(kind, dtype=np.int32)
    cdef int[::1] ev_src = np.ascontiguousarray(source, dtype=np.int32)
    cdef int[::1] ev_tgt = np.ascontiguousarray(target, dtype=np.int32)
    cdef double[:, ::1] ev_val = np.ascontiguousarray(value, dtype=np.float64)
    cdef double[:, :, ::1] TR = np.ascontiguousarray(truth_states, dtype=np.float64)
    cdef double[:, ::1] LM = np.ascontiguousarray(
        np.asarray(landmarks, dtype=np.float64).reshape(-1, 2))
    cdef double[:, ::1] FL = np.ascontiguousarray(process_r, dtype=np.float64)

    cdef int N = X0.shape[0]
    if N < 1 or N > MAXV:
        raise ValueError(f"vehicle count {N} outside 1..{MAXV}")
    cdef int n_full = D * N

    est_a = np.full((n_ticks + 1, N, D), np.nan)
    nees_a = np.full((n_ticks + 1, N), np.nan)
    trace_a = np.full((n_ticks + 1, N), np.nan)
    cdef double[:, :, ::1] EST = est_a
    cdef double[:, ::1] NEES = nees_a
    cdef double[:, ::1] TRACE = trace_a

    cdef Params p
    p.dt = dt
    p.accel_var = accel_var
    p.gyro_var = gyro_var
    p.gps_var = gps_var
    p.odom_var = odom_var
    p.uwb_var = uwb_var
    p.second_order = second_order
    cdef int i, j, k, v, a, b, r, c
    for i in range(D):
        for j in range(D):
            p.floor[i * D + j] = FL[i, j]

    # per-vehicle storage (EKF/DCL) and joint storage (CCL)
    cdef double* X = <double*> malloc(n_full * sizeof(double))
    cdef double* P = <double*> malloc(n_full * n_full * sizeof(double))
    cdef double* SIG = <double*> malloc(N * N * DD * sizeof(double))
    cdef double* Fs = <double*> malloc(N * DD * sizeof(double))
    cdef double* Rs = <double*> malloc(N * DD * sizeof(double))
    cdef double* Hrow = <double*> malloc(2 * n_full * sizeof(double))
    cdef double* Kbuf = <double*> malloc(2 * n_full * sizeof(double))
    cdef double* PHt = <double*> malloc(2 * n_full * sizeof(double))
    if not (X and P and SIG and Fs and Rs and Hrow and Kbuf and PHt):
        free(X); free(P); free(SIG); free(Fs); free(Rs); free(Hrow); free(Kbuf); free(PHt)
        raise MemoryError()

    cdef double ctrl[2 * MAXV]
    cdef double T1[36]
    cdef double T2[36]
    cdef double Pold_i[36]
    cdef double Pold_j[36]
    cdef double Ai[36]
    cdef double Aj[36]
    cdef double Saa[144]
    cdef double xa[12]
    cdef double Ha[12]
    cdef double Ka[12]
    cdef double PHa[12]
    cdef double zp[2]
    cdef double nu[2]
    cdef double Q[4]
    cdef double Hloc[12]
    cdef double lmxy[2]
    cdef double rng, dx, dy
    cdef int m, kd, s_, tg, off, bi, bj
    cdef long long e = 0, n_ev = ev_tick.shape[0]
    cdef int status = 0, skipped = 0, psd_failures = 0
    cdef int k_done = 0
    cdef double* Pv
    cdef double* xv
    cdef double blk[36]

    memset(X, 0, n_full * sizeof(double))
    if algo == CCL:
        memset(P, 0, n_full * n_full * sizeof(double))
        for v in range(N):
            for i in range(D):
                X[v * D + i] = X0[v, i]
                for j in range(D):
                    P[(v * D + i) * n_full + v * D + j] = C0[v, i, j]
    else:
        for v in range(N):
            for i in range(D):
                X[v * D + i] = X0[v, i]
                for j in range(D):
                    P[v * DD + i * D + j] = C0[v, i, j]
        memset(SIG, 0, N * N * DD * sizeof(double))

    with nogil:
        for k in range(0, n_ticks + 1):
            if k > 0:
                for i in range(2 * N):
                    ctrl[i] = 0.0
                while e < n_ev and ev_tick[e] == k:
                    kd = ev_kind[e]
                    s_ = ev_src[e]
                    tg = ev_tgt[e]
                    if kd == K_IMU:
                        if algo == CCL:
                            ctrl[2 * s_] = ev_val[e, 0]
                            ctrl[2 * s_ + 1] = ev_val[e, 1]
                            if e + 1 >= n_ev or ev_tick[e + 1] != k or ev_kind[e + 1] != K_IMU:
                                # block-diagonal prediction of the joint state
                                for a in range(N):
                                    xv = X + a * D
                                    motion_jac(xv, ctrl[2 * a], dt, Fs + a * DD)
                                    proc_noise(xv, &p, P[(a * D + 2) * n_full + a * D + 2], Rs + a * DD)
                                    motion(xv, ctrl[2 * a], ctrl[2 * a + 1], dt)
                                for a in range(N):
                                    for b in range(a, N):
                                        for i in range(D):
                                            for j in range(D):
                                                blk[i * D + j] = P[(a * D + i) * n_full + b * D + j]
                                        f_left(Fs + a * DD, blk, T1)
                                        f_right_t(T1, Fs + b * DD, T2)
                                        if a == b:
                                            for i in range(DD):
                                                T2[i] += Rs[a * DD + i]
                                        for i in range(D):
                                            for j in range(D):
                                                P[(a * D + i) * n_full + b * D + j] = T2[i * D + j]
                                                P[(b * D + j) * n_full + a * D + i] = T2[i * D + j]
                                symmetrize(P, n_full)
                        else:
                            xv = X + s_ * D
                            Pv = P + s_ * DD
                            motion_jac(xv, ev_val[e, 0], dt, Fs)
                            proc_noise(xv, &p, Pv[14], Rs)
                            motion(xv, ev_val[e, 0], ev_val[e, 1], dt)
                            f_left(Fs, Pv, T1)
                            f_right_t(T1, Fs, Pv)
                            for i in range(DD):
                                Pv[i] += Rs[i]
                            symmetrize(Pv, D)
                            if algo == DCL:
                                for j in range(N):
                                    if j != s_:
                                        f_left(Fs, SIG + (s_ * N + j) * DD, T1)
                                        memcpy(SIG + (s_ * N + j) * DD, T1, DD * sizeof(double))
                    elif kd == K_GPS or kd == K_ODOM or kd == K_LMK:
                        if kd == K_LMK:
                            if algo == EKF and not ekf_landmarks:
                                e += 1
                                continue
                            lmxy[0] = LM[tg, 0]
                            lmxy[1] = LM[tg, 1]
                        if kd == K_GPS:
                            Q[0] = p.gps_var
                            Q[1] = 0.0
                            Q[2] = 0.0
                            Q[3] = p.gps_var
                        elif kd == K_ODOM:
                            Q[0] = p.odom_var
                        else:
                            Q[0] = p.uwb_var
                        if algo == CCL:
                            m = meas_private(kd, X + s_ * D, lmxy, zp, Hrow, s_ * D, n_full)
                            if m == 0:
                                skipped += 1
                            else:
                                for r in range(m):
                                    nu[r] = ev_val[e, r] - zp[r]
                                if kalman_update(X, P, n_full, Hrow, nu, Q, m, Kbuf, PHt) != 0:
                                    status = 1
                                    break
                                for v in range(N):
                                    X[v * D + 2] = wrap(X[v * D + 2])
                        else:
                            xv = X + s_ * D
                            Pv = P + s_ * DD
                            m = meas_private(kd, xv, lmxy, zp, Hloc, 0, D)
                            if m == 0:
                                skipped += 1
                            else:
                                for r in range(m):
                                    nu[r] = ev_val[e, r] - zp[r]
                                if kalman_update(xv, Pv, D, Hloc, nu, Q, m, Kbuf, PHt) != 0:
                                    status = 1
                                    break
                                xv[2] = wrap(xv[2])
                                if algo == DCL:
                                    for j in range(N):
                                        if j != s_:
                                            apply_update_to_factor(SIG + (s_ * N + j) * DD, Kbuf, Hloc, m)
                    elif kd == K_V2V and algo != EKF:
                        Q[0] = p.uwb_var
                        dx = X[s_ * D] - X[tg * D]
                        dy = X[s_ * D + 1] - X[tg * D + 1]
                        rng = hypot(dx, dy)
                        if rng < RANGE_EPS:
                            skipped += 1
                        elif algo == CCL:
                            memset(Hrow, 0, n_full * sizeof(double))
                            Hrow[s_ * D] = dx / rng
                            Hrow[s_ * D + 1] = dy / rng
                            Hrow[tg * D] = -(dx / rng)
                            Hrow[tg * D + 1] = -(dy / rng)
                            nu[0] = ev_val[e, 0] - rng
                            if kalman_update(X, P, n_full, Hrow, nu, Q, 1, Kbuf, PHt) != 0:
                                status = 1
                                break
                            for v in range(N):
                                X[v * D + 2] = wrap(X[v * D + 2])
                        else:
                            # detector s_ receives (x_j, P_jj, sigma_ji) from tg
                            bi = s_
                            bj = tg
                            mm_bt(SIG + (bi * N + bj) * DD, SIG + (bj * N + bi) * DD, T1, D, D, D)
                            for i in range(D):
                                xa[i] = X[bi * D + i]
                                xa[D + i] = X[bj * D + i]
                                for j in range(D):
                                    Saa[i * 12 + j] = P[bi * DD + i * D + j]
                                    Saa[i * 12 + D + j] = T1[i * D + j]
                                    Saa[(D + j) * 12 + i] = T1[i * D + j]
                                    Saa[(D + i) * 12 + D + j] = P[bj * DD + i * D + j]
                            memset(Ha, 0, 12 * sizeof(double))
                            Ha[0] = dx / rng
                            Ha[1] = dy / rng
                            Ha[D] = -(dx / rng)
                            Ha[D + 1] = -(dy / rng)
                            nu[0] = ev_val[e, 0] - rng
                            if kalman_update(xa, Saa, 12, Ha, nu, Q, 1, Ka, PHa) != 0:
                                status = 1
                                break
                            xa[2] = wrap(xa[2])
                            xa[D + 2] = wrap(xa[D + 2])
                            memcpy(Pold_i, P + bi * DD, DD * sizeof(double))
                            memcpy(Pold_j, P + bj * DD, DD * sizeof(double))
                            for i in range(D):
                                X[bi * D + i] = xa[i]
                                X[bj * D + i] = xa[D + i]
                                for j in range(D):
                                    P[bi * DD + i * D + j] = Saa[i * 12 + j]
                                    P[bj * DD + i * D + j] = Saa[(D + i) * 12 + D + j]
                                    SIG[(bi * N + bj) * DD + i * D + j] = Saa[i * 12 + D + j]
                            set_identity(SIG + (bj * N + bi) * DD, D)
                            if N > 2:
                                if (right_inverse_product(P + bi * DD, Pold_i, Ai) != 0
                                        or right_inverse_product(P + bj * DD, Pold_j, Aj) != 0):
                                    status = 1
                                    break
                                for v in range(N):
                                    if v != bi and v != bj:
                                        mm(Ai, SIG + (bi * N + v) * DD, T1, D, D, D)
                                        memcpy(SIG + (bi * N + v) * DD, T1, DD * sizeof(double))
                                        mm(Aj, SIG + (bj * N + v) * DD, T1, D, D, D)
                                        memcpy(SIG + (bj * N + v) * DD, T1, DD * sizeof(double))
                    e += 1
                if status != 0:
                    break
            # record tick k
            for v in range(N):
                xv = X + v * D
                if algo == CCL:
                    for i in range(D):
                        for j in range(D):
                            blk[i * D + j] = P[(v * D + i) * n_full + v * D + j]
                    Pv = blk
                else:
                    Pv = P + v * DD
                if not (all_finite(xv, D) and all_finite(Pv, DD)):
                    status = 1
                    break
            if status != 0:
                break
            for v in range(N):
                xv = X + v * D
                if algo == CCL:
                    for i in range(D):
                        for j in range(D):
                            blk[i * D + j] = P[(v * D + i) * n_full + v * D + j]
                    Pv = blk
                else:
                    Pv = P + v * DD
                for i in range(D):
                    EST[k, v, i] = xv[i]
                psd_failures += block_metrics(xv, Pv, &TR[k, v, 0], &NEES[k, v], &TRACE[k, v])
            k_done = k

    free(X); free(P); free(SIG); free(Fs); free(Rs); free(Hrow); free(Kbuf); free(PHt)
    return ReplayOutput(est_a, nees_a, trace_a, psd_failures, status, skipped)
