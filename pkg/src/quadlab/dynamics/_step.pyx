# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled quadrotor step: batched forward pass and its vector-Jacobian product.

State rows use the packed 24-wide layout from ``params.py``; the parameter
vector is ``QuadParams.packed()``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()

# offsets into the packed parameter vector (mirror params.py)
DEF PK_M = 0
DEF PK_L = 1
DEF PK_CTAU = 2
DEF PK_K0 = 5
DEF PK_K1 = 6
DEF PK_K2 = 7
DEF PK_DT = 8
DEF PK_WMAX = 9
DEF PK_FMAX = 10
DEF PK_DECAY = 11
DEF PK_G = 12
DEF PK_DRAG = 15
DEF PK_KP = 18
DEF PK_KD = 21
DEF PK_J = 24
DEF PK_JINV = 33
DEF PK_AINV = 42


cdef struct Fwd:
    double R[9]
    double vB[3]
    double fB[3]
    double omega_cmd_x[4]
    double root[4]
    double omega_n[4]
    double f_rot[4]
    double JO[3]
    double q_raw[4]
    double qnorm


cdef inline void forward_one(const double* x, const double* a, const double* P,
                             double* y, Fwd* s) noexcept nogil:
    cdef double dt = P[PK_DT]
    cdef double k0 = P[PK_K0], k1 = P[PK_K1], k2 = P[PK_K2]
    cdef double decay = P[PK_DECAY]
    cdef double u[4]
    cdef double tau[3]
    cdef double gyro[3]
    cdef double rhs[3]
    cdef double acc[3]
    cdef double qd[4]
    cdef double Od[3]
    cdef double f_rc, xk, wd, ftot
    cdef int i, j
    cdef double qw = x[6], qx = x[7], qy = x[8], qz = x[9]
    cdef double ox = x[10], oy = x[11], oz = x[12]

    # delayed command -> PD torque
    u[0] = (x[17] + 1.0) * (0.5 * P[PK_FMAX])
    for i in range(3):
        u[i + 1] = P[PK_KP + i] * (P[PK_WMAX] * x[18 + i] - x[10 + i]) \
            - P[PK_KD + i] * ((x[10 + i] - x[21 + i]) / dt)
    # allocation, rotor speed command, motor lag, thrust curve
    for j in range(4):
        f_rc = P[PK_AINV + 4 * j] * u[0] + P[PK_AINV + 4 * j + 1] * u[1] \
            + P[PK_AINV + 4 * j + 2] * u[2] + P[PK_AINV + 4 * j + 3] * u[3]
        xk = f_rc - k0
        if xk >= 0.0:
            s.omega_cmd_x[j] = 1.0
        else:
            s.omega_cmd_x[j] = 0.0
            xk = 0.0
        s.root[j] = sqrt(k1 * k1 + 4.0 * k2 * xk)
        wd = (s.root[j] - k1) * (1.0 / (2.0 * k2))
        s.omega_n[j] = wd + (x[13 + j] - wd) * decay
        s.f_rot[j] = k2 * s.omega_n[j] * s.omega_n[j] + k1 * s.omega_n[j] + k0
    ftot = s.f_rot[0] + s.f_rot[1] + s.f_rot[2] + s.f_rot[3]
    tau[0] = P[PK_L] * (s.f_rot[1] - s.f_rot[3])
    tau[1] = P[PK_L] * (s.f_rot[2] - s.f_rot[0])
    tau[2] = P[PK_CTAU] * (s.f_rot[0] - s.f_rot[1] + s.f_rot[2] - s.f_rot[3])

    # rotation
    s.R[0] = 1.0 - 2.0 * (qy * qy + qz * qz)
    s.R[1] = 2.0 * (qx * qy - qw * qz)
    s.R[2] = 2.0 * (qx * qz + qw * qy)
    s.R[3] = 2.0 * (qx * qy + qw * qz)
    s.R[4] = 1.0 - 2.0 * (qx * qx + qz * qz)
    s.R[5] = 2.0 * (qy * qz - qw * qx)
    s.R[6] = 2.0 * (qx * qz - qw * qy)
    s.R[7] = 2.0 * (qy * qz + qw * qx)
    s.R[8] = 1.0 - 2.0 * (qx * qx + qy * qy)
    for j in range(3):
        s.vB[j] = s.R[j] * x[3] + s.R[3 + j] * x[4] + s.R[6 + j] * x[5]
        s.fB[j] = -P[PK_DRAG + j] * fabs(s.vB[j]) * s.vB[j]
    s.fB[2] += ftot
    for i in range(3):
        acc[i] = (s.R[3 * i] * s.fB[0] + s.R[3 * i + 1] * s.fB[1] + s.R[3 * i + 2] * s.fB[2]) / P[PK_M] + P[PK_G + i]

    qd[0] = -0.5 * (qx * ox + qy * oy + qz * oz)
    qd[1] = 0.5 * (qw * ox + qy * oz - qz * oy)
    qd[2] = 0.5 * (qw * oy - qx * oz + qz * ox)
    qd[3] = 0.5 * (qw * oz + qx * oy - qy * ox)

    for i in range(3):
        s.JO[i] = P[PK_J + 3 * i] * ox + P[PK_J + 3 * i + 1] * oy + P[PK_J + 3 * i + 2] * oz
    gyro[0] = oy * s.JO[2] - oz * s.JO[1]
    gyro[1] = oz * s.JO[0] - ox * s.JO[2]
    gyro[2] = ox * s.JO[1] - oy * s.JO[0]
    for i in range(3):
        rhs[i] = tau[i] - gyro[i]
    for i in range(3):
        Od[i] = P[PK_JINV + 3 * i] * rhs[0] + P[PK_JINV + 3 * i + 1] * rhs[1] + P[PK_JINV + 3 * i + 2] * rhs[2]

    # explicit Euler
    for i in range(3):
        y[i] = x[i] + x[3 + i] * dt
        y[3 + i] = x[3 + i] + acc[i] * dt
        y[10 + i] = x[10 + i] + Od[i] * dt
        y[21 + i] = x[10 + i]
    for i in range(4):
        s.q_raw[i] = x[6 + i] + qd[i] * dt
    s.qnorm = sqrt(s.q_raw[1] * s.q_raw[1] + s.q_raw[2] * s.q_raw[2] + s.q_raw[3] * s.q_raw[3]
                   + s.q_raw[0] * s.q_raw[0])
    for i in range(4):
        y[6 + i] = s.q_raw[i] / s.qnorm
        y[13 + i] = s.omega_n[i]
        y[17 + i] = a[i]


cdef inline void vjp_one(const double* x, const double* a, const double* P, const double* gy,
                         double* gx, double* ga) noexcept nogil:
    cdef Fwd s
    cdef double y[24]
    cdef double dt = P[PK_DT]
    cdef double k1 = P[PK_K1], k2 = P[PK_K2]
    cdef double decay = P[PK_DECAY]
    cdef double gqr[4]
    cdef double gqd[4]
    cdef double gacc[3]
    cdef double gOd[3]
    cdef double gw[3]
    cdef double gJO[3]
    cdef double gfB[3]
    cdef double gvB[3]
    cdef double gR[9]
    cdef double gtau[3]
    cdef double gfrot[4]
    cdef double gu[4]
    cdef double gfrc[4]
    cdef double h0, h1, h2, h3, dot, gwn, gwd, gftot, inv_m
    cdef double qw = x[6], qx = x[7], qy = x[8], qz = x[9]
    cdef double ox = x[10], oy = x[11], oz = x[12]
    cdef int i, j

    forward_one(x, a, P, y, &s)
    for i in range(24):
        gx[i] = 0.0
    for i in range(4):
        ga[i] = gy[17 + i]

    # Euler updates
    for i in range(3):
        gx[i] += gy[i]
        gx[3 + i] += gy[i] * dt + gy[3 + i]
        gacc[i] = gy[3 + i] * dt
        gx[10 + i] += gy[10 + i] + gy[21 + i]
        gOd[i] = gy[10 + i] * dt
    # renormalization
    dot = 0.0
    for i in range(4):
        dot += y[6 + i] * gy[6 + i]
    for i in range(4):
        gqr[i] = (gy[6 + i] - y[6 + i] * dot) / s.qnorm
        gx[6 + i] += gqr[i]
        gqd[i] = gqr[i] * dt

    # Omega_dot = J^-1 (tau - Omega x J Omega)
    for j in range(3):
        gw[j] = P[PK_JINV + j] * gOd[0] + P[PK_JINV + 3 + j] * gOd[1] + P[PK_JINV + 6 + j] * gOd[2]
        gtau[j] = gw[j]
    # gyro = Omega x JO; d/dOmega = JO x gc, d/dJO = gc x Omega, with gc = -gw
    gx[10] += -(s.JO[1] * gw[2] - s.JO[2] * gw[1])
    gx[11] += -(s.JO[2] * gw[0] - s.JO[0] * gw[2])
    gx[12] += -(s.JO[0] * gw[1] - s.JO[1] * gw[0])
    gJO[0] = -(gw[1] * oz - gw[2] * oy)
    gJO[1] = -(gw[2] * ox - gw[0] * oz)
    gJO[2] = -(gw[0] * oy - gw[1] * ox)
    for j in range(3):
        gx[10 + j] += P[PK_J + j] * gJO[0] + P[PK_J + 3 + j] * gJO[1] + P[PK_J + 6 + j] * gJO[2]

    # quaternion kinematics
    h0 = 0.5 * gqd[0]
    h1 = 0.5 * gqd[1]
    h2 = 0.5 * gqd[2]
    h3 = 0.5 * gqd[3]
    gx[6] += h1 * ox + h2 * oy + h3 * oz
    gx[7] += -h0 * ox - h2 * oz + h3 * oy
    gx[8] += -h0 * oy + h1 * oz - h3 * ox
    gx[9] += -h0 * oz - h1 * oy + h2 * ox
    gx[10] += -h0 * qx + h1 * qw + h2 * qz - h3 * qy
    gx[11] += -h0 * qy - h1 * qz + h2 * qw + h3 * qx
    gx[12] += -h0 * qz + h1 * qy - h2 * qx + h3 * qw

    # acc = R fB / m + g
    inv_m = 1.0 / P[PK_M]
    for j in range(3):
        gfB[j] = (s.R[j] * gacc[0] + s.R[3 + j] * gacc[1] + s.R[6 + j] * gacc[2]) * inv_m
    for i in range(3):
        for j in range(3):
            gR[3 * i + j] = gacc[i] * s.fB[j] * inv_m
    gftot = gfB[2]
    # drag: fB_j = -k_j |vB_j| vB_j
    for j in range(3):
        gvB[j] = gfB[j] * (-2.0 * P[PK_DRAG + j] * fabs(s.vB[j]))
    # vB = R^T v
    for i in range(3):
        gx[3 + i] += s.R[3 * i] * gvB[0] + s.R[3 * i + 1] * gvB[1] + s.R[3 * i + 2] * gvB[2]
        for j in range(3):
            gR[3 * i + j] += x[3 + i] * gvB[j]
    # R(q)
    gx[6] += 2.0 * (-gR[1] * qz + gR[2] * qy + gR[3] * qz - gR[5] * qx - gR[6] * qy + gR[7] * qx)
    gx[7] += 2.0 * (gR[1] * qy + gR[2] * qz + gR[3] * qy - 2.0 * gR[4] * qx - gR[5] * qw
                    + gR[6] * qz + gR[7] * qw - 2.0 * gR[8] * qx)
    gx[8] += 2.0 * (-2.0 * gR[0] * qy + gR[1] * qx + gR[2] * qw + gR[3] * qx + gR[5] * qz
                    - gR[6] * qw + gR[7] * qz - 2.0 * gR[8] * qy)
    gx[9] += 2.0 * (-2.0 * gR[0] * qz - gR[1] * qw + gR[2] * qx + gR[3] * qw - 2.0 * gR[4] * qz
                    + gR[5] * qy + gR[6] * qx + gR[7] * qy)

    # collective thrust and realized torques from rotor thrusts
    for j in range(4):
        gfrot[j] = gftot
    gfrot[1] += P[PK_L] * gtau[0]
    gfrot[3] -= P[PK_L] * gtau[0]
    gfrot[2] += P[PK_L] * gtau[1]
    gfrot[0] -= P[PK_L] * gtau[1]
    gfrot[0] += P[PK_CTAU] * gtau[2]
    gfrot[1] -= P[PK_CTAU] * gtau[2]
    gfrot[2] += P[PK_CTAU] * gtau[2]
    gfrot[3] -= P[PK_CTAU] * gtau[2]
    for j in range(4):
        gwn = gfrot[j] * (2.0 * k2 * s.omega_n[j] + k1) + gy[13 + j]
        gx[13 + j] += gwn * decay
        gwd = gwn * (1.0 - decay)
        gfrc[j] = s.omega_cmd_x[j] * gwd / s.root[j]
    # allocation: f_rc = Ainv u
    for i in range(4):
        gu[i] = P[PK_AINV + i] * gfrc[0] + P[PK_AINV + 4 + i] * gfrc[1] \
            + P[PK_AINV + 8 + i] * gfrc[2] + P[PK_AINV + 12 + i] * gfrc[3]
    gx[17] += gu[0] * 0.5 * P[PK_FMAX]
    for i in range(3):
        gx[18 + i] += gu[i + 1] * P[PK_KP + i] * P[PK_WMAX]
        gx[10 + i] -= gu[i + 1] * (P[PK_KP + i] + P[PK_KD + i] / dt)
        gx[21 + i] += gu[i + 1] * P[PK_KD + i] / dt


def step_forward(const double[:, ::1] X, const double[:, ::1] A, const double[::1] P):
    """Next states for a batch: X (B, 24), A (B, 4) -> (B, 24)."""
    cdef Py_ssize_t b, n = X.shape[0]
    cdef Fwd s
    out = np.empty((n, 24), dtype=np.float64)
    cdef double[:, ::1] Y = out
    with nogil:
        for b in range(n):
            forward_one(&X[b, 0], &A[b, 0], &P[0], &Y[b, 0], &s)
    return out


def step_vjp(const double[:, ::1] X, const double[:, ::1] A, const double[::1] P,
             const double[:, ::1] GY):
    """Cotangents of (X, A) given the cotangent GY of the step output."""
    cdef Py_ssize_t b, n = X.shape[0]
    gx_arr = np.empty((n, 24), dtype=np.float64)
    ga_arr = np.empty((n, 4), dtype=np.float64)
    cdef double[:, ::1] GX = gx_arr
    cdef double[:, ::1] GA = ga_arr
    with nogil:
        for b in range(n):
            vjp_one(&X[b, 0], &A[b, 0], &P[0], &GY[b, 0], &GX[b, 0], &GA[b, 0])
    return gx_arr, ga_arr
