"""Differentiable quadrotor model written with tape ops.

Vectors are tuples of scalar components.  A component may be a float, a
float64 array (one lane per environment) or a :class:`~quadlab.autodiff.Var`,
so the same code evaluates plain numbers or records a differentiable graph.
"""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from .params import QUAT_TOL, QuadParams


def _lanes(v):
    return ad._val(v)


def quat_norm_error(q) -> float:
    n2 = sum(np.asarray(_lanes(c)) ** 2 for c in q)
    return float(np.max(np.abs(np.sqrt(n2) - 1.0)))


def rotation_matrix(q):
    """Body-to-world rotation of a unit quaternion (w, x, y, z), row-major 3x3."""
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return (
        (1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)),
        (2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)),
        (2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)),
    )


def matvec(R, v):
    return tuple(R[i][0] * v[0] + R[i][1] * v[1] + R[i][2] * v[2] for i in range(3))


def matTvec(R, v):
    return tuple(R[0][j] * v[0] + R[1][j] * v[1] + R[2][j] * v[2] for j in range(3))


def cross(a, b):
    return (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])


def rotate_body_to_world(q, v, check: bool = True):
    if check and quat_norm_error(q) > QUAT_TOL:
        raise ValueError("rotate_body_to_world: quaternion is not unit length")
    return matvec(rotation_matrix(q), v)


def drag(v_B, params: QuadParams):
    """Quadratic drag opposing body-frame velocity, per axis."""
    k = 0.5 * params.rho * params.C_d * params.s_area
    return tuple(-k[i] * ad.sqabs(v_B[i]) for i in range(3))


def pd_torque(Omega_des, Omega, Omega_prev, params: QuadParams):
    """Bodyrate PD law; the desired-rate derivative is taken as zero and the
    measured-rate derivative is a backward difference."""
    kp, kd, dt = params.Kp_omega, params.Kd_omega, params.dt
    return tuple(kp[i] * (Omega_des[i] - Omega[i]) - kd[i] * ((Omega[i] - Omega_prev[i]) / dt)
                 for i in range(3))


def allocate(f, tau, params: QuadParams):
    """Split collective thrust and torques into four rotor thrusts."""
    A = params.allocation_inverse
    u = (f, tau[0], tau[1], tau[2])
    return tuple(A[j, 0] * u[0] + A[j, 1] * u[1] + A[j, 2] * u[2] + A[j, 3] * u[3] for j in range(4))


def allocation_forward(rotor_thrusts, params: QuadParams):
    """Rotor thrusts -> (collective thrust, (tau_x, tau_y, tau_z))."""
    f1, f2, f3, f4 = rotor_thrusts
    l, c = params.l, params.c_tau
    return f1 + f2 + f3 + f4, (l * (f2 - f4), l * (f3 - f1), c * (f1 - f2 + f3 - f4))


def rotor_speed_command(f_rotor, params: QuadParams):
    """Invert the thrust curve; commanded thrust at or below k0 maps to zero speed."""
    x = ad.maximum(f_rotor - params.k0, 0.0)
    root = ad.sqrt(params.k1 * params.k1 + 4.0 * params.k2 * x)
    return (root - params.k1) * (1.0 / (2.0 * params.k2))


def rotor_thrust(omega, params: QuadParams):
    return params.k2 * omega * omega + params.k1 * omega + params.k0


def motor_step(omega_prev, omega_des, params: QuadParams):
    """First-order lag toward the commanded speed, then the thrust curve.

    Returns (speeds, thrusts), each a 4-tuple.
    """
    decay = params.motor_decay
    omega = tuple(omega_des[i] + (omega_prev[i] - omega_des[i]) * decay for i in range(4))
    return omega, tuple(rotor_thrust(w, params) for w in omega)


def quat_rate(q, Omega):
    """0.5 * q (x) (0, Omega)."""
    w, x, y, z = q
    ox, oy, oz = Omega
    return (
        -0.5 * (x * ox + y * oy + z * oz),
        0.5 * (w * ox + y * oz - z * oy),
        0.5 * (w * oy - x * oz + z * ox),
        0.5 * (w * oz + x * oy - y * ox),
    )


def derivative(q, v_W, Omega, f_collective, tau, params: QuadParams, R=None):
    """Rigid-body rates (x_dot, v_dot, q_dot, Omega_dot) for body thrust along +z."""
    if R is None:
        R = rotation_matrix(q)
    v_B = matTvec(R, v_W)
    d = drag(v_B, params)
    f_B = (d[0], d[1], f_collective + d[2])
    F_W = matvec(R, f_B)
    inv_m = 1.0 / params.m
    v_dot = tuple(F_W[i] * inv_m + params.g[i] for i in range(3))
    q_dot = quat_rate(q, Omega)
    J, J_inv = params.J, params.J_inv
    JO = tuple(J[i, 0] * Omega[0] + J[i, 1] * Omega[1] + J[i, 2] * Omega[2] for i in range(3))
    gyro = cross(Omega, JO)
    rhs = tuple(tau[i] - gyro[i] for i in range(3))
    Omega_dot = tuple(J_inv[i, 0] * rhs[0] + J_inv[i, 1] * rhs[1] + J_inv[i, 2] * rhs[2] for i in range(3))
    return tuple(v_W), v_dot, q_dot, Omega_dot


def command_from_action(a, params: QuadParams):
    """Normalized [-1, 1] action -> (collective thrust N, desired rates rad/s)."""
    f = (a[0] + 1.0) * (0.5 * params.f_max)
    return f, tuple(params.omega_max * a[i] for i in (1, 2, 3))


def step_components(x, a, params: QuadParams):
    """One control step on a 24-component state; returns the next 24 components.

    Order: delayed command -> PD -> allocation -> motor lag + thrust curve ->
    rigid body -> explicit Euler -> quaternion renormalization.
    """
    p, v, q = x[0:3], x[3:6], x[6:10]
    Omega, rotor, pending, Omega_prev = x[10:13], x[13:17], x[17:21], x[21:24]
    dt = params.dt

    f_cmd, Omega_des = command_from_action(pending, params)
    tau_cmd = pd_torque(Omega_des, Omega, Omega_prev, params)
    f_rotor_cmd = allocate(f_cmd, tau_cmd, params)
    omega_des = tuple(rotor_speed_command(f, params) for f in f_rotor_cmd)
    omega, f_rotor = motor_step(rotor, omega_des, params)
    f_total, tau = allocation_forward(f_rotor, params)

    x_dot, v_dot, q_dot, Omega_dot = derivative(q, v, Omega, f_total, tau, params)
    p_n = tuple(p[i] + x_dot[i] * dt for i in range(3))
    v_n = tuple(v[i] + v_dot[i] * dt for i in range(3))
    q_raw = tuple(q[i] + q_dot[i] * dt for i in range(4))
    qn = ad.sqrt(sum(c * c for c in q_raw[1:]) + q_raw[0] * q_raw[0])
    inv = 1.0 / qn
    q_n = tuple(c * inv for c in q_raw)
    Omega_n = tuple(Omega[i] + Omega_dot[i] * dt for i in range(3))
    return (*p_n, *v_n, *q_n, *Omega_n, *omega, *a, *Omega)
