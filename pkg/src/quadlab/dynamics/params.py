"""Physical parameters and the packed state layout."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from functools import cached_property

import numpy as np

# packed state layout (one row per environment)
P = slice(0, 3)
V = slice(3, 6)
Q = slice(6, 10)
OMEGA = slice(10, 13)
ROTOR = slice(13, 17)
PENDING = slice(17, 21)
OMEGA_PREV = slice(21, 24)
STATE_DIM = 24
ACTION_DIM = 4

QUAT_TOL = 1e-6


def _vec(*xs):
    return field(default_factory=lambda: np.array(xs, dtype=np.float64))


@dataclass
class QuadParams:
    """Vehicle constants.  Treat as immutable once built (derived matrices are cached)."""

    m: float = 1.0
    J: np.ndarray = field(default_factory=lambda: np.diag([0.01, 0.01, 0.02]))
    l: float = 0.15
    c_tau: float = 0.013
    rho: float = 1.225
    C_d: np.ndarray = _vec(0.3, 0.3, 0.3)
    s_area: np.ndarray = _vec(0.05, 0.05, 0.1)
    Kp_omega: np.ndarray = _vec(0.1, 0.1, 0.01)
    Kd_omega: np.ndarray = _vec(0.001, 0.001, 0.0005)
    c_motor: float = 25.0
    # f = k2 w^2 + k1 w + k0; hover at w = 600 rad/s (60% of 1000)
    k0: float = 0.0
    k1: float = 2.0e-4
    k2: float = (9.81 / 4 - 2.0e-4 * 600.0) / 600.0**2
    g: np.ndarray = _vec(0.0, 0.0, -9.81)
    dt: float = 0.02
    omega_max: float = 6.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (list, tuple, np.ndarray)):
                setattr(self, f.name, np.array(v, dtype=np.float64))
            else:
                setattr(self, f.name, float(v))
        if self.J.shape == (3,):
            self.J = np.diag(self.J)
        self.validate()

    def validate(self):
        if not (self.m > 0 and self.dt > 0 and self.l > 0 and self.c_tau > 0 and self.c_motor >= 0):
            raise ValueError("QuadParams: require m, dt, l, c_tau > 0 and c_motor >= 0")
        if self.J.shape != (3, 3) or not np.allclose(self.J, self.J.T):
            raise ValueError("QuadParams: J must be a symmetric 3x3 matrix")
        if np.linalg.eigvalsh(self.J).min() <= 0:
            raise ValueError("QuadParams: J must be positive definite")
        if self.k2 <= 0 or self.k1 < 0:
            raise ValueError("QuadParams: thrust curve needs k2 > 0, k1 >= 0")
        for name in ("C_d", "s_area", "Kp_omega", "Kd_omega", "g"):
            if getattr(self, name).shape != (3,):
                raise ValueError(f"QuadParams: {name} must have 3 entries")
        alloc = self.allocation_matrix
        if abs(np.linalg.det(alloc)) < 1e-12:
            raise ValueError("QuadParams: allocation matrix is singular")

    @property
    def allocation_matrix(self) -> np.ndarray:
        """Rotor thrusts -> (collective thrust, tau_x, tau_y, tau_z)."""
        l, c = self.l, self.c_tau
        return np.array([
            [1.0, 1.0, 1.0, 1.0],
            [0.0, l, 0.0, -l],
            [-l, 0.0, l, 0.0],
            [c, -c, c, -c],
        ])

    @cached_property
    def allocation_inverse(self) -> np.ndarray:
        return np.linalg.inv(self.allocation_matrix)

    @cached_property
    def J_inv(self) -> np.ndarray:
        return np.linalg.inv(self.J)

    @property
    def g_norm(self) -> float:
        return float(np.linalg.norm(self.g))

    @property
    def f_max(self) -> float:
        """Collective thrust at normalized command +1."""
        return 2.0 * self.m * self.g_norm

    @property
    def motor_decay(self) -> float:
        return float(np.exp(-self.c_motor * self.dt))

    def rotor_speed_for_thrust(self, f):
        """Positive root of k2 w^2 + k1 w + k0 = f; zero when f <= k0."""
        x = np.maximum(np.asarray(f, dtype=np.float64) - self.k0, 0.0)
        return (-self.k1 + np.sqrt(self.k1**2 + 4.0 * self.k2 * x)) / (2.0 * self.k2)

    @property
    def hover_rotor_speed(self) -> float:
        return float(self.rotor_speed_for_thrust(self.m * self.g_norm / 4.0))

    @cached_property
    def _packed(self) -> np.ndarray:
        """Flat float64 vector consumed by the step kernels."""
        return np.concatenate([
            [self.m, self.l, self.c_tau, self.rho, self.c_motor, self.k0, self.k1, self.k2,
             self.dt, self.omega_max, self.f_max, self.motor_decay],
            self.g,
            0.5 * self.rho * self.C_d * self.s_area,
            self.Kp_omega,
            self.Kd_omega,
            self.J.ravel(),
            self.J_inv.ravel(),
            self.allocation_inverse.ravel(),
        ]).astype(np.float64)

    def packed(self) -> np.ndarray:
        return self._packed

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


# offsets into QuadParams.packed()
PK_M, PK_L, PK_CTAU, PK_RHO, PK_CMOTOR, PK_K0, PK_K1, PK_K2, PK_DT, PK_WMAX, PK_FMAX, PK_DECAY = range(12)
PK_G = 12
PK_DRAG = 15
PK_KP = 18
PK_KD = 21
PK_J = 24
PK_JINV = 33
PK_AINV = 42
PK_SIZE = 58


@dataclass
class QuadState:
    """Simulator state.  Arrays are (3,)/(4,) for one vehicle or (B, 3)/(B, 4)
    for a batch."""

    p_W: np.ndarray
    v_W: np.ndarray
    q: np.ndarray
    Omega: np.ndarray
    omega_rotor: np.ndarray
    a_pending: np.ndarray
    Omega_prev: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([
            np.asarray(x, dtype=np.float64)
            for x in (self.p_W, self.v_W, self.q, self.Omega, self.omega_rotor, self.a_pending, self.Omega_prev)
        ], axis=-1)

    @classmethod
    def from_vector(cls, x) -> "QuadState":
        x = np.asarray(x, dtype=np.float64)
        return cls(x[..., P].copy(), x[..., V].copy(), x[..., Q].copy(), x[..., OMEGA].copy(),
                   x[..., ROTOR].copy(), x[..., PENDING].copy(), x[..., OMEGA_PREV].copy())

    @classmethod
    def hover(cls, params: QuadParams, position=(0.0, 0.0, 0.0)) -> "QuadState":
        """Level, at rest, rotors settled at hover speed, hover command pending."""
        w = params.hover_rotor_speed
        return cls(np.array(position, dtype=np.float64), np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]),
                   np.zeros(3), np.full(4, w), np.zeros(4), np.zeros(3))

    def validate(self):
        x = self.to_vector()
        if not np.isfinite(x).all():
            raise ValueError("QuadState: non-finite component")
        qn = np.linalg.norm(np.atleast_2d(self.q), axis=-1)
        if np.abs(qn - 1.0).max() > QUAT_TOL:
            raise ValueError("QuadState: quaternion is not unit length")
        if (np.asarray(self.omega_rotor) < 0).any():
            raise ValueError("QuadState: negative rotor speed")


def hover_action() -> np.ndarray:
    """Normalized command that holds a hover: half of f_max, zero rates."""
    return np.zeros(ACTION_DIM)


def validate_vector(x: np.ndarray):
    QuadState.from_vector(x).validate()
