"""Pure-Python step kernel with the same interface as the compiled ``_step``.

The forward pass evaluates the composed model on per-column lanes; the
vector-Jacobian product replays it on a private tape.
"""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from .model import step_components
from .params import QuadParams

_PARAM_CACHE: dict[bytes, QuadParams] = {}


def _params(P) -> QuadParams:
    key = np.asarray(P).tobytes()
    prm = _PARAM_CACHE.get(key)
    if prm is None:
        prm = unpack(P)
        _PARAM_CACHE[key] = prm
    return prm


def unpack(P) -> QuadParams:
    from . import params as pk

    P = np.asarray(P)
    rho = P[pk.PK_RHO]
    return QuadParams(
        m=P[pk.PK_M], l=P[pk.PK_L], c_tau=P[pk.PK_CTAU], rho=rho, c_motor=P[pk.PK_CMOTOR],
        k0=P[pk.PK_K0], k1=P[pk.PK_K1], k2=P[pk.PK_K2], dt=P[pk.PK_DT], omega_max=P[pk.PK_WMAX],
        g=P[pk.PK_G:pk.PK_G + 3],
        # drag enters only through 0.5 * rho * C_d * s
        C_d=P[pk.PK_DRAG:pk.PK_DRAG + 3] / (0.5 * rho), s_area=np.ones(3),
        Kp_omega=P[pk.PK_KP:pk.PK_KP + 3], Kd_omega=P[pk.PK_KD:pk.PK_KD + 3],
        J=P[pk.PK_J:pk.PK_J + 9].reshape(3, 3),
    )


def step_forward(X, A, P):
    prm = _params(P)
    X = np.asarray(X, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    xs = tuple(X[:, i] for i in range(X.shape[1]))
    as_ = tuple(A[:, i] for i in range(A.shape[1]))
    out = step_components(xs, as_, prm)
    return np.stack([np.broadcast_to(ad._val(c), (X.shape[0],)) for c in out], axis=1)


def step_vjp(X, A, P, GY):
    prm = _params(P)
    tape = ad.Tape()
    xv = ad.lift(np.asarray(X, dtype=np.float64), tape)
    av = ad.lift(np.asarray(A, dtype=np.float64), tape)
    xs = tuple(xv[:, i] for i in range(xv.shape[1]))
    as_ = tuple(av[:, i] for i in range(av.shape[1]))
    out = step_components(xs, as_, prm)
    y = ad.stack(list(out), axis=1)
    grads = ad.backward(tape, y, seed=np.asarray(GY, dtype=np.float64))
    return np.asarray(grads[xv.node]), np.asarray(grads[av.node])
