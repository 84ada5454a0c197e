"""Differentiable quadrotor dynamics.

``step_var`` records one batched control step as a single fused tape node
backed by the active kernel (compiled when available).  The component-wise
functions in :mod:`.model` are the same physics written with generic tape
ops and serve as the reference path.
"""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from . import kernels
from .model import (
    allocate,
    allocation_forward,
    cross,
    derivative,
    drag,
    motor_step,
    pd_torque,
    quat_rate,
    rotate_body_to_world,
    rotation_matrix,
    step_components,
)
from .params import (
    ACTION_DIM,
    STATE_DIM,
    QuadParams,
    QuadState,
    hover_action,
)

__all__ = [
    "ACTION_DIM", "STATE_DIM", "QuadParams", "QuadState", "SimulationError", "allocate",
    "allocation_forward", "cross", "derivative", "drag", "hover_action", "motor_step",
    "pd_torque", "quat_rate", "rotate_body_to_world", "rotation_matrix", "step", "step_batch",
    "step_components", "step_var",
]


class SimulationError(FloatingPointError):
    """The integrator produced a non-finite state."""


def _check(Y, where=""):
    bad = ~np.isfinite(Y).all(axis=-1)
    if bad.any():
        idx = np.flatnonzero(bad)
        raise SimulationError(f"simulation blow-up{where}: non-finite state in trajectories {idx.tolist()}")


def step_batch(X: np.ndarray, A: np.ndarray, params: QuadParams, kernel=None) -> np.ndarray:
    """Plain-array batched step: X (B, 24), A (B, 4) -> (B, 24)."""
    k = kernels.get(kernel)
    X = np.ascontiguousarray(X, dtype=np.float64)
    A = np.ascontiguousarray(A, dtype=np.float64)
    Y = k.step_forward(X, A, params.packed())
    _check(Y)
    return Y


def step(state: QuadState, action, params: QuadParams) -> QuadState:
    """Advance one vehicle (or a batch held in one QuadState) by one control step."""
    x = state.to_vector()
    single = x.ndim == 1
    X = np.atleast_2d(x)
    A = np.atleast_2d(np.asarray(action, dtype=np.float64))
    Y = step_batch(X, A, params)
    return QuadState.from_vector(Y[0] if single else Y)


def step_var(X: ad.Var, A: ad.Var, params: QuadParams, kernel=None) -> ad.Var:
    """Differentiable batched step recorded as one tape node."""
    k = kernels.get(kernel)
    X = ad.as_var(X)
    A = ad.as_var(A)
    P = params.packed()
    Xv = np.ascontiguousarray(X.value, dtype=np.float64)
    Av = np.ascontiguousarray(A.value, dtype=np.float64)
    Y = k.step_forward(Xv, Av, P)
    _check(Y)
    tape = X.tape if X.tracked else A.tape
    if tape is None:
        return ad.Var(Y)
    cache = {}

    def _vjp(g):
        if "r" not in cache:
            cache["r"] = k.step_vjp(Xv, Av, P, np.ascontiguousarray(g, dtype=np.float64))
        return cache["r"]

    return tape.custom("quad_step", Y, (X, A), (lambda g: _vjp(g)[0], lambda g: _vjp(g)[1]))
