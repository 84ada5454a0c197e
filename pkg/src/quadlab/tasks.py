"""Hovering, tracking, landing and racing environments.

Rewards are split in two: ``r_diff`` is recorded on the tape and carries
gradient; ``r_nondiff`` (gate passes, landing success) is a plain array and
never touches the tape.

Functions take a packed state of shape (24,) or (B, 24), as an array or a
:class:`~quadlab.autodiff.Var`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .dynamics import QuadParams, QuadState, step_var
from .dynamics.params import STATE_DIM

TASKS = ("hovering", "tracking", "landing", "racing")
REWARD_VARIANTS = ("position", "velocity", "relaxed_log", "relaxed_exp")

# observation state part is (p, q, v, Omega)
OBS_STATE_IDX = np.array([0, 1, 2, 6, 7, 8, 9, 3, 4, 5, 10, 11, 12])
TRACK_POINTS = 10

_DEFAULT_K = {
    "hovering": (1.0, 0.2, 0.1, 0.05),
    "tracking": (1.0, 0.2, 0.1, 0.05),
    "landing": (1.0, 1.0, 10.0),
    "racing": (1.0, 0.1, 0.02, 0.02, 10.0),
}


# alive bonus: large enough that staying airborne beats terminating anywhere
# in the start region (per-step penalties there reach roughly 3.5)
_DEFAULT_C = {"hovering": 4.0, "tracking": 4.0, "landing": 0.0, "racing": 4.0}


def _default_gates():
    # square course, counter-clockwise, each gate facing the direction of travel
    r, z = 2.5, 1.5
    return [
        (r, 0.0, z, np.pi / 2),
        (0.0, r, z, np.pi),
        (-r, 0.0, z, -np.pi / 2),
        (0.0, -r, z, 0.0),
    ]


@dataclass
class TaskConfig:
    task: str = "hovering"
    c: float | None = None
    k: tuple = ()
    target: tuple = (0.0, 0.0, 1.5)
    init_low: tuple = (-2.0, -2.0, 0.5)
    init_high: tuple = (2.0, 2.0, 2.5)
    init_tilt: float = 0.3
    init_yaw: float = 0.3
    init_speed: float = 0.5
    init_rate: float = 0.5
    bounds_low: tuple = (-8.0, -8.0, 0.0)
    bounds_high: tuple = (8.0, 8.0, 8.0)
    episode_len: int = 256
    reward_variant: str = "position"
    # landing
    safe_land_speed: float = 0.5
    pad_radius: float = 0.5
    v_z_target: float = -0.3
    paper_literal_landing_sign: bool = False
    # tracking
    track_center: tuple = (0.0, 0.0, 1.5)
    track_radius: float = 1.5
    track_speed: float = 1.0
    # racing
    gate_poses: list = field(default_factory=_default_gates)
    gate_halfwidth: float = 0.5
    dt: float = 0.02

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.reward_variant not in REWARD_VARIANTS:
            raise ValueError(f"unknown reward variant {self.reward_variant!r}")
        if self.c is None:
            self.c = _DEFAULT_C[self.task]
        self.c = float(self.c)
        if not self.k:
            self.k = _DEFAULT_K[self.task]
        self.k = tuple(float(v) for v in self.k)
        if len(self.k) != len(_DEFAULT_K[self.task]):
            raise ValueError(f"{self.task} needs {len(_DEFAULT_K[self.task])} reward weights")
        if not np.isfinite(self.k).all() or not np.isfinite(self.c):
            raise ValueError("reward weights must be finite")
        if self.task == "racing" and len(self.gate_poses) != 4:
            raise ValueError("racing needs exactly 4 gate poses")
        for name in ("target", "init_low", "init_high", "bounds_low", "bounds_high", "track_center"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))
        self.gate_poses = [tuple(float(v) for v in g) for g in self.gate_poses]
        self.episode_len = int(self.episode_len)

    @classmethod
    def preset(cls, task: str, **overrides) -> "TaskConfig":
        base = dict(task=task)
        if task == "landing":
            base.update(target=(0.0, 0.0, 0.0), init_low=(-1.0, -1.0, 1.0), init_high=(1.0, 1.0, 2.0),
                        bounds_low=(-4.0, -4.0, -1.0), bounds_high=(4.0, 4.0, 4.0))
        elif task == "tracking":
            base.update(init_low=(-2.0, -2.0, 1.0), init_high=(2.0, 2.0, 2.0))
        elif task == "racing":
            base.update(init_low=(-3.0, -3.0, 1.0), init_high=(3.0, 3.0, 2.0), episode_len=400,
                        bounds_low=(-6.0, -6.0, 0.0), bounds_high=(6.0, 6.0, 5.0))
        base.update(overrides)
        return cls(**base)

    def validate_against(self, horizon: int):
        if self.episode_len <= horizon:
            raise ValueError("episode_len must exceed the horizon")

    @property
    def obs_dim(self) -> int:
        extra = {"hovering": 3, "tracking": 3 * TRACK_POINTS, "landing": 3, "racing": 6}[self.task]
        return len(OBS_STATE_IDX) + extra

    @property
    def gate_centers(self) -> np.ndarray:
        return np.array([g[:3] for g in self.gate_poses])


# --------------------------------------------------------------------------
# geometry helpers

def f_plus(x):
    """Increasing normalizer x -> x / (1 + x) on [0, inf) -> [0, 1)."""
    return x / (1.0 + x)


def quat_from_euler(roll, pitch, yaw):
    cr, sr = np.cos(roll / 2), np.sin(roll / 2)
    cp, sp = np.cos(pitch / 2), np.sin(pitch / 2)
    cy, sy = np.cos(yaw / 2), np.sin(yaw / 2)
    return np.stack([
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ], axis=-1)


def quat_error(q):
    """Distance to the level attitude, respecting the double cover."""
    ident = np.array([1.0, 0.0, 0.0, 0.0])
    return ad.minimum(ad.norm(q - ident), ad.norm(q + ident))


def track_angle(cfg: TaskConfig, p) -> np.ndarray:
    p = np.asarray(p)
    return np.arctan2(p[..., 1] - cfg.track_center[1], p[..., 0] - cfg.track_center[0])


def track_points(cfg: TaskConfig, p) -> np.ndarray:
    """Next reference points ahead of the vehicle's angular position,
    spaced by the distance flown in one step at the reference speed.
    Shape (..., 10, 3)."""
    theta = track_angle(cfg, p)
    step = cfg.track_speed * cfg.dt / cfg.track_radius
    ang = theta[..., None] + step * np.arange(1, TRACK_POINTS + 1)
    cx, cy, cz = cfg.track_center
    return np.stack([cx + cfg.track_radius * np.cos(ang), cy + cfg.track_radius * np.sin(ang),
                     np.full_like(ang, cz)], axis=-1)


def next_gate_from_position(cfg: TaskConfig, p) -> np.ndarray:
    """Index of the first gate ahead (counter-clockwise about the course centre)."""
    p = np.atleast_2d(np.asarray(p))
    centers = cfg.gate_centers
    mid = centers.mean(axis=0)
    gate_ang = np.arctan2(centers[:, 1] - mid[1], centers[:, 0] - mid[0])
    ang = np.arctan2(p[:, 1] - mid[1], p[:, 0] - mid[0])
    ahead = np.mod(gate_ang[None, :] - ang[:, None], 2 * np.pi)
    return np.argmin(ahead, axis=1)


def gate_passed(p_prev, p_curr, gate_pose, gate_halfwidth: float) -> bool:
    """True iff the segment crosses the gate plane along its facing direction
    and the crossing point lies inside the square opening."""
    return bool(_gate_passed_batch(np.atleast_2d(p_prev), np.atleast_2d(p_curr),
                                   np.atleast_2d(gate_pose), gate_halfwidth)[0])


def _gate_passed_batch(p0, p1, poses, halfwidth):
    c = poses[:, :3]
    yaw = poses[:, 3]
    n = np.stack([np.cos(yaw), np.sin(yaw), np.zeros_like(yaw)], axis=-1)
    lat = np.stack([-np.sin(yaw), np.cos(yaw), np.zeros_like(yaw)], axis=-1)
    s0 = np.einsum("ij,ij->i", p0 - c, n)
    s1 = np.einsum("ij,ij->i", p1 - c, n)
    crossing = (s0 < 0.0) & (s1 >= 0.0)
    denom = np.where(crossing, s1 - s0, 1.0)
    t = -s0 / denom
    hit = p0 + t[:, None] * (p1 - p0) - c
    inside = (np.abs(np.einsum("ij,ij->i", hit, lat)) <= halfwidth) & (np.abs(hit[:, 2]) <= halfwidth)
    return crossing & inside


# --------------------------------------------------------------------------
# observation / reward / termination

def task_targets(cfg: TaskConfig, X, progress=0):
    """(primary target p_hat_0, task part of the observation) from state values."""
    xv = np.asarray(ad._val(X))
    p = xv[..., 0:3]
    lead = p.shape[:-1]
    if cfg.task in ("hovering", "landing"):
        tgt = np.broadcast_to(np.asarray(cfg.target), lead + (3,))
        return tgt, tgt
    if cfg.task == "tracking":
        pts = track_points(cfg, p)
        return pts[..., 0, :], pts.reshape(lead + (3 * TRACK_POINTS,))
    centers = cfg.gate_centers
    k = np.broadcast_to(np.asarray(progress), lead) % 4
    g0, g1 = centers[k], centers[(k + 1) % 4]
    return g0, np.concatenate([g0, g1], axis=-1)


def observe(cfg: TaskConfig, X, progress=0):
    """State part (p, q, v, Omega) followed by the task part.  Returns a Var
    when given a Var (task part is constant), else an array."""
    _, extra = task_targets(cfg, X, progress)
    if isinstance(X, ad.Var):
        return ad.concat([X[..., OBS_STATE_IDX], ad.constant(extra)], axis=-1)
    X = np.asarray(X)
    return np.concatenate([X[..., OBS_STATE_IDX], extra], axis=-1)


def reward_relaxed(X, target, variant: str):
    """Smooth stand-ins for the gate bonus, as a function of distance to the
    gate centre d:  log: -5 log(d + 0.01);  exp: 1 / (d + 0.05)."""
    d = ad.norm(X[..., 0:3] - target)
    if variant == "relaxed_log":
        return -5.0 * ad.log(d + 0.01)
    if variant == "relaxed_exp":
        return 1.0 / (d + 0.05)
    raise ValueError(f"not a relaxed variant: {variant!r}")


def reward(cfg: TaskConfig, X, action=None, progress=0, passed=None, success=None, target=None):
    """(r_diff, r_nondiff).  ``passed`` flags gate passes on this step (racing)
    and ``success`` flags successful termination (landing).  The target is a
    constant of the step (for tracking it is looked up from the current
    position but not differentiated through); ``target`` overrides it."""
    X = ad.as_var(X)
    lead = X.shape[:-1]
    tgt = task_targets(cfg, X, progress)[0] if target is None else np.asarray(target, dtype=np.float64)
    k = cfg.k
    p, v, q, om = X[..., 0:3], X[..., 3:6], X[..., 6:10], X[..., 10:13]
    r_nd = np.zeros(lead)
    if cfg.task == "landing":
        dxy = ad.norm(p[..., 0:2] - np.asarray(tgt)[..., 0:2])
        dvz = ad.norm_of([X[..., 5] - cfg.v_z_target])
        sign = 1.0 if cfg.paper_literal_landing_sign else -1.0
        r = -k[0] * f_plus(dxy) + sign * k[1] * f_plus(dvz)
        if success is not None:
            r_nd = r_nd + k[2] * np.asarray(success, dtype=np.float64)
        return r, r_nd

    if cfg.task == "racing" and cfg.reward_variant == "velocity":
        to_gate = tgt - p
        unit = to_gate / ad.reshape(ad.norm(to_gate), lead + (1,))
        lead_term = k[0] * (v * unit).sum(axis=-1)
    else:
        lead_term = -k[0] * ad.norm(p - tgt)
    r = cfg.c + lead_term - k[1] * quat_error(q) - k[2] * ad.norm(v) - k[3] * ad.norm(om)
    if cfg.task == "racing":
        if cfg.reward_variant in ("relaxed_log", "relaxed_exp"):
            r = r + reward_relaxed(X, tgt, cfg.reward_variant)
        elif passed is not None:
            r_nd = r_nd + k[4] * np.asarray(passed, dtype=np.float64)
    return r, r_nd


def check_done(cfg: TaskConfig, X, step_count):
    """(done, success).  Episodes end on timeout, on leaving the safety box or,
    for landing, on touchdown; landing succeeds on a slow touchdown on the pad,
    hovering and tracking succeed on reaching the timeout, racing never ends
    successfully."""
    x = np.atleast_2d(np.asarray(ad._val(X)))
    p = x[:, 0:3]
    steps = np.broadcast_to(np.asarray(step_count), (x.shape[0],))
    timeout = steps >= cfg.episode_len
    lo, hi = np.asarray(cfg.bounds_low), np.asarray(cfg.bounds_high)
    out = ((p < lo) | (p > hi)).any(axis=1)
    if cfg.task == "landing":
        touch = p[:, 2] <= 0.0
        on_pad = np.linalg.norm(p[:, 0:2] - np.asarray(cfg.target[:2]), axis=1) <= cfg.pad_radius
        soft = np.abs(x[:, 5]) <= cfg.safe_land_speed
        success = touch & on_pad & soft & ~out
        done = timeout | out | touch
    else:
        crash = out | (p[:, 2] < 0.0)
        done = timeout | crash
        success = timeout & ~crash if cfg.task in ("hovering", "tracking") else np.zeros_like(done)
    if np.ndim(ad._val(X)) == 1:
        return bool(done[0]), bool(success[0])
    return done, success


def reset(cfg: TaskConfig, rng: np.random.Generator, quad: QuadParams | None = None,
          override_state: QuadState | None = None, progress: int | None = None):
    """Sample a start state (or take ``override_state`` verbatim); returns
    (state, observation)."""
    quad = quad or QuadParams()
    if override_state is not None:
        override_state.validate()
        state = override_state
    else:
        state = QuadState.from_vector(sample_states(cfg, quad, [rng])[0])
    x = state.to_vector()
    if progress is None:
        progress = int(next_gate_from_position(cfg, x[0:3])[0]) if cfg.task == "racing" else 0
    return state, observe(cfg, x, progress)


def sample_states(cfg: TaskConfig, quad: QuadParams, rngs) -> np.ndarray:
    """One uniformly sampled start state per generator in ``rngs``."""
    X = np.zeros((len(rngs), STATE_DIM))
    w = quad.hover_rotor_speed
    for i, rng in enumerate(rngs):
        pos = rng.uniform(cfg.init_low, cfg.init_high)
        roll, pitch = rng.uniform(-cfg.init_tilt, cfg.init_tilt, size=2)
        yaw = rng.uniform(-cfg.init_yaw, cfg.init_yaw)
        vel = rng.uniform(-cfg.init_speed, cfg.init_speed, size=3)
        rate = rng.uniform(-cfg.init_rate, cfg.init_rate, size=3)
        X[i, 0:3] = pos
        X[i, 3:6] = vel
        X[i, 6:10] = quat_from_euler(roll, pitch, yaw)
        X[i, 10:13] = rate
        X[i, 13:17] = w
        X[i, 21:24] = rate
    return X


def in_init_region(cfg: TaskConfig, X) -> np.ndarray:
    X = np.atleast_2d(X)
    tol = 1e-12
    ok = ((X[:, 0:3] >= np.asarray(cfg.init_low) - tol) & (X[:, 0:3] <= np.asarray(cfg.init_high) + tol)).all(1)
    ok &= (np.abs(X[:, 3:6]) <= cfg.init_speed + tol).all(1)
    ok &= (np.abs(X[:, 10:13]) <= cfg.init_rate + tol).all(1)
    return ok


# --------------------------------------------------------------------------
# batched environment

@dataclass
class StepResult:
    obs: object
    r_diff: ad.Var
    r_nondiff: np.ndarray
    done: np.ndarray
    success: np.ndarray
    passed: np.ndarray


class TaskEnv:
    """A batch of independent environments of one task."""

    def __init__(self, cfg: TaskConfig, quad: QuadParams, num_envs: int, seed: int = 0, kernel=None):
        self.cfg = cfg
        self.quad = quad
        self.num_envs = num_envs
        self.kernel = kernel
        self.rngs = [np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, i)))
                     for i in range(num_envs)]
        self.states = np.zeros((num_envs, STATE_DIM))
        self.progress = np.zeros(num_envs, dtype=np.int64)
        self.steps = np.zeros(num_envs, dtype=np.int64)
        self.gates = np.zeros(num_envs, dtype=np.int64)
        self.reset_log: list | None = None  # set to [] to record episode start states
        self.reset_envs(np.arange(num_envs))

    @property
    def obs_dim(self) -> int:
        return self.cfg.obs_dim

    def reset_envs(self, idx, states: np.ndarray | None = None):
        """Reset the listed envs, from given states or freshly sampled ones."""
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size == 0:
            return
        if states is None:
            states = sample_states(self.cfg, self.quad, [self.rngs[i] for i in idx])
        self.states[idx] = states
        if self.reset_log is not None:
            self.reset_log.append(np.array(states))
        self.steps[idx] = 0
        self.gates[idx] = 0
        if self.cfg.task == "racing":
            self.progress[idx] = next_gate_from_position(self.cfg, states[:, 0:3])
        else:
            self.progress[idx] = 0

    def observe(self, X, progress=None):
        return observe(self.cfg, X, self.progress if progress is None else progress)

    def step(self, X: ad.Var, A: ad.Var):
        """Advance every env; returns (next state Var, StepResult).  Progress
        and step counters are updated; terminated envs are not reset here."""
        Y = step_var(X, A, self.quad, kernel=self.kernel)
        x0, y = np.asarray(ad._val(X)), Y.value
        passed = np.zeros(self.num_envs, dtype=bool)
        prog = self.progress.copy()
        if self.cfg.task == "racing":
            poses = np.asarray(self.cfg.gate_poses)[prog]
            passed = _gate_passed_batch(x0[:, 0:3], y[:, 0:3], poses, self.cfg.gate_halfwidth)
            self.progress = np.where(passed, (prog + 1) % 4, prog)
            self.gates += passed
        self.steps += 1
        done, success = check_done(self.cfg, y, self.steps)
        r_diff, r_nd = reward(self.cfg, Y, A, prog, passed=passed,
                              success=(success & done) if self.cfg.task == "landing" else None)
        self.states = y.copy()
        return Y, StepResult(None, r_diff, r_nd, done, success, passed)
