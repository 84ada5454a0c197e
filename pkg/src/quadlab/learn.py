"""First-order training: BPTT, SHAC-style truncated actor-critic, and ABPT.

One training episode = |B| rollouts of N steps on a fresh tape, one actor
step on the chosen objective, then C critic regression steps toward TD(lambda)
targets with a soft-updated target critic.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .dynamics import QuadParams, step_batch
from .dynamics.params import STATE_DIM
from .nets import Adam, MlpParams, init_actor, init_critic, mlp_forward, policy_sample, q_forward, soft_update
from .tasks import TaskConfig, TaskEnv, check_done, next_gate_from_position, observe, reward, sample_states
from .tasks import _gate_passed_batch

ALGORITHMS = ("bptt", "shac", "abpt")

# generator purposes: SeedSequence(seed, spawn_key=(purpose, index))
RNG_INIT, RNG_ENV, RNG_NOISE, RNG_BUFFER, RNG_EVAL, RNG_CRITIC = range(6)


@dataclass
class LearnConfig:
    algorithm: str = "abpt"
    gamma: float = 0.99
    lam: float = 0.95
    horizon: int = 32
    batch: int = 64
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    critic_steps: int = 8
    critic_minibatch: int = 512
    soft_tau: float = 0.005
    total_timesteps: int = 2_000_000
    lr_decay: str = "none"
    use_zero_step: bool = True
    use_buffer_init: bool = True
    use_n_step: bool = True
    seed: int = 0
    buffer_capacity: int = 1_000_000
    fresh_reset_fraction: float = 0.2
    grad_clip: float = 1.0
    actor_hidden: tuple = (128, 128)
    critic_hidden: tuple = (128, 128)
    activation: str = "tanh"
    init_log_std: float = -1.0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.lr_decay not in ("none", "linear"):
            raise ValueError(f"unknown lr_decay {self.lr_decay!r}")
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise ValueError("gamma and lambda must lie in [0, 1]")
        if self.horizon < 1 or self.batch < 1 or self.critic_steps < 1:
            raise ValueError("horizon, batch and critic_steps must be >= 1")
        if self.total_timesteps < self.batch * self.horizon:
            raise ValueError("total_timesteps must cover at least one batch * horizon episode")
        if self.algorithm == "abpt" and not (self.use_zero_step or self.use_n_step):
            raise ValueError("abpt needs at least one of use_zero_step / use_n_step")
        self.actor_hidden = tuple(int(h) for h in self.actor_hidden)
        self.critic_hidden = tuple(int(h) for h in self.critic_hidden)

    @property
    def zero_step(self) -> bool:
        return self.algorithm == "abpt" and self.use_zero_step

    @property
    def n_step(self) -> bool:
        return self.algorithm != "abpt" or self.use_n_step

    @property
    def buffer_init(self) -> bool:
        return self.algorithm == "abpt" and self.use_buffer_init

    @property
    def uses_critic(self) -> bool:
        return self.algorithm != "bptt"


@dataclass
class RolloutBatch:
    """Horizon of |B| trajectories.  Index t runs over transitions; obs and
    actions have N + 1 entries (the last pair feeds the bootstrap)."""

    states: np.ndarray            # (N + 1, B, 24)
    obs: list                     # N + 1 Vars (B, obs_dim); obs[0] is constant
    actions: list                 # N + 1 Vars (B, 4)
    r_diff: list                  # N Vars (B,)
    r_nondiff: np.ndarray         # (N, B)
    done: np.ndarray              # (N, B) bool
    alive: np.ndarray             # (N, B) 1.0 up to and including the first done
    terminal: np.ndarray          # (B,) episode ended inside the horizon
    success: np.ndarray           # (N, B) bool
    passed: np.ndarray            # (N, B) bool

    @property
    def horizon(self) -> int:
        return len(self.r_diff)

    @property
    def lengths(self) -> np.ndarray:
        return self.alive.sum(axis=0).astype(np.int64)

    def total_rewards(self) -> np.ndarray:
        return np.stack([np.asarray(r.value) for r in self.r_diff]) + self.r_nondiff


class StateBuffer:
    """Ring buffer of visited states, used only to pick episode starts."""

    def __init__(self, capacity: int, dim: int = STATE_DIM):
        self.capacity = int(capacity)
        self.dim = dim
        self._data = np.empty((min(self.capacity, 4096), dim))
        self.size = 0
        self.cursor = 0

    def __len__(self):
        return self.size

    def add(self, states: np.ndarray):
        states = np.asarray(states, dtype=np.float64).reshape(-1, self.dim)
        if len(states) > self.capacity:
            states = states[-self.capacity:]
        need = min(self.capacity, self.size + len(states))
        if need > len(self._data):
            grown = np.empty((min(self.capacity, max(need, 2 * len(self._data))), self.dim))
            grown[:self.size] = self._data[:self.size]
            self._data = grown
        n = len(states)
        idx = (self.cursor + np.arange(n)) % self.capacity
        self._data[idx] = states
        self.cursor = (self.cursor + n) % self.capacity
        self.size = min(self.capacity, self.size + n)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.size == 0:
            raise ValueError("sampling from an empty state buffer")
        return self._data[rng.integers(0, self.size, size=n)].copy()

    @property
    def states(self) -> np.ndarray:
        return self._data[:self.size]


# --------------------------------------------------------------------------
# rollouts

def collect_rollout(actor, env: TaskEnv, N: int, buffer: StateBuffer | None, cfg: LearnConfig,
                    noise: np.ndarray, tape: ad.Tape, reset_rng: np.random.Generator | None = None,
                    record: bool = True) -> RolloutBatch:
    """Roll the batch of envs N steps from their current states.

    ``actor`` is a LiftedMlp on ``tape``.  ``noise`` has shape (N + 1, B, 4).
    Every start-of-transition state is written to ``buffer``.  Envs whose
    episode ends inside the horizon are reset immediately (from the buffer
    when buffer initialization is on); their later rewards are masked.
    """
    B = env.num_envs
    X = ad.constant(env.states.copy())
    states = [env.states.copy()]
    obs_list, act_list, r_list = [], [], []
    r_nd = np.zeros((N, B))
    done = np.zeros((N, B), dtype=bool)
    succ = np.zeros((N, B), dtype=bool)
    passed = np.zeros((N, B), dtype=bool)
    alive = np.zeros((N, B))
    still = np.ones(B)
    for t in range(N):
        obs = env.observe(X)
        pol = policy_sample(actor, obs, noise[t])
        obs_list.append(obs)
        act_list.append(pol.action)
        Y, res = env.step(X, pol.action)
        r_list.append(res.r_diff)
        r_nd[t] = res.r_nondiff
        done[t], succ[t], passed[t] = res.done, res.success & res.done, res.passed
        alive[t] = still
        still = still * (1.0 - res.done)
        if res.done.any():
            idx = np.flatnonzero(res.done)
            env.reset_envs(idx, _restart_states(env, idx, buffer, cfg, reset_rng))
            m = np.zeros((B, 1))
            m[idx] = 1.0
            Y = Y * (1.0 - m) + ad.constant(env.states * m)
        X = Y
        states.append(env.states.copy())
    obs_N = env.observe(X)
    pol_N = policy_sample(actor, obs_N, noise[N])
    obs_list.append(obs_N)
    act_list.append(pol_N.action)
    batch = RolloutBatch(np.stack(states), obs_list, act_list, r_list, r_nd, done, alive,
                         done.any(axis=0), succ, passed)
    if record and buffer is not None:
        buffer.add(batch.states[:-1].reshape(-1, STATE_DIM))
    return batch


def _restart_states(env: TaskEnv, idx, buffer, cfg: LearnConfig, rng):
    if not cfg.buffer_init or buffer is None or len(buffer) == 0 or rng is None:
        return None
    fresh = sample_states(env.cfg, env.quad, [env.rngs[i] for i in idx])
    from_buf = buffer.sample(rng, len(idx))
    use_fresh = rng.random(len(idx)) < cfg.fresh_reset_fraction
    return np.where(use_fresh[:, None], fresh, from_buf)


# --------------------------------------------------------------------------
# objectives

def n_step_return(rewards, bootstrap_q, gamma: float, terminal, alive=None):
    """sum_k gamma^k r_k + (1 - d) gamma^N Q(s_N, a_N), per trajectory.

    ``rewards`` is a sequence of per-step values (Vars or arrays);
    ``bootstrap_q`` may be None (no bootstrap).
    """
    total = 0.0
    for k, r in enumerate(rewards):
        w = gamma**k if alive is None else gamma**k * np.asarray(alive[k])
        total = total + r * w
    if bootstrap_q is not None:
        total = total + bootstrap_q * ((1.0 - np.asarray(terminal, dtype=np.float64)) * gamma ** len(rewards))
    return ad.as_var(total)


def zero_step_return(critic: MlpParams, obs0, a0):
    """Q(s_0, a_0) with the critic held fixed; gradient reaches the actor via a_0."""
    return q_forward(critic, obs0, a0)


def actor_objective(batch: RolloutBatch, critic: MlpParams | None, cfg: LearnConfig):
    """Per-trajectory objective (to be maximized), before batch averaging."""
    N = batch.horizon
    if cfg.algorithm == "bptt":
        return n_step_return(batch.r_diff, None, cfg.gamma, batch.terminal, batch.alive)
    terms = []
    if cfg.n_step:
        q_boot = q_forward(critic, batch.obs[N], batch.actions[N])
        terms.append(n_step_return(batch.r_diff, q_boot, cfg.gamma, batch.terminal, batch.alive))
    if cfg.zero_step:
        terms.append(zero_step_return(critic, batch.obs[0], batch.actions[0]))
    if len(terms) == 2:
        return (terms[0] + terms[1]) * 0.5
    return terms[0]


def actor_loss(batch: RolloutBatch, critic: MlpParams | None, cfg: LearnConfig):
    """Negated batch-mean objective, ready for a descent step."""
    return -ad.mean(actor_objective(batch, critic, cfg))


def lambda_returns(rewards, next_q, gamma: float, lam: float, terminal=False, length=None):
    """TD(lambda) targets for one trajectory.

    ``rewards[t]`` is r_t and ``next_q[t]`` is Q(s_{t+1}, a_{t+1}) for
    t < length.  The bootstrap after the last step is dropped when
    ``terminal``.  Returns targets for t < length.
    """
    r = np.asarray(rewards, dtype=np.float64)
    q = np.asarray(next_q, dtype=np.float64)
    L = len(r) if length is None else int(length)
    out = np.zeros(L)
    if L == 0:
        return out
    out[L - 1] = r[L - 1] + gamma * (0.0 if terminal else 1.0) * q[L - 1]
    for t in range(L - 2, -1, -1):
        out[t] = r[t] + gamma * ((1.0 - lam) * q[t] + lam * out[t + 1])
    return out


def lambda_returns_batch(rewards, next_q, gamma, lam, terminal, lengths):
    """Vectorized :func:`lambda_returns` over trajectories: arrays are (N, B)."""
    r = np.asarray(rewards, dtype=np.float64)
    q = np.asarray(next_q, dtype=np.float64)
    N, B = r.shape
    lengths = np.asarray(lengths)
    boot = 1.0 - np.asarray(terminal, dtype=np.float64)
    out = np.zeros((N, B))
    nxt = np.zeros(B)
    for t in range(N - 1, -1, -1):
        last = r[t] + gamma * boot * q[t]
        rec = r[t] + gamma * ((1.0 - lam) * q[t] + lam * nxt)
        val = np.where(lengths - 1 == t, last, np.where(t < lengths, rec, 0.0))
        out[t] = val
        nxt = val
    return out


def td_lambda_targets(batch: RolloutBatch, target_critic: MlpParams, gamma: float, lam: float) -> np.ndarray:
    """(N, B) critic targets; entries past each trajectory's end are zero.

    Rewards include the non-differentiable part.
    """
    N = batch.horizon
    obs = np.stack([np.asarray(o.value) for o in batch.obs[1:]])
    act = np.stack([np.asarray(a.value) for a in batch.actions[1:]])
    q_next = np.asarray(q_forward(target_critic, obs, act).value)
    return lambda_returns_batch(batch.total_rewards(), q_next, gamma, lam, batch.terminal, batch.lengths)


def critic_loss(critic, obs, actions, targets, tape: ad.Tape | None = None):
    """Mean squared error of Q(s, a) against constant targets."""
    q = q_forward(critic, obs, actions, tape)
    err = q - np.asarray(targets, dtype=np.float64)
    return ad.mean(err * err)


def lr_schedule(cfg: LearnConfig, progress: float):
    if not 0.0 <= progress <= 1.0:
        raise ValueError("progress must lie in [0, 1]")
    if cfg.lr_decay == "none":
        return cfg.actor_lr, cfg.critic_lr
    f = max(1.0 - progress, 0.1)
    return cfg.actor_lr * f, cfg.critic_lr * f


def _global_norm(arrs) -> float:
    return float(math.sqrt(sum(float(np.sum(a * a)) for a in arrs)))


# --------------------------------------------------------------------------
# trainer

def _rng(seed, purpose, index=0):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(purpose, index)))


class Trainer:
    """Owns networks, optimizers, envs and the visited-state buffer for one seed."""

    def __init__(self, task: TaskConfig, quad: QuadParams, cfg: LearnConfig, kernel=None,
                 wall_clock: bool = True):
        task.validate_against(cfg.horizon)
        self.task, self.quad, self.cfg = task, quad, cfg
        self.kernel = kernel
        self.wall_clock = wall_clock
        seed = cfg.seed
        init_rng = _rng(seed, RNG_INIT)
        self.env = TaskEnv(task, quad, cfg.batch, seed=seed, kernel=kernel)
        od, ad_ = task.obs_dim, 4
        self.actor = init_actor(init_rng, od, ad_, cfg.actor_hidden, cfg.activation, cfg.init_log_std)
        self.critic = init_critic(init_rng, od, ad_, cfg.critic_hidden, cfg.activation)
        self.target = self.critic.copy()
        self.actor_opt = Adam([a.shape for a in self.actor.arrays])
        self.critic_opt = Adam([a.shape for a in self.critic.arrays])
        self.buffer = StateBuffer(cfg.buffer_capacity)
        self.noise_rngs = [_rng(seed, RNG_NOISE, i) for i in range(cfg.batch)]
        self.buffer_rng = _rng(seed, RNG_BUFFER)
        self.critic_rng = _rng(seed, RNG_CRITIC)
        self.timestep = 0
        self.episode = 0
        self.elapsed = 0.0
        self._success = 0.0

    def _draw_noise(self, N):
        return np.stack([r.standard_normal((N + 1, 4)) for r in self.noise_rngs], axis=1)

    def _horizon_starts(self):
        """Alg. 1 line 4: every horizon starts from buffered states when enabled."""
        cfg = self.cfg
        if not cfg.buffer_init or len(self.buffer) == 0:
            return
        B = cfg.batch
        fresh = sample_states(self.task, self.quad, self.env.rngs)
        from_buf = self.buffer.sample(self.buffer_rng, B)
        use_fresh = self.buffer_rng.random(B) < cfg.fresh_reset_fraction
        self.env.reset_envs(np.arange(B), np.where(use_fresh[:, None], fresh, from_buf))

    def train_episode(self) -> dict:
        cfg = self.cfg
        t0 = time.perf_counter()
        progress = min(self.timestep / max(cfg.total_timesteps, 1), 1.0)
        actor_lr, critic_lr = lr_schedule(cfg, progress)
        self._horizon_starts()

        tape = ad.Tape()
        lifted = self.actor.lift(tape)
        N = cfg.horizon
        batch = collect_rollout(lifted, self.env, N, self.buffer, cfg, self._draw_noise(N), tape,
                                reset_rng=self.buffer_rng)
        loss = actor_loss(batch, self.critic if cfg.uses_critic else None, cfg)
        grads = lifted.grads(ad.backward(tape, loss))
        if not np.isfinite(loss.value):
            raise FloatingPointError(f"actor loss is non-finite at episode {self.episode}")
        gnorm = _global_norm(grads)
        if cfg.grad_clip > 0 and gnorm > cfg.grad_clip:
            grads = [g * (cfg.grad_clip / gnorm) for g in grads]
        self.actor = self.actor.with_arrays(self.actor_opt.step(self.actor.arrays, grads, actor_lr))
        tape.reset()

        c_loss = float("nan")
        if cfg.uses_critic:
            c_loss = self.train_critic(batch, critic_lr)

        self.timestep += cfg.batch * N
        self.episode += 1
        if self.wall_clock:
            self.elapsed += time.perf_counter() - t0

        total = batch.total_rewards()
        ret = (total * batch.alive).sum(axis=0)
        n_done = batch.done.sum()
        if n_done:
            self._success = float(batch.success.sum() / n_done)
        return {
            "timestep": self.timestep,
            "wall_time_s": self.elapsed,
            "mean_return": float(ret.mean()),
            "success_rate": self._success,
            "gates_passed": float(batch.passed.sum(axis=0).mean()),
            "actor_grad_norm": gnorm,
            "critic_loss": c_loss,
        }

    def train_critic(self, batch: RolloutBatch, lr: float) -> float:
        cfg = self.cfg
        targets = td_lambda_targets(batch, self.target, cfg.gamma, cfg.lam)
        valid = batch.alive > 0
        obs = np.stack([np.asarray(o.value) for o in batch.obs[:-1]])[valid]
        act = np.stack([np.asarray(a.value) for a in batch.actions[:-1]])[valid]
        tgt = targets[valid]
        losses = []
        n, mb = len(tgt), cfg.critic_minibatch
        for _ in range(cfg.critic_steps):
            sel = self.critic_rng.choice(n, mb, replace=False) if 0 < mb < n else slice(None)
            tape = ad.Tape()
            lifted = self.critic.lift(tape)
            loss = critic_loss(lifted, obs[sel], act[sel], tgt[sel])
            g = lifted.grads(ad.backward(tape, loss))
            if not np.isfinite(loss.value):
                raise FloatingPointError(f"critic loss is non-finite at episode {self.episode}")
            self.critic = self.critic.with_arrays(self.critic_opt.step(self.critic.arrays, g, lr))
            self.target = soft_update(self.target, self.critic, cfg.soft_tau)
            losses.append(float(loss.value))
        return float(np.mean(losses))

    def evaluate(self, episodes: int = 10, seed: int | None = None, tail: int = 50) -> dict:
        """Run full episodes with the mean action from fresh starts."""
        return evaluate_policy(self.actor, self.task, self.quad, episodes,
                               seed=(self.cfg.seed if seed is None else seed), tail=tail, kernel=self.kernel)


def evaluate_policy(actor: MlpParams, task: TaskConfig, quad: QuadParams, episodes: int = 10, seed: int = 0,
                    tail: int = 50, kernel=None) -> dict:
    """Deterministic evaluation.  ``pos_error`` is the mean distance to the
    task's primary target over the last ``tail`` live steps of each episode."""
    rngs = [_rng(seed, RNG_EVAL, i) for i in range(episodes)]
    X = sample_states(task, quad, rngs)
    progress = next_gate_from_position(task, X[:, 0:3]) if task.task == "racing" else np.zeros(episodes, int)
    live = np.ones(episodes, dtype=bool)
    ret = np.zeros(episodes)
    gates = np.zeros(episodes)
    success = np.zeros(episodes, dtype=bool)
    errs = []
    from .tasks import task_targets
    for t in range(task.episode_len):
        obs = observe(task, X, progress)
        mu = np.asarray(mlp_forward(actor, obs).value)[:, :4]
        A = np.tanh(mu)
        Y = step_batch(X, A, quad, kernel=kernel)
        tgt, _ = task_targets(task, X, progress)
        passed = np.zeros(episodes, dtype=bool)
        if task.task == "racing":
            poses = np.asarray(task.gate_poses)[progress]
            passed = _gate_passed_batch(X[:, 0:3], Y[:, 0:3], poses, task.gate_halfwidth)
        done, succ = check_done(task, Y, np.full(episodes, t + 1))
        r_d, r_nd = reward(task, Y, A, progress, passed=passed,
                           success=(succ & done) if task.task == "landing" else None)
        ret += live * (np.asarray(r_d.value) + r_nd)
        gates += live * passed
        err = np.linalg.norm(Y[:, 0:3] - tgt, axis=1)
        errs.append(np.where(live, err, np.nan))
        success |= live & done & succ
        progress = np.where(passed, (progress + 1) % 4, progress)
        live &= ~done
        X = Y
        if not live.any():
            break
    E = np.array(errs)
    pos_err = []
    for i in range(episodes):
        e = E[:, i]
        e = e[~np.isnan(e)]
        pos_err.append(float(e[-tail:].mean()) if len(e) else float("nan"))
    return {
        "mean_return": float(ret.mean()),
        "success_rate": float(success.mean()),
        "gates_passed": float(gates.mean()),
        "pos_error": float(np.mean(pos_err)),
        "pos_errors": pos_err,
    }


# --------------------------------------------------------------------------
# synthetic one-step task

def one_step_gradients(bonus: float, critic_steps: int = 100, seed: int = 0, batch: int = 16) -> dict:
    """Actor gradients on a one-step task with reward -(a_0 - 0.5)^2 on the
    tape plus ``bonus * [a_0 > 0]`` off it.

    Returns ``bptt`` and ``abpt`` loss gradients (lists of arrays, one per
    actor tensor) and the fitted critic.  The critic is regressed on the full
    reward over uniformly drawn actions before the abpt gradient is taken.
    """
    rng = _rng(seed, RNG_INIT)
    obs_dim = 3
    actor = init_actor(rng, obs_dim, 4, hidden=(8,))
    critic = init_critic(rng, obs_dim, 4, hidden=(16, 16))
    obs0 = rng.normal(size=(batch, obs_dim))
    noise = rng.standard_normal((2, batch, 4))

    fit_obs = obs0[rng.integers(0, batch, 256)]
    fit_act = rng.uniform(-1.0, 1.0, (256, 4))
    fit_y = -(fit_act[:, 0] - 0.5) ** 2 + bonus * (fit_act[:, 0] > 0)
    opt = Adam([a.shape for a in critic.arrays])
    for _ in range(critic_steps):
        tape = ad.Tape()
        lifted = critic.lift(tape)
        g = lifted.grads(ad.backward(tape, critic_loss(lifted, fit_obs, fit_act, fit_y)))
        critic = critic.with_arrays(opt.step(critic.arrays, g, 1e-2))

    def grads(algorithm):
        tape = ad.Tape()
        lifted = actor.lift(tape)
        obs = ad.constant(obs0)
        a0 = policy_sample(lifted, obs, noise[0]).action
        a1 = policy_sample(lifted, obs, noise[1]).action
        d = a0[:, 0] - 0.5
        r_nd = bonus * (a0.value[:, 0] > 0)
        ones = np.ones((1, batch))
        rb = RolloutBatch(np.zeros((2, batch, STATE_DIM)), [obs, obs], [a0, a1], [-(d * d)], r_nd[None],
                          ones.astype(bool), ones, np.ones(batch, dtype=bool), np.zeros((1, batch), dtype=bool),
                          np.zeros((1, batch), dtype=bool))
        loss = actor_loss(rb, critic, LearnConfig(algorithm=algorithm, horizon=1))
        return lifted.grads(ad.backward(tape, loss))

    return {"bptt": grads("bptt"), "abpt": grads("abpt"), "critic": critic, "actor": actor,
            "obs": obs0, "noise": noise}
