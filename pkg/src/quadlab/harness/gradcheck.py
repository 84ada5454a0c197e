"""Central finite-difference checks of tape gradients.

Each trial compares the tape gradient of a random linear functional of a
component's output against central differences; the error of a trial is
||g_tape - g_fd|| / max(||g_tape||, ||g_fd||, 1e-8) over all inputs checked.
"""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..dynamics import QuadParams, step_batch, step_var
from ..dynamics.params import STATE_DIM
from ..nets import LOG_STD_MAX, LOG_STD_MIN, init_actor, init_mlp, mlp_forward, policy_sample
from ..tasks import TaskConfig, observe, reward, sample_states, task_targets

COMPONENTS = ("dynamics", "reward", "mlp", "end2end")
THRESHOLD = 1e-4
DEFAULT_TRIALS = {"dynamics": 100, "reward": 100, "mlp": 100, "end2end": 5}


def rel_error(g, fd) -> float:
    g, fd = np.ravel(g), np.ravel(fd)
    denom = max(np.linalg.norm(g), np.linalg.norm(fd), 1e-8)
    return float(np.linalg.norm(g - fd) / denom)


def random_states(rng: np.random.Generator, n: int, quad: QuadParams) -> np.ndarray:
    """Generic (not hover-tuned) states away from the clamp and sign kinks."""
    X = np.zeros((n, STATE_DIM))
    X[:, 0:3] = rng.uniform(-2, 2, (n, 3))
    X[:, 3:6] = rng.uniform(-2, 2, (n, 3))
    q = rng.normal(size=(n, 4))
    X[:, 6:10] = q / np.linalg.norm(q, axis=1, keepdims=True)
    X[:, 10:13] = rng.uniform(-3, 3, (n, 3))
    X[:, 13:17] = quad.hover_rotor_speed * rng.uniform(0.6, 1.4, (n, 4))
    X[:, 17:21] = rng.uniform(-0.5, 0.5, (n, 4))
    X[:, 21:24] = rng.uniform(-3, 3, (n, 3))
    return X


def _fd_rows(f, Z, eps):
    """Row-wise central differences of scalar-per-row ``f`` over the columns of Z."""
    G = np.zeros_like(Z)
    for j in range(Z.shape[1]):
        Zp, Zm = Z.copy(), Z.copy()
        Zp[:, j] += eps
        Zm[:, j] -= eps
        G[:, j] = (f(Zp) - f(Zm)) / (2 * eps)
    return G


def check_dynamics(trials, eps, rng, quad=None, kernel=None):
    quad = quad or QuadParams()
    X = random_states(rng, trials, quad)
    A = rng.uniform(-0.8, 0.8, (trials, 4))
    W = rng.normal(size=(trials, STATE_DIM))
    tape = ad.Tape()
    xv, av = ad.lift(X, tape), ad.lift(A, tape)
    Y = step_var(xv, av, quad, kernel=kernel)
    grads = ad.backward(tape, Y, seed=W)
    g = np.concatenate([ad.grad_of(grads, xv), ad.grad_of(grads, av)], axis=1)

    def f(Z):
        return (step_batch(Z[:, :STATE_DIM], Z[:, STATE_DIM:], quad, kernel=kernel) * W).sum(axis=1)

    fd = _fd_rows(f, np.concatenate([X, A], axis=1), eps)
    return max(rel_error(g[i], fd[i]) for i in range(trials))


def _reward_cases():
    cases = [TaskConfig.preset(t) for t in ("hovering", "tracking", "landing", "racing")]
    cases += [TaskConfig.preset("racing", reward_variant=v) for v in ("velocity", "relaxed_log", "relaxed_exp")]
    return cases


def check_reward(trials, eps, rng, quad=None):
    quad = quad or QuadParams()
    worst = 0.0
    for cfg in _reward_cases():
        X = random_states(rng, trials, quad)
        A = rng.uniform(-0.8, 0.8, (trials, 4))
        progress = rng.integers(0, 4, trials)
        tgt, _ = task_targets(cfg, X, progress)
        w = rng.normal(size=trials)
        tape = ad.Tape()
        xv = ad.lift(X, tape)
        r, _ = reward(cfg, xv, A, progress, target=tgt)
        g = ad.grad_of(ad.backward(tape, r, seed=w), xv)

        def f(Z):
            return np.asarray(reward(cfg, Z, A, progress, target=tgt)[0].value) * w

        fd = _fd_rows(f, X, eps)
        worst = max(worst, max(rel_error(g[i], fd[i]) for i in range(trials)))
    return worst


def check_mlp(trials, eps, rng, widths=(5, 8, 8, 3)):
    worst = 0.0
    for _ in range(trials):
        net = init_mlp(rng, list(widths), activation=rng.choice(["tanh", "elu"]))
        net = net.with_arrays([a + 0.1 * rng.normal(size=a.shape) for a in net.arrays])
        x = rng.normal(size=(4, widths[0]))
        w = rng.normal(size=(4, widths[-1]))
        tape = ad.Tape()
        lifted = net.lift(tape)
        xv = ad.lift(x, tape)
        out = mlp_forward(lifted, xv)
        grads = ad.backward(tape, out, seed=w)
        g = np.concatenate([a.ravel() for a in lifted.grads(grads)] + [np.ravel(ad.grad_of(grads, xv))])
        flat = np.concatenate([a.ravel() for a in net.arrays] + [x.ravel()])
        shapes = [a.shape for a in net.arrays]

        def f(z):
            arrs, pos = [], 0
            for s in shapes:
                k = int(np.prod(s))
                arrs.append(z[pos:pos + k].reshape(s))
                pos += k
            return float((np.asarray(mlp_forward(net.with_arrays(arrs), z[pos:].reshape(x.shape)).value) * w).sum())

        fd = np.zeros_like(flat)
        for j in range(flat.size):
            zp, zm = flat.copy(), flat.copy()
            zp[j] += eps
            zm[j] -= eps
            fd[j] = (f(zp) - f(zm)) / (2 * eps)
        worst = max(worst, rel_error(g, fd))
    return worst


def rollout_return(actor, task, quad, X0, noise, steps, kernel=None, tape=None):
    """Sum over envs and steps of the differentiable reward (gradient w.r.t. the actor)."""
    X = ad.constant(X0)
    total = 0.0
    for t in range(steps):
        obs = observe(task, X)
        a = policy_sample(actor, obs, noise[t], tape).action
        X = step_var(X, a, quad, kernel=kernel)
        total = total + reward(task, X, a)[0].sum()
    return ad.as_var(total)


def _fd_actor_params(actor, task, quad, X0, noise, steps, eps, kernel=None):
    """Central differences of the rollout return w.r.t. every actor parameter.
    All 2P perturbed actors run as one batch, each with its own weights."""
    arrs = actor.arrays
    sizes = [a.size for a in arrs]
    P = sum(sizes)
    flat = np.concatenate([a.ravel() for a in arrs])
    stack = np.tile(flat, (2 * P, 1))
    stack[np.arange(P), np.arange(P)] += eps
    stack[P + np.arange(P), np.arange(P)] -= eps
    pieces = np.split(stack, np.cumsum(sizes)[:-1], axis=1)
    params = [pc.reshape((2 * P,) + a.shape) for pc, a in zip(pieces, arrs)]
    act = ad.tanh if actor.activation == "tanh" else ad.elu
    E = X0.shape[0]
    X = np.tile(X0, (2 * P, 1))
    total = np.zeros(2 * P)
    n_layers = len(params) // 2
    for t in range(steps):
        h = np.asarray(observe(task, X)).reshape(2 * P, E, -1)
        for k in range(n_layers):
            h = np.einsum("pei,pij->pej", h, params[2 * k]) + params[2 * k + 1][:, None, :]
            if k < n_layers - 1:
                h = np.asarray(act(h).value)
        mu, log_std = h[..., :4], np.minimum(np.maximum(h[..., 4:], LOG_STD_MIN), LOG_STD_MAX)
        a = np.tanh(mu + np.exp(log_std) * noise[t][None]).reshape(2 * P * E, 4)
        X = step_batch(X, a, quad, kernel=kernel)
        total += np.asarray(reward(task, X, a)[0].value).reshape(2 * P, E).sum(axis=1)
    return (total[:P] - total[P:]) / (2 * eps)


def check_end2end(trials, eps, rng, quad=None, steps=5, kernel=None):
    quad = quad or QuadParams()
    task = TaskConfig.preset("hovering")
    worst = 0.0
    for _ in range(trials):
        actor = init_actor(rng, task.obs_dim, 4, hidden=(16, 16))
        actor = actor.with_arrays([a + 0.05 * rng.normal(size=a.shape) for a in actor.arrays])
        X0 = sample_states(task, quad, [rng, rng])
        noise = rng.normal(size=(steps, 2, 4))
        tape = ad.Tape()
        lifted = actor.lift(tape)
        J = rollout_return(lifted, task, quad, X0, noise, steps, kernel)
        g = np.concatenate([a.ravel() for a in lifted.grads(ad.backward(tape, J))])
        fd = _fd_actor_params(actor, task, quad, X0, noise, steps, eps, kernel)
        worst = max(worst, rel_error(g, np.array(fd)))
    return worst


def fd_gradcheck(component: str, trials: int | None = None, eps: float = 1e-6, seed: int = 0,
                 kernel=None) -> float:
    """Max relative error over ``trials`` random instances of ``component``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if component not in COMPONENTS:
        raise ValueError(f"unknown component {component!r}")
    trials = DEFAULT_TRIALS[component] if trials is None else int(trials)
    rng = np.random.default_rng(seed)
    if component == "dynamics":
        return check_dynamics(trials, eps, rng, kernel=kernel)
    if component == "reward":
        return check_reward(trials, eps, rng)
    if component == "mlp":
        return check_mlp(trials, eps, rng)
    return check_end2end(trials, eps, rng, kernel=kernel)
