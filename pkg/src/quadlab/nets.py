"""Small MLPs on the tape, the squashed-Gaussian actor, the Q critic and Adam."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
CHECKPOINT_MAGIC = "quadlab-mlp"
CHECKPOINT_VERSION = 1

_ACTIVATIONS = {"tanh": ad.tanh, "elu": ad.elu}


class ShapeError(ValueError):
    pass


@dataclass
class MlpParams:
    weights: list  # (n_in, n_out) arrays
    biases: list
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ShapeError(f"layer {i}: weight {W.shape} / bias {b.shape} mismatch")
            if i and W.shape[0] != self.weights[i - 1].shape[1]:
                raise ShapeError(f"layer {i}: input width {W.shape[0]} does not chain")

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def with_arrays(self, arrays) -> "MlpParams":
        return MlpParams([np.array(a) for a in arrays[0::2]], [np.array(a) for a in arrays[1::2]],
                         self.activation)

    def copy(self) -> "MlpParams":
        return self.with_arrays(self.arrays)

    def lift(self, tape: ad.Tape) -> "LiftedMlp":
        return LiftedMlp([ad.lift(a, tape) for a in self.arrays], self.activation)


@dataclass
class LiftedMlp:
    """Parameters placed on a tape as leaves, reusable across a whole rollout."""

    vars: list
    activation: str

    def grads(self, grads: list) -> list[np.ndarray]:
        return [np.asarray(ad.grad_of(grads, v), dtype=np.float64) for v in self.vars]


def init_mlp(rng: np.random.Generator, widths, activation="tanh", hidden_gain=np.sqrt(2.0),
             out_gain=1.0) -> MlpParams:
    """Orthogonal init scaled by ``hidden_gain`` (``out_gain`` on the last layer), zero biases."""
    Ws, bs = [], []
    for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        a = rng.normal(size=(max(n_in, n_out), min(n_in, n_out)))
        qm, r = np.linalg.qr(a)
        qm = qm * np.sign(np.diag(r))
        W = qm if n_in >= n_out else qm.T
        gain = out_gain if i == len(widths) - 2 else hidden_gain
        Ws.append(gain * W[:n_in, :n_out])
        bs.append(np.zeros(n_out))
    return MlpParams(Ws, bs, activation)


def mlp_forward(params, x, tape: ad.Tape | None = None):
    """Affine + activation chain; the final layer is linear.

    ``params`` may be an :class:`MlpParams` (lifted onto ``tape`` if given,
    else used as constants) or an already-lifted :class:`LiftedMlp`.
    """
    if isinstance(params, MlpParams):
        if tape is not None:
            params = params.lift(tape)
            arrs = params.vars
        else:
            arrs = params.arrays
        act_name = params.activation
    else:
        arrs, act_name = params.vars, params.activation
    act = _ACTIVATIONS[act_name]
    n_in = np.shape(ad._val(arrs[0]))[0]
    if np.shape(ad._val(x))[-1] != n_in:
        raise ShapeError(f"input width {np.shape(ad._val(x))[-1]} != {n_in}")
    h = x
    n_layers = len(arrs) // 2
    for i in range(n_layers):
        h = ad.matmul(h, arrs[2 * i]) + arrs[2 * i + 1]
        if i < n_layers - 1:
            h = act(h)
    return ad.as_var(h)


@dataclass
class PolicyOutput:
    mean: ad.Var
    log_std: ad.Var
    action: ad.Var
    pre_tanh: ad.Var


def policy_sample(actor, obs, noise, tape: ad.Tape | None = None) -> PolicyOutput:
    """Reparameterized squashed-Gaussian sample: tanh(mu + sigma * noise)."""
    out = mlp_forward(actor, obs, tape)
    n = out.shape[-1] // 2
    mu = out[..., :n]
    log_std = ad.minimum(ad.maximum(out[..., n:], LOG_STD_MIN), LOG_STD_MAX)
    pre = mu + ad.exp(log_std) * np.asarray(noise, dtype=np.float64)
    return PolicyOutput(mu, log_std, ad.tanh(pre), pre)


def init_actor(rng, obs_dim, act_dim, hidden=(128, 128), activation="tanh", init_log_std=-1.0) -> MlpParams:
    net = init_mlp(rng, [obs_dim, *hidden, 2 * act_dim], activation, out_gain=0.01)
    net.biases[-1][act_dim:] = init_log_std
    return net


def init_critic(rng, obs_dim, act_dim, hidden=(128, 128), activation="tanh") -> MlpParams:
    return init_mlp(rng, [obs_dim + act_dim, *hidden, 1], activation, out_gain=1.0)


def q_forward(critic, obs, action, tape: ad.Tape | None = None):
    """Q(s, a) as a Var of shape obs.shape[:-1]."""
    x = ad.concat([ad.as_var(obs), ad.as_var(action)], axis=-1)
    out = mlp_forward(critic, x, tape)
    return out[..., 0]


def soft_update(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    """(1 - tau) * target + tau * online, elementwise (written so that equal
    inputs stay bit-identical)."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    ta, oa = target.arrays, online.arrays
    if len(ta) != len(oa) or any(a.shape != b.shape for a, b in zip(ta, oa)):
        raise ShapeError("soft_update: parameter shapes differ")
    if tau == 1.0:
        return online.copy()
    return target.with_arrays([a + tau * (b - a) for a, b in zip(ta, oa)])


class Adam:
    """Adam with bias correction.  ``step`` descends; pass negated gradients
    (or a negated objective) to ascend."""

    def __init__(self, shapes, betas=(0.9, 0.999), eps=1e-8):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.betas = betas
        self.eps = eps
        self.t = 0

    def step(self, params: list, grads: list, lr: float) -> list:
        for i, g in enumerate(grads):
            if not np.isfinite(g).all():
                raise FloatingPointError(
                    f"Adam: non-finite gradient in tensor {i} (shape {np.shape(g)}); "
                    f"max |finite entry| = {np.nanmax(np.abs(np.where(np.isfinite(g), g, np.nan)), initial=0.0):.3g}")
        b1, b2 = self.betas
        self.t += 1
        c1, c2 = 1.0 - b1**self.t, 1.0 - b2**self.t
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            out.append(p - lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps))
        return out


def adam_step(params: list, grads: list, state: Adam, lr: float) -> list:
    return state.step(params, grads, lr)


# --------------------------------------------------------------------------
# checkpoints: portable text, exact float round trip via float.hex

def save_mlp(params: MlpParams, path):
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}", f"activation {params.activation}",
             f"layers {len(params.weights)}"]
    for W, b in zip(params.weights, params.biases):
        lines.append(f"weight {W.shape[0]} {W.shape[1]}")
        lines.append(" ".join(float(v).hex() for v in W.ravel()))
        lines.append(f"bias {b.shape[0]}")
        lines.append(" ".join(float(v).hex() for v in b.ravel()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mlp(path) -> MlpParams:
    with open(path) as fh:
        lines = fh.read().splitlines()
    head = lines[0].split()
    if len(head) != 2 or head[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an MLP checkpoint")
    if int(head[1]) != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {head[1]}")
    activation = lines[1].split()[1]
    n = int(lines[2].split()[1])
    Ws, bs = [], []
    pos = 3
    for _ in range(n):
        _, r, c = lines[pos].split()
        W = np.array([float.fromhex(t) for t in lines[pos + 1].split()]).reshape(int(r), int(c))
        _, k = lines[pos + 2].split()
        b = np.array([float.fromhex(t) for t in lines[pos + 3].split()]).reshape(int(k))
        Ws.append(W)
        bs.append(b)
        pos += 4
    return MlpParams(Ws, bs, activation)
