import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quadlab import autodiff as ad
from quadlab.nets import (
    Adam, MlpParams, ShapeError, init_actor, init_critic, init_mlp, load_mlp, mlp_forward, policy_sample,
    q_forward, save_mlp, soft_update,
)


def loss_and_grads(net, x):
    tape = ad.Tape()
    lifted = net.lift(tape)
    out = mlp_forward(lifted, x)
    y = (out * out).sum()
    return float(y.value), lifted.grads(ad.backward(tape, y))


@pytest.mark.parametrize("activation", ["tanh", "elu"])
def test_param_gradients_match_fd(activation):
    rng = np.random.default_rng(0)
    net = init_mlp(rng, [3, 8, 8, 2], activation, out_gain=1.0)
    for b in net.biases:
        b += rng.normal(size=b.shape) * 0.1
    x = rng.normal(size=(4, 3))
    _, grads = loss_and_grads(net, x)
    arrays = net.arrays
    eps = 1e-6
    for k, a in enumerate(arrays):
        for idx in np.ndindex(a.shape):
            plus = [b.copy() for b in arrays]
            minus = [b.copy() for b in arrays]
            plus[k][idx] += eps
            minus[k][idx] -= eps
            fd = (loss_and_grads(net.with_arrays(plus), x)[0] - loss_and_grads(net.with_arrays(minus), x)[0]) / (2 * eps)
            assert abs(grads[k][idx] - fd) <= 1e-6 * max(1.0, abs(fd))


def test_input_gradient_matches_fd():
    rng = np.random.default_rng(1)
    net = init_mlp(rng, [5, 8, 8, 3])
    x0 = rng.normal(size=5)
    tape = ad.Tape()
    x = ad.lift(x0, tape)
    g = ad.grad_of(ad.backward(tape, mlp_forward(net, x).sum()), x)
    eps = 1e-6
    for i in range(5):
        e = np.zeros(5)
        e[i] = eps
        fd = (float(mlp_forward(net, x0 + e).value.sum()) - float(mlp_forward(net, x0 - e).value.sum())) / (2 * eps)
        assert abs(g[i] - fd) <= 1e-7


def test_zero_weights_output_last_bias():
    rng = np.random.default_rng(2)
    net = init_mlp(rng, [4, 6, 3])
    net = net.with_arrays([np.zeros_like(a) for a in net.arrays])
    net.biases[-1][:] = (1.0, -2.0, 0.5)
    out = mlp_forward(net, rng.normal(size=(7, 4))).value
    assert np.array_equal(out, np.tile([1.0, -2.0, 0.5], (7, 1)))


def test_shape_errors():
    rng = np.random.default_rng(3)
    net = init_mlp(rng, [4, 6, 3])
    with pytest.raises(ShapeError):
        mlp_forward(net, np.zeros((2, 5)))
    with pytest.raises(ShapeError):
        MlpParams([np.zeros((4, 6)), np.zeros((5, 3))], [np.zeros(6), np.zeros(3)])
    with pytest.raises(ShapeError):
        MlpParams([np.zeros((4, 6))], [np.zeros(5)])
    with pytest.raises(ValueError):
        init_mlp(rng, [2, 2], activation="relu6")


def test_batched_matches_single():
    rng = np.random.default_rng(4)
    net = init_mlp(rng, [5, 8, 3])
    X = rng.normal(size=(6, 5))
    batched = mlp_forward(net, X).value
    for i in range(6):
        assert np.allclose(mlp_forward(net, X[i]).value, batched[i], rtol=0, atol=1e-14)


def test_actor_and_critic_shapes():
    rng = np.random.default_rng(5)
    actor = init_actor(rng, 16, 4, hidden=(8, 8), init_log_std=-1.0)
    critic = init_critic(rng, 16, 4, hidden=(8, 8))
    obs = rng.normal(size=(3, 16))
    out = policy_sample(actor, obs, np.zeros((3, 4)))
    assert out.action.shape == (3, 4)
    assert np.allclose(out.log_std.value, -1.0, atol=0.05)
    assert np.all(np.abs(out.action.value) < 1.0)
    assert np.array_equal(out.action.value, np.tanh(out.mean.value))
    assert q_forward(critic, obs, out.action).shape == (3,)


def test_policy_sample_is_reparameterized():
    rng = np.random.default_rng(6)
    actor = init_actor(rng, 4, 2, hidden=(8,))
    obs = rng.normal(size=4)
    noise = np.array([0.5, -1.0])
    out = policy_sample(actor, obs, noise)
    pre = out.mean.value + np.exp(out.log_std.value) * noise
    assert np.allclose(out.pre_tanh.value, pre, rtol=0, atol=1e-15)
    tape = ad.Tape()
    lifted = actor.lift(tape)
    a = policy_sample(lifted, obs, noise).action.sum()
    grads = lifted.grads(ad.backward(tape, a))
    assert any(np.abs(g).max() > 0 for g in grads)


def test_soft_update_examples():
    rng = np.random.default_rng(7)
    a = init_mlp(rng, [3, 4, 2])
    b = init_mlp(rng, [3, 4, 2])
    for x, y in zip(soft_update(a, b, 0.0).arrays, a.arrays):
        assert np.array_equal(x, y)
    for x, y in zip(soft_update(a, b, 1.0).arrays, b.arrays):
        assert np.array_equal(x, y)
    mid = soft_update(a, b, 0.25).arrays
    for m, x, y in zip(mid, a.arrays, b.arrays):
        assert np.allclose(m, 0.75 * x + 0.25 * y, rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        soft_update(a, b, 1.5)
    with pytest.raises(ShapeError):
        soft_update(a, init_mlp(rng, [3, 5, 2]), 0.5)


def test_adam_first_step_is_lr_times_sign():
    p = [np.array([1.0, -2.0, 3.0])]
    g = [np.array([0.5, -4.0, 1e-3])]
    out = Adam([x.shape for x in p]).step(p, g, lr=0.1)
    assert np.allclose(out[0], p[0] - 0.1 * np.sign(g[0]), rtol=0, atol=1e-5)


def test_adam_zero_lr_and_zero_grad():
    p = [np.array([1.0, 2.0])]
    opt = Adam([(2,)])
    assert np.array_equal(opt.step(p, [np.array([3.0, -1.0])], lr=0.0)[0], p[0])
    assert np.array_equal(Adam([(2,)]).step(p, [np.zeros(2)], lr=0.1)[0], p[0])


def test_adam_rejects_non_finite():
    with pytest.raises(FloatingPointError, match="tensor 0"):
        Adam([(2,)]).step([np.zeros(2)], [np.array([np.nan, 1.0])], lr=0.1)


def test_adam_minimizes_quadratic():
    opt = Adam([(3,)])
    p = [np.array([3.0, -2.0, 1.0])]
    for _ in range(2000):
        p = opt.step(p, [2 * p[0]], lr=0.01)
    assert np.abs(p[0]).max() < 1e-2


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["tanh", "elu"]))
def test_checkpoint_round_trip_bit_exact(tmp_path_factory, seed, activation):
    rng = np.random.default_rng(seed)
    net = init_mlp(rng, [3, 5, 2], activation)
    net.biases[0] += rng.normal(size=5) * 1e-300
    path = tmp_path_factory.mktemp("ckpt") / "net.ckpt"
    save_mlp(net, path)
    back = load_mlp(path)
    assert back.activation == activation
    for a, b in zip(net.arrays, back.arrays):
        assert a.tobytes() == b.tobytes()


def test_checkpoint_rejects_foreign_and_future(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_text("something else\n")
    with pytest.raises(ValueError, match="not an MLP"):
        load_mlp(p)
    p.write_text("quadlab-mlp 99\n")
    with pytest.raises(ValueError, match="version"):
        load_mlp(p)
