import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quadlab import autodiff as ad
from quadlab.dynamics import QuadParams, QuadState
from quadlab.tasks import (
    OBS_STATE_IDX, TASKS, TRACK_POINTS, TaskConfig, TaskEnv, check_done, gate_passed, in_init_region,
    next_gate_from_position, observe, quat_error, reset, reward, reward_relaxed, sample_states, task_targets,
    track_points,
)

QUAD = QuadParams()


def hover_at(p):
    return QuadState.hover(QUAD, p).to_vector()


def val(x):
    return np.asarray(ad._val(x))


# --------------------------------------------------------------------------
# rewards

@pytest.mark.parametrize("task", ["hovering", "racing"])
def test_reward_at_target_is_alive_bonus(task):
    cfg = TaskConfig.preset(task)
    tgt, _ = task_targets(cfg, hover_at((0, 0, 0)), 0)
    x = hover_at(tuple(tgt))
    r, r_nd = reward(cfg, x, progress=0)
    assert float(val(r)) == pytest.approx(cfg.c, abs=1e-7)
    assert float(r_nd) == 0.0


@pytest.mark.parametrize("c", [0.2, 1.0, 4.0])
def test_reward_alive_bonus_any_c(c):
    cfg = TaskConfig.preset("hovering", c=c)
    r, _ = reward(cfg, hover_at(cfg.target))
    assert float(val(r)) == pytest.approx(c, abs=1e-7)


def test_reward_decreases_with_distance():
    cfg = TaskConfig.preset("hovering")
    rs = [float(val(reward(cfg, hover_at((d, 0, 1.5)))[0])) for d in (0.0, 0.5, 1.0, 2.0)]
    assert all(a > b for a, b in zip(rs, rs[1:]))
    assert rs[0] - rs[2] == pytest.approx(cfg.k[0] * 1.0, abs=1e-7)


def test_quat_error_double_cover():
    q = np.array([0.9, 0.1, -0.2, 0.3])
    q /= np.linalg.norm(q)
    assert float(val(quat_error(q))) == pytest.approx(float(val(quat_error(-q))), abs=1e-15)
    assert float(val(quat_error(np.array([-1.0, 0, 0, 0])))) == pytest.approx(0.0, abs=1e-7)


def test_relaxed_values():
    x = hover_at((0.99, 0, 0))
    assert float(val(reward_relaxed(x, np.zeros(3), "relaxed_log"))) == pytest.approx(0.0, abs=1e-6)
    x = hover_at((0, 0, 0))
    assert float(val(reward_relaxed(x, np.zeros(3), "relaxed_exp"))) == pytest.approx(20.0, abs=1e-5)
    with pytest.raises(ValueError):
        reward_relaxed(x, np.zeros(3), "position")


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_relaxed_monotone(d1, d2):
    for variant in ("relaxed_log", "relaxed_exp"):
        a = float(val(reward_relaxed(hover_at((d1, 0, 0)), np.zeros(3), variant)))
        b = float(val(reward_relaxed(hover_at((d2, 0, 0)), np.zeros(3), variant)))
        if d1 < d2 - 1e-6:
            assert a > b


def test_racing_gate_bonus_nondiff():
    cfg = TaskConfig.preset("racing")
    X = np.stack([hover_at((0, 0, 1)), hover_at((0, 0, 1))])
    r0, nd0 = reward(cfg, X, progress=np.zeros(2, int), passed=np.array([True, False]))
    assert nd0.tolist() == [cfg.k[4], 0.0]
    assert np.allclose(val(r0)[0], val(r0)[1])


def test_landing_sign_switch():
    cfg = TaskConfig.preset("landing")
    lit = TaskConfig.preset("landing", paper_literal_landing_sign=True)
    x = hover_at((0, 0, 1))
    x[5] = -2.0
    r, r_lit = float(val(reward(cfg, x)[0])), float(val(reward(lit, x)[0]))
    assert r < r_lit


def test_reward_weights_validated():
    with pytest.raises(ValueError):
        TaskConfig.preset("hovering", k=(1.0, 2.0))
    with pytest.raises(ValueError):
        TaskConfig.preset("hovering", c=float("nan"))
    with pytest.raises(ValueError):
        TaskConfig.preset("nope")


# --------------------------------------------------------------------------
# gates

GATE = (0.0, 0.0, 1.0, np.pi / 2)   # centred at (0, 0, 1), facing +y


def test_gate_straight_through():
    assert gate_passed((0, -1, 1), (0, 1, 1), GATE, 0.5)


def test_gate_offset_miss():
    assert not gate_passed((2, -1, 1), (2, 1, 1), GATE, 0.5)


def test_gate_wrong_direction():
    assert not gate_passed((0, 1, 1), (0, -1, 1), GATE, 0.5)


def test_gate_no_crossing():
    assert not gate_passed((0, -1, 1), (0, -0.5, 1), GATE, 0.5)


def test_gate_oblique_inside_and_outside():
    assert gate_passed((-0.4, -1, 1.0), (0.4, 1, 1.0), GATE, 0.5)
    assert not gate_passed((0.0, -1, 0.0), (0.0, 1, 0.2), GATE, 0.5)


def test_next_gate_from_position():
    cfg = TaskConfig.preset("racing")
    # just past gate 0 (at angle 0) the next gate ahead is gate 1
    assert next_gate_from_position(cfg, (2.5, 0.1, 1.5)).tolist() == [1]
    assert next_gate_from_position(cfg, (2.5, -0.1, 1.5)).tolist() == [0]


def test_env_counts_gate_pass():
    cfg = TaskConfig.preset("racing")
    env = TaskEnv(cfg, QUAD, 1, seed=0)
    x = hover_at((2.5, -0.05, 1.5))
    x[4] = 5.0
    env.reset_envs([0], x[None])
    assert env.progress.tolist() == [0]
    _, res = env.step(ad.constant(env.states.copy()), ad.constant(np.zeros((1, 4))))
    assert res.passed.tolist() == [True]
    assert env.progress.tolist() == [1] and env.gates.tolist() == [1]
    assert res.r_nondiff.tolist() == [cfg.k[4]]


# --------------------------------------------------------------------------
# termination

def test_landing_success_examples():
    cfg = TaskConfig.preset("landing")
    x = hover_at((0.1, 0, -0.001))
    x[5] = -0.2
    assert check_done(cfg, x, 1) == (True, True)
    x[5] = -1.0
    assert check_done(cfg, x, 1) == (True, False)
    x = hover_at((2.0, 0, -0.001))
    x[5] = -0.2
    assert check_done(cfg, x, 1) == (True, False)


def test_hover_timeout_success_and_crash():
    cfg = TaskConfig.preset("hovering")
    assert check_done(cfg, hover_at((0, 0, 1)), cfg.episode_len) == (True, True)
    assert check_done(cfg, hover_at((0, 0, 1)), 3) == (False, False)
    assert check_done(cfg, hover_at((0, 0, -0.1)), 3) == (True, False)
    assert check_done(cfg, hover_at((9, 0, 1)), 3) == (True, False)


def test_racing_never_succeeds():
    cfg = TaskConfig.preset("racing")
    assert check_done(cfg, hover_at((0, 0, 1)), cfg.episode_len) == (True, False)


# --------------------------------------------------------------------------
# observations

@pytest.mark.parametrize("task", TASKS)
def test_observation_layout(task):
    cfg = TaskConfig.preset(task)
    rng = np.random.default_rng(0)
    X = sample_states(cfg, QUAD, [rng, rng])
    obs = observe(cfg, X, np.zeros(2, int))
    assert obs.shape == (2, cfg.obs_dim)
    assert np.array_equal(obs[:, :13], X[:, OBS_STATE_IDX])
    assert np.array_equal(obs[:, 0:3], X[:, 0:3])
    assert np.array_equal(obs[:, 3:7], X[:, 6:10])
    assert np.array_equal(obs[:, 7:10], X[:, 3:6])
    ov = observe(cfg, ad.constant(X), np.zeros(2, int))
    assert np.array_equal(ov.value, obs)


def test_tracking_points_on_circle_ahead():
    cfg = TaskConfig.preset("tracking")
    pts = track_points(cfg, np.array([1.5, 0.0, 1.5]))
    assert pts.shape == (TRACK_POINTS, 3)
    r = np.linalg.norm(pts[:, :2] - np.asarray(cfg.track_center[:2]), axis=1)
    assert np.allclose(r, cfg.track_radius)
    ang = np.arctan2(pts[:, 1], pts[:, 0])
    step = cfg.track_speed * cfg.dt / cfg.track_radius
    assert np.allclose(ang, step * np.arange(1, TRACK_POINTS + 1))


def test_racing_observation_holds_two_gates():
    cfg = TaskConfig.preset("racing")
    obs = observe(cfg, hover_at((0, 0, 1)), 3)
    assert np.array_equal(obs[13:16], cfg.gate_centers[3])
    assert np.array_equal(obs[16:19], cfg.gate_centers[0])


# --------------------------------------------------------------------------
# resets

def test_reset_deterministic_and_in_region():
    cfg = TaskConfig.preset("hovering")
    a, oa = reset(cfg, np.random.default_rng(5), QUAD)
    b, ob = reset(cfg, np.random.default_rng(5), QUAD)
    assert np.array_equal(a.to_vector(), b.to_vector()) and np.array_equal(oa, ob)
    X = sample_states(cfg, QUAD, [np.random.default_rng(i) for i in range(500)])
    assert in_init_region(cfg, X).all()
    assert np.allclose(np.linalg.norm(X[:, 6:10], axis=1), 1.0)


def test_reset_override_state():
    cfg = TaskConfig.preset("racing")
    s = QuadState.hover(QUAD, (2.5, -0.5, 1.5))
    state, obs = reset(cfg, None, QUAD, override_state=s)
    assert np.array_equal(state.to_vector(), s.to_vector())
    assert np.array_equal(obs[13:16], cfg.gate_centers[0])
    bad = QuadState.hover(QUAD)
    bad.q = np.array([2.0, 0, 0, 0])
    with pytest.raises(ValueError):
        reset(cfg, None, QUAD, override_state=bad)


def test_env_seeded_identically():
    cfg = TaskConfig.preset("hovering")
    a, b = TaskEnv(cfg, QUAD, 8, seed=3), TaskEnv(cfg, QUAD, 8, seed=3)
    assert np.array_equal(a.states, b.states)
    c = TaskEnv(cfg, QUAD, 8, seed=4)
    assert not np.array_equal(a.states, c.states)


def test_env_step_counts_and_reports():
    cfg = TaskConfig.preset("hovering")
    env = TaskEnv(cfg, QUAD, 4, seed=0)
    X = ad.constant(env.states.copy())
    Y, res = env.step(X, ad.constant(np.zeros((4, 4))))
    assert env.steps.tolist() == [1, 1, 1, 1]
    assert res.r_diff.shape == (4,) and res.r_nondiff.shape == (4,)
    assert not res.done.any()
    assert np.array_equal(env.states, Y.value)
