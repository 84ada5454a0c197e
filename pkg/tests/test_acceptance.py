"""Acceptance criteria 1-9.  Each test reports one PASS/FAIL line (repeated in
the terminal summary).  Criteria 4-6 train full-length runs: about 30 runs of
2e6 steps, over an hour on one core.  Set QUADLAB_ACCEPTANCE_DIR to keep the
run directories; finished runs found there are reused.
"""
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from quadlab import autodiff as ad
from quadlab.dynamics import QuadParams, QuadState, allocate, allocation_forward, motor_step, step_batch
from quadlab.harness import cli
from quadlab.harness.config import apply_overrides, from_sections, read_sections
from quadlab.harness.gradcheck import COMPONENTS, THRESHOLD, fd_gradcheck
from quadlab.harness.run import read_csv, steps_to_threshold, train_seed
from quadlab.learn import lambda_returns, one_step_gradients
from quadlab.tasks import reward_relaxed

SEEDS = (0, 1, 2, 3, 4)
HOVER_LIMIT_S = 15 * 60


# --------------------------------------------------------------------------
# shared training runs

@pytest.fixture(scope="session")
def run_root(tmp_path_factory):
    env = os.environ.get("QUADLAB_ACCEPTANCE_DIR")
    if env:
        Path(env).mkdir(parents=True, exist_ok=True)
        return Path(env)
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def trained(run_root):
    """trained(name, config, overrides) -> per-seed final results (memoized)."""
    cache = {}

    def get(name, config, overrides=()):
        if name in cache:
            return cache[name]
        out = []
        for seed in SEEDS:
            sections = read_sections(cli._resolve_config_path(config))
            cfg = from_sections(apply_overrides(sections, [*overrides, f"experiment.output_dir={run_root}",
                                                           f"experiment.name={name}", f"experiment.seeds={seed}"]))
            done = cfg.run_dir(seed) / "final.json"
            if done.exists():
                out.append(json.loads(done.read_text()))
                continue
            t0 = time.perf_counter()
            res = train_seed(cfg, seed)
            res["wall_s"] = time.perf_counter() - t0
            res["eval_csv"] = str(cfg.run_dir(seed) / "eval.csv")
            done.write_text(json.dumps(res))
            out.append(res)
        cache[name] = out
        return out

    return get


def hover_full(trained):
    return trained("hover-abpt", "hover")


def racing(trained, algorithm, *extra):
    name = f"racing-{algorithm}" + "".join(f"-{e.split('.')[-1]}" for e in extra)
    return trained(name, "racing", [f"learn.algorithm={algorithm}", *extra])


# --------------------------------------------------------------------------
# 1. gradients

def test_criterion_1_gradcheck(acceptance_report):
    t0 = time.perf_counter()
    errs = {c: fd_gradcheck(c, eps=1e-6) for c in COMPONENTS}
    elapsed = time.perf_counter() - t0
    ok = max(errs.values()) <= THRESHOLD and elapsed < 120
    detail = "  ".join(f"{c} {e:.2e}" for c, e in errs.items()) + f"  ({elapsed:.1f}s)"
    assert acceptance_report(1, ok, detail)


# --------------------------------------------------------------------------
# 2. TD(lambda)

def _td_brute_force(r, q, gamma, lam, terminal, L):
    out = np.zeros(L)
    for t in range(L):
        K = L - t
        G = [sum(gamma**l * r[t + l] for l in range(k))
             + (0.0 if terminal and k == K else 1.0) * gamma**k * q[t + k - 1] for k in range(1, K + 1)]
        out[t] = (1 - lam) * sum(lam**(k - 1) * G[k - 1] for k in range(1, K)) + lam**(K - 1) * G[K - 1]
    return out


def test_criterion_2_td_lambda(acceptance_report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(1000):
        lam = (0.0, 0.3, 0.95, 1.0)[i % 4]
        N = int(rng.integers(1, 7))
        L = int(rng.integers(1, N + 1))
        gamma, terminal = float(rng.uniform(0.5, 1.0)), bool(rng.random() < 0.5)
        r, q = rng.normal(size=N), rng.normal(size=N) * 10
        got = lambda_returns(r, q, gamma, lam, terminal, L)
        worst = max(worst, float(np.abs(got - _td_brute_force(r, q, gamma, lam, terminal, L)).max()))
    elapsed = time.perf_counter() - t0
    assert acceptance_report(2, worst <= 1e-12 and elapsed < 10, f"max err {worst:.1e}  ({elapsed:.2f}s)")


# --------------------------------------------------------------------------
# 3. physics identities

def test_criterion_3_physics(acceptance_report):
    t0 = time.perf_counter()
    p = QuadParams()
    # hover fixed point
    X = QuadState.hover(p, (0.5, -0.5, 1.5)).to_vector()[None]
    drift = 0.0
    for _ in range(500):
        Y = step_batch(X, np.zeros((1, 4)), p)
        drift = max(drift, float(np.abs(Y - X).max()))
        X = Y
    # allocation round trip
    rng = np.random.default_rng(3)
    alloc = 0.0
    for _ in range(1000):
        f, tau = rng.uniform(0, 20), rng.normal(size=3)
        f2, tau2 = allocation_forward(allocate(f, tuple(tau), p), p)
        alloc = max(alloc, abs(float(ad._val(f2)) - f),
                    float(np.abs(np.array([float(ad._val(t)) for t in tau2]) - tau).max()))
    # motor lag limits
    prev, des = (100.0, 200.0, 300.0, 400.0), (500.0, 600.0, 700.0, 800.0)
    frozen = [float(ad._val(w)) for w in motor_step(prev, des, QuadParams(c_motor=0.0))[0]]
    instant = [float(ad._val(w)) for w in motor_step(prev, des, QuadParams(c_motor=1e6))[0]]
    lag_ok = frozen == list(prev) and np.allclose(instant, des, rtol=0, atol=1e-9)
    # one-step delay: a_t never reaches s_{t+1}'s physical part, but does reach s_{t+2}
    x = QuadState.hover(p, (0, 0, 2.0)).to_vector()
    x[10:13] = (0.3, -0.2, 0.1)
    a1, a2 = rng.uniform(-1, 1, (2, 4))
    y1, y2 = step_batch(x[None], a1[None], p), step_batch(x[None], a2[None], p)
    z1, z2 = step_batch(y1, np.zeros((1, 4)), p), step_batch(y2, np.zeros((1, 4)), p)
    delay_ok = np.array_equal(y1[0, :17], y2[0, :17]) and not np.allclose(z1[0, :17], z2[0, :17])
    elapsed = time.perf_counter() - t0
    ok = drift <= 1e-9 and alloc <= 1e-12 and lag_ok and delay_ok and elapsed < 10
    assert acceptance_report(3, ok, f"hover drift {drift:.1e}/step  allocation {alloc:.1e}  motor lag {lag_ok}  "
                                    f"delay {delay_ok}  ({elapsed:.2f}s)")


# --------------------------------------------------------------------------
# 4-6. training

@pytest.mark.slow
def test_criterion_4_hovering(trained, acceptance_report):
    runs = hover_full(trained)
    hits = [r["pos_error"] <= 0.2 and r["timestep"] <= 2_000_000 and r["wall_s"] <= HOVER_LIMIT_S for r in runs]
    detail = "  ".join(f"s{r['seed']} {r['pos_error']:.3f}m/{r['wall_s'] / 60:.1f}min" for r in runs)
    assert acceptance_report(4, sum(hits) >= 4, f"{sum(hits)}/5 seeds  {detail}")


@pytest.mark.slow
def test_criterion_5_racing_order(trained, acceptance_report):
    g = {a: [r["gates_passed"] for r in racing(trained, a)] for a in ("abpt", "shac", "bptt")}
    wins = [g["abpt"][i] > g["shac"][i] > g["bptt"][i] for i in range(len(SEEDS))]
    detail = "  ".join(f"s{s} {g['abpt'][i]:.1f}>{g['shac'][i]:.1f}>{g['bptt'][i]:.1f}" for i, s in enumerate(SEEDS))
    assert acceptance_report(5, sum(wins) >= 4, f"{sum(wins)}/5 seeds (abpt>shac>bptt gates)  {detail}")


@pytest.mark.slow
def test_criterion_6_ablations(trained, acceptance_report):
    full = [r["gates_passed"] for r in racing(trained, "abpt")]
    no_zero = [r["gates_passed"] for r in racing(trained, "abpt", "learn.use_zero_step=false")]
    fewer = [no_zero[i] < full[i] for i in range(len(SEEDS))]
    h_full = [steps_to_threshold(r["eval_csv"]) for r in hover_full(trained)]
    h_nobuf = [steps_to_threshold(r["eval_csv"]) for r in
               trained("hover-abpt-no-buffer-init", "hover", ["learn.use_buffer_init=false"])]
    slower = [h_nobuf[i] > h_full[i] for i in range(len(SEEDS))]
    fmt = lambda v: "never" if math.isinf(v) else f"{v / 1e6:.2f}M"
    detail = (f"racing no-zero-step fewer gates {sum(fewer)}/5 "
              f"({' '.join(f'{a:.1f}<{b:.1f}' for a, b in zip(no_zero, full))});  "
              f"hover no-buffer-init slower {sum(slower)}/5 "
              f"({' '.join(f'{fmt(a)}>{fmt(b)}' for a, b in zip(h_nobuf, h_full))})")
    assert acceptance_report(6, sum(fewer) >= 4 and sum(slower) >= 3, detail)


# --------------------------------------------------------------------------
# 7. gradient bias on the one-step task

def test_criterion_7_gradient_bias(acceptance_report):
    t0 = time.perf_counter()
    plain, bonus = one_step_gradients(0.0), one_step_gradients(10.0)
    bptt_same = all(np.array_equal(a, b) for a, b in zip(plain["bptt"], bonus["bptt"]))
    abpt_diff = max(float(np.abs(a - b).max()) for a, b in zip(plain["abpt"], bonus["abpt"]))
    elapsed = time.perf_counter() - t0
    ok = bptt_same and abpt_diff > 0 and elapsed < 1
    assert acceptance_report(7, ok, f"bptt invariant {bptt_same}  abpt change {abpt_diff:.3g}  ({elapsed:.2f}s)")


# --------------------------------------------------------------------------
# 8. reproducibility

def test_criterion_8_byte_identical(tmp_path, acceptance_report):
    texts = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        assert cli.main(["train", "--config", "hover", "--seed", "3", "--out", str(out),
                         "--override", "learn.total_timesteps=20480", "--override", "experiment.eval_every=5"]) == 0
        texts.append([(out / "hover" / "seed3" / f).read_bytes() for f in ("metrics.csv", "eval.csv")])
    ok = texts[0] == texts[1]
    assert acceptance_report(8, ok, f"metrics.csv {len(texts[0][0])} bytes identical {ok}")


# --------------------------------------------------------------------------
# 9. relaxed gate rewards

def test_criterion_9_relaxation(tmp_path, acceptance_report):
    x = QuadState.hover(QuadParams(), (0.99, 0.0, 0.0)).to_vector()
    log_v = float(ad._val(reward_relaxed(x, np.zeros(3), "relaxed_log")))
    x0 = QuadState.hover(QuadParams(), (0.0, 0.0, 0.0)).to_vector()
    exp_v = float(ad._val(reward_relaxed(x0, np.zeros(3), "relaxed_exp")))
    rc = cli.main(["relax", "--config", "racing", "--seed", "0", "--out", str(tmp_path),
                   "--override", "learn.total_timesteps=102400", "--override", "experiment.eval_every=10"])
    curves = {}
    for variant in ("relaxed_log", "relaxed_exp"):
        cols, data = read_csv(tmp_path / "relax" / variant / "seed0" / "eval.csv")
        curves[variant] = data[:, cols.index("gates_passed")] if "gates_passed" in cols else np.array([])
    ok = (abs(log_v) <= 1e-6 and abs(exp_v - 20.0) <= 1e-6 and rc == 0
          and all(len(c) >= 2 and np.isfinite(c).all() for c in curves.values()))
    assert acceptance_report(9, ok, f"log(0.99) {log_v:.1e}  exp(0) {exp_v:.6f}  curve points "
                                    + " ".join(f"{k}={len(v)}" for k, v in curves.items()))
