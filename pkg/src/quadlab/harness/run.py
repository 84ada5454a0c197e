"""Per-seed training runs: metrics CSV, periodic evaluation, checkpoints."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..learn import Trainer, evaluate_policy
from ..nets import load_mlp, save_mlp
from .config import ExperimentConfig, write_resolved

METRICS_VERSION = 1
METRIC_COLUMNS = ("timestep", "wall_time_s", "mean_return", "success_rate", "gates_passed",
                  "actor_grad_norm", "critic_loss")
EVAL_COLUMNS = ("timestep", "pos_error", "mean_return", "success_rate", "gates_passed")


class SchemaError(ValueError):
    pass


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else f"{v:.12g}"


class CsvLog:
    """Delimited log with a versioned comment header."""

    def __init__(self, path, columns, kind="metrics"):
        self.path = Path(path)
        self.columns = tuple(columns)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="")
        self._fh.write(f"# quadlab {kind} v{METRICS_VERSION}\n")
        self._fh.write(",".join(self.columns) + "\n")

    def write(self, row: dict):
        self._fh.write(",".join(_fmt(row[c]) for c in self.columns) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_csv(path):
    """(columns, rows as float array) of a log written by :class:`CsvLog`."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        columns = tuple(next(reader))
    except StopIteration:
        raise SchemaError(f"{path}: empty log") from None
    rows = [[float(x) for x in r] for r in reader if r]
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(columns))
    return columns, data


def train_seed(cfg: ExperimentConfig, seed: int, verbose: bool = False) -> dict:
    """Train one seed to ``learn.total_timesteps``; returns the final evaluation."""
    run_cfg = replace(cfg, seeds=[seed], learn=replace(cfg.learn, seed=seed))
    out = cfg.run_dir(seed)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(run_cfg, out / "config.resolved.cfg")
    tr = Trainer(cfg.task, cfg.quad, run_cfg.learn, wall_clock=cfg.record_wall_time)
    total = cfg.learn.total_timesteps
    per_episode = cfg.learn.batch * cfg.learn.horizon
    evals = CsvLog(out / "eval.csv", EVAL_COLUMNS, kind="eval") if cfg.eval_every else None
    with CsvLog(out / "metrics.csv", METRIC_COLUMNS) as log:
        # stop before the budget would be exceeded
        while tr.timestep + per_episode <= total:
            m = tr.train_episode()
            last = tr.timestep + per_episode > total
            if tr.episode % cfg.log_every == 0 or last:
                log.write(m)
            if evals is not None and (tr.episode % cfg.eval_every == 0 or last):
                ev = tr.evaluate(cfg.eval_episodes)
                evals.write({"timestep": tr.timestep, **ev})
            if verbose and (tr.episode % max(cfg.log_every, 50) == 0 or last):
                print(f"seed {seed} step {tr.timestep} return {m['mean_return']:.2f}", flush=True)
    if evals is not None:
        evals.close()
    save_mlp(tr.actor, out / "actor.ckpt")
    save_mlp(tr.critic, out / "critic.ckpt")
    final = tr.evaluate(cfg.eval_episodes)
    final.update(seed=seed, timestep=tr.timestep, run_dir=str(out))
    return final


def train_all(cfg: ExperimentConfig, verbose: bool = False) -> list[dict]:
    """All seeds, sequentially or in ``cfg.jobs`` worker processes."""
    if cfg.jobs <= 1 or len(cfg.seeds) == 1:
        return [train_seed(cfg, s, verbose) for s in cfg.seeds]
    with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
        futs = [pool.submit(train_seed, cfg, s, verbose) for s in cfg.seeds]
        return [f.result() for f in futs]


def evaluate_checkpoint(cfg: ExperimentConfig, run_dir, episodes: int | None = None, seed: int = 0) -> dict:
    actor = load_mlp(Path(run_dir) / "actor.ckpt")
    return evaluate_policy(actor, cfg.task, cfg.quad, episodes or cfg.eval_episodes, seed=seed)


def steps_to_threshold(eval_csv, column="pos_error", threshold=0.2) -> float:
    """First logged timestep at which ``column`` is at or below ``threshold`` (inf if never)."""
    cols, data = read_csv(eval_csv)
    t, v = data[:, cols.index("timestep")], data[:, cols.index(column)]
    hit = np.flatnonzero(v <= threshold)
    return float(t[hit[0]]) if hit.size else math.inf
