"""Experiment configuration: sectioned ``key = value`` files with dot-path overrides."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from ..dynamics import QuadParams
from ..learn import LearnConfig
from ..tasks import TaskConfig


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    quad: QuadParams = field(default_factory=QuadParams)
    task: TaskConfig = field(default_factory=TaskConfig)
    learn: LearnConfig = field(default_factory=LearnConfig)
    name: str = "run"
    output_dir: str = "."
    log_every: int = 1
    eval_every: int = 0
    eval_episodes: int = 10
    seeds: list = field(default_factory=lambda: [0])
    record_wall_time: bool = False
    jobs: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.log_every < 1 or self.eval_episodes < 1 or self.eval_every < 0 or self.jobs < 1:
            raise ConfigError("log_every, eval_episodes, jobs must be >= 1 and eval_every >= 0")
        try:
            self.quad.validate()
            self.task.validate_against(self.learn.horizon)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if abs(self.task.dt - self.quad.dt) > 1e-15:
            raise ConfigError(f"task.dt={self.task.dt} differs from quad.dt={self.quad.dt}")

    def run_dir(self, seed: int) -> Path:
        return Path(self.output_dir) / self.name / f"seed{seed}"


_EXPERIMENT_KEYS = ("name", "output_dir", "log_every", "eval_every", "eval_episodes", "seeds",
                    "record_wall_time", "jobs")


# --------------------------------------------------------------------------
# value (de)serialization, typed by the dataclass default

def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, np.ndarray):
        return ", ".join(repr(float(x)) for x in v.ravel())
    if isinstance(v, (list, tuple)):
        if v and isinstance(v[0], (list, tuple)):
            return "; ".join(_format(tuple(x)) for x in v)
        return ", ".join(_format(x) if not isinstance(x, (float, np.floating)) else repr(float(x)) for x in v)
    return str(v)


def _parse(text: str, like, key: str):
    text = text.strip()
    try:
        if isinstance(like, bool):
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        if isinstance(like, np.ndarray):
            return np.array([float(x) for x in text.split(",")])
        if isinstance(like, list) and like and isinstance(like[0], (list, tuple)):
            return [tuple(float(x) for x in grp.split(",")) for grp in text.split(";") if grp.strip()]
        if isinstance(like, list) and key.split(".")[-1] == "seeds":
            return [int(x) for x in text.split(",") if x.strip()]
        if isinstance(like, (list, tuple)):
            parts = [x.strip() for x in text.split(",") if x.strip()]
            if like and all(isinstance(x, int) and not isinstance(x, bool) for x in like):
                return tuple(int(x) for x in parts)
            return tuple(float(x) for x in parts)
        return text
    except ValueError:
        raise ConfigError(f"cannot parse {key} = {text!r}") from None


def _defaults_for(section: str, task_name: str):
    if section == "quad":
        return QuadParams()
    if section == "task":
        return TaskConfig.preset(task_name)
    if section == "learn":
        return LearnConfig()
    raise ConfigError(f"unknown section [{section}]")


def _build(section: str, values: dict, task_name: str):
    base = _defaults_for(section, task_name)
    names = {f.name for f in fields(base)}
    kwargs = {}
    for key, text in values.items():
        if key not in names:
            raise ConfigError(f"unknown key {section}.{key}")
        kwargs[key] = _parse(text, getattr(base, key), f"{section}.{key}")
    if section == "quad" and "J" in kwargs:
        J = np.asarray(kwargs["J"], dtype=np.float64)
        if J.size == 3:
            kwargs["J"] = np.diag(J)
        elif J.size == 9:
            kwargs["J"] = J.reshape(3, 3)
        else:
            raise ConfigError("quad.J needs 3 (diagonal) or 9 (row-major) values")
    try:
        if section == "task":
            kwargs.pop("task", None)
            return TaskConfig.preset(task_name, **kwargs)
        return type(base)(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as e:
        raise ConfigError(f"[{section}] {e}") from None


def from_sections(sections: dict) -> ExperimentConfig:
    """Build from {section: {key: text}}; missing keys take defaults."""
    unknown = set(sections) - {"experiment", "quad", "task", "learn"}
    if unknown:
        raise ConfigError(f"unknown section(s) {sorted(unknown)}")
    task_name = sections.get("task", {}).get("task", "hovering").strip()
    exp_vals = sections.get("experiment", {})
    kwargs = {}
    for key, text in exp_vals.items():
        if key not in _EXPERIMENT_KEYS:
            raise ConfigError(f"unknown key experiment.{key}")
        like = [0] if key == "seeds" else getattr(ExperimentConfig, key)
        kwargs[key] = _parse(text, like, f"experiment.{key}")
    for sec in ("quad", "task", "learn"):
        kwargs[sec] = _build(sec, sections.get(sec, {}), task_name)
    return ExperimentConfig(**kwargs)


def apply_overrides(sections: dict, overrides) -> dict:
    """``section.key=value`` strings layered over parsed sections."""
    out = {k: dict(v) for k, v in sections.items()}
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        path, value = item.split("=", 1)
        parts = path.strip().split(".")
        if len(parts) == 1:
            parts = ["experiment", parts[0]]
        if len(parts) != 2:
            raise ConfigError(f"override path {path!r} must be section.key")
        out.setdefault(parts[0], {})[parts[1]] = value
    return out


def read_sections(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    except configparser.Error as e:
        raise ConfigError(f"malformed config {path}: {e}") from None
    return {s: dict(parser.items(s)) for s in parser.sections()}


def load_config(path=None, overrides=()) -> ExperimentConfig:
    sections = read_sections(path) if path else {}
    return from_sections(apply_overrides(sections, overrides))


def dump_config(cfg: ExperimentConfig) -> str:
    """Every field with its resolved value, in the same format ``load_config`` reads."""
    lines = ["[experiment]"]
    for key in _EXPERIMENT_KEYS:
        lines.append(f"{key} = {_format(getattr(cfg, key))}")
    for sec in ("task", "learn", "quad"):
        obj = getattr(cfg, sec)
        lines.append("")
        lines.append(f"[{sec}]")
        for f in fields(obj):
            v = getattr(obj, f.name)
            if sec == "quad" and f.name == "J":
                v = np.asarray(v).ravel()
            lines.append(f"{f.name} = {_format(v)}")
    return "\n".join(lines) + "\n"


def write_resolved(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_config(cfg))
    return path
