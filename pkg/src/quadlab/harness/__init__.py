"""Experiment plumbing: configuration, runs, gradient checks, export, CLI."""
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .curves import export_curves
from .gradcheck import fd_gradcheck
from .run import METRIC_COLUMNS, SchemaError, read_csv, train_all, train_seed

__all__ = [
    "ConfigError", "ExperimentConfig", "METRIC_COLUMNS", "SchemaError", "dump_config", "export_curves",
    "fd_gradcheck", "load_config", "read_csv", "train_all", "train_seed",
]
