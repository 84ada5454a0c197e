"""Aggregate per-seed logs into mean / min / max curves."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .run import METRICS_VERSION, SchemaError, _fmt, read_csv


def export_curves(paths, out, key: str = "timestep") -> Path:
    """Write per-``key`` mean, min and max of every other column across runs.

    Rows are restricted to the ``key`` values logged by every run.
    """
    paths = [Path(p) for p in paths]
    if not paths:
        raise ValueError("export_curves needs at least one log")
    runs = [read_csv(p) for p in paths]
    cols = runs[0][0]
    for p, (c, _) in zip(paths[1:], runs[1:]):
        if c != cols:
            raise SchemaError(f"{p}: columns {list(c)} differ from {list(cols)}")
    if key not in cols:
        raise SchemaError(f"logs have no {key!r} column")
    k = cols.index(key)
    grid = runs[0][1][:, k]
    for _, data in runs[1:]:
        grid = grid[np.isin(grid, data[:, k])]
    value_cols = [c for c in cols if c != key]
    stacked = []
    for _, data in runs:
        idx = {t: i for i, t in enumerate(data[:, k])}
        rows = data[[idx[t] for t in grid]]
        stacked.append(rows[:, [cols.index(c) for c in value_cols]])
    S = np.stack(stacked)  # (runs, rows, cols)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    header = [key] + [f"{c}_{s}" for c in value_cols for s in ("mean", "min", "max")]
    with open(out, "w") as fh:
        fh.write(f"# quadlab curves v{METRICS_VERSION} runs={len(paths)}\n")
        fh.write(",".join(header) + "\n")
        for r, t in enumerate(grid):
            vals = [t]
            for j in range(len(value_cols)):
                col = S[:, r, j]
                vals += [col.mean(), col.min(), col.max()]
            fh.write(",".join([_fmt(int(vals[0]) if float(vals[0]).is_integer() else vals[0])]
                              + [_fmt(v) for v in vals[1:]]) + "\n")
    return out
