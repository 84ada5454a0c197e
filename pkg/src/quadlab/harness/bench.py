"""Simulator throughput: batched steps per wall-second for each kernel."""
from __future__ import annotations

import time

import numpy as np

from ..dynamics import QuadParams, kernels
from ..dynamics.params import QuadState


def _available(names):
    out = []
    for n in names:
        try:
            out.append((n, kernels.get(n)))
        except ImportError:
            pass
    return out


def bench(batch_sizes=(1, 64, 1024), steps: int = 200, kernel_names=("compiled", "python"),
          min_time: float = 0.2, quad: QuadParams | None = None) -> list[dict]:
    """One record per (kernel, batch, mode); mode is ``forward`` or ``forward+vjp``.

    ``steps_per_s`` counts simulator steps summed over the batch.
    """
    quad = quad or QuadParams()
    P = quad.packed()
    rng = np.random.default_rng(0)
    records = []
    for name, k in _available(kernel_names):
        for B in batch_sizes:
            X = np.tile(QuadState.hover(quad, (0.0, 0.0, 1.0)).to_vector(), (B, 1))
            A = rng.uniform(-0.2, 0.2, (B, 4))
            G = rng.normal(size=X.shape)
            for mode in ("forward", "forward+vjp"):
                n, t0 = 0, time.perf_counter()
                while True:
                    Y = X
                    for _ in range(steps):
                        if mode == "forward":
                            Y = k.step_forward(Y, A, P)
                        else:
                            k.step_vjp(Y, A, P, G)
                            Y = k.step_forward(Y, A, P)
                    n += steps
                    el = time.perf_counter() - t0
                    if el >= min_time:
                        break
                records.append({"kernel": name, "batch": B, "mode": mode, "steps": n * B,
                                "seconds": el, "steps_per_s": n * B / el})
    return records


def format_records(records) -> str:
    lines = [f"{'kernel':<9} {'batch':>6} {'mode':<12} {'steps/s':>14}"]
    for r in records:
        lines.append(f"{r['kernel']:<9} {r['batch']:>6} {r['mode']:<12} {r['steps_per_s']:>14.0f}")
    return "\n".join(lines)
