"""Hardware-agnostic energy/latency proxies under zero-skipping.

A zero-skipping accelerator performs a multiply-accumulate only when both
operands are nonzero.  Counting those MACs on a concrete batch gives an
energy proxy (and, assuming one MAC per cycle, a latency proxy) that is
deterministic, unlike wall-clock or power-meter readings.
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .model import ForwardTrace, MlpModel, forward
from .tensor_core import Node

REPORT_COLUMNS = ("mean_density", "energy_ratio", "proxy_energy", "worst_case_energy", "latency_ops", "wall_clock_seconds")


@dataclass
class EnergyReport:
    per_layer_density: list[float]
    mean_density: float
    proxy_energy: float
    worst_case_energy: float
    energy_ratio: float
    latency_ops: int
    wall_clock_seconds: float = 0.0

    def row(self) -> list[str]:
        return [
            f"{self.mean_density:.6g}",
            f"{self.energy_ratio:.6g}",
            f"{self.proxy_energy:.6g}",
            f"{self.worst_case_energy:.6g}",
            str(self.latency_ops),
            f"{self.wall_clock_seconds:.6f}",
        ]


def _values(act) -> np.ndarray:
    return act.value if isinstance(act, Node) else np.asarray(act)


def density(trace: ForwardTrace, threshold: float = 0.0) -> list[float]:
    """Fraction of hidden activations with ``|v| > threshold``, one entry per hidden layer."""
    if threshold < 0:
        raise ValidationError(f"threshold must be non-negative, got {threshold}")
    return [float(np.mean(np.abs(_values(a)) > threshold)) for a in trace.hidden_activations]


def layer_macs(inputs: np.ndarray, weight: np.ndarray, threshold: float = 0.0) -> tuple[int, int]:
    """(executed, worst-case) MAC counts of ``inputs @ weight`` with zero operands skipped."""
    live_in = (np.abs(inputs) > threshold).astype(np.int64)
    live_w = (weight != 0.0).astype(np.int64)
    executed = int((live_in.sum(axis=0) * live_w.sum(axis=1)).sum())
    return executed, inputs.shape[0] * weight.size


def energy_proxy(model: MlpModel, x, threshold: float = 0.0, timing_repeats: int = 0) -> EnergyReport:
    """Count the MACs a zero-skipping engine would execute for batch ``x``.

    The input layer counts raw feature zeros; later layers use the post-ReLU
    activations of this batch.  ``timing_repeats > 0`` also fills the
    informational ``wall_clock_seconds``.
    """
    trace = forward(model, x)
    inputs = [trace_input(x)] + [_values(a) for a in trace.hidden_activations]
    executed = worst = 0
    for a, w in zip(inputs, model.weights):
        e, wc = layer_macs(a, w, threshold)
        executed += e
        worst += wc
    per_layer = density(trace, threshold)
    seconds = wall_clock_latency(model, x, timing_repeats) if timing_repeats > 0 else 0.0
    return EnergyReport(
        per_layer_density=per_layer,
        mean_density=float(np.mean(per_layer)),
        proxy_energy=float(executed),
        worst_case_energy=float(worst),
        energy_ratio=executed / worst if worst else 0.0,
        latency_ops=executed,
        wall_clock_seconds=seconds,
    )


def trace_input(x) -> np.ndarray:
    return _values(x) if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def wall_clock_latency(model: MlpModel, x, repeats: int = 5) -> float:
    """Median seconds per forward pass over ``repeats`` runs.  Informational only."""
    if repeats < 1:
        raise ValidationError(f"repeats must be at least 1, got {repeats}")
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        forward(model, x)
        samples.append(time.perf_counter() - t0)
    return max(statistics.median(samples), 1e-9)


def write_report_csv(reports: list[EnergyReport], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for rep in reports:
            writer.writerow(rep.row())
