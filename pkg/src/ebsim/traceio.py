"""CSV and sidecar serialization of traces, events, and metrics.

Dialect: comma separators, ``.`` decimals, LF line endings, mandatory header
row.  Floats are written with shortest round-trip repr, so identical runs
serialize to identical bytes.  Lines starting with ``#`` ahead of the header
echo the scenario (matrices, hash, seed) for audit.
"""

from __future__ import annotations

import json
from typing import IO

import numpy as np

from .sim import Metrics, SimTrace


def _fmt(value: float, as_int: bool) -> str:
    if as_int:
        return str(int(value))
    return repr(float(value))


def _header_comments(trace: SimTrace) -> list[str]:
    scenario = trace.scenario
    plant = scenario.plant
    lines = [
        f"# scenario={scenario.name}",
        f"# scenario_hash={scenario.scenario_hash()}",
        f"# seed={scenario.seed}",
        f"# A={json.dumps(plant.A.tolist())}",
    ]
    for lag, B in plant.input_blocks:
        lines.append(f"# B_lag{lag}={json.dumps(B.tolist())}")
    lines.append(f"# C={json.dumps(plant.C.tolist())}")
    lines.append(f"# L={json.dumps(scenario.gains.L.tolist())}")
    lines.append(f"# F={json.dumps(scenario.gains.F.tolist())}")
    return lines


def write_trace_csv(trace: SimTrace, f: IO[str]) -> None:
    """One row per executed step, after the scenario-echo comment block."""
    for line in _header_comments(trace):
        f.write(line + "\n")
    f.write(",".join(trace.columns) + "\n")
    int_cols = np.array(
        [c == "k" or c == "reset" or c.startswith("trig_") for c in trace.columns]
    )
    data = trace.data[: trace.length]
    for row in data:
        f.write(",".join(_fmt(v, ic) for v, ic in zip(row, int_cols)) + "\n")


def write_events_csv(trace: SimTrace, f: IO[str]) -> None:
    """One row per bus message with per-receiver drop bits."""
    N = trace.scenario.plant.agents
    groups = list(trace.scenario.groups)
    header = ["k", "kind", "sender", "group"] + [f"drop_{i}" for i in range(1, N + 1)]
    f.write(",".join(header) + "\n")
    mgroups = [g for g in groups if g.kind == "measurement"]
    igroups = [g for g in groups if g.kind == "input"]

    def ordinal(kind: str, gi: int) -> int:
        src = mgroups if kind == "measurement" else igroups
        agent = src[gi].agent
        return sum(1 for g in src[: gi + 1] if g.agent == agent)

    for (k, kind, sender, gi, dropped) in trace.events:
        group_label = 0 if gi < 0 else ordinal(kind, gi)
        bits = ["1" if (i in dropped) else "0" for i in range(1, N + 1)]
        f.write(f"{k},{kind},{sender},{group_label}," + ",".join(bits) + "\n")


def write_metrics(metrics: Metrics, trace: SimTrace, f: IO[str]) -> None:
    """Flat key=value sidecar."""
    scenario = trace.scenario
    items = [
        ("scenario", scenario.name),
        ("scenario_hash", scenario.scenario_hash()),
        ("seed", scenario.seed),
        ("steps", metrics.steps),
        ("E", repr(metrics.E)),
        ("C", repr(metrics.C)),
        ("measurement_scalars", metrics.measurement_scalars),
        ("input_scalars", metrics.input_scalars),
        ("reset_scalars", metrics.reset_scalars),
        ("full_scalars_per_step", metrics.full_scalars_per_step),
        ("overflow_step", -1 if trace.overflow_step is None else trace.overflow_step),
    ]
    for key, value in items:
        f.write(f"{key}={value}\n")
