"""Scenario files: TOML schema parsing and validation.

A scenario file contains the sections

    [plant]            n-state model: A, input_blocks (lag + B), C, p, q, sample_time
    [gains]            L (n x p) and F (q x n), row-major nested arrays
    [noise]            per-coordinate uniform half-widths: v, w, input
    [[triggers.measurement]] / [[triggers.input]]
                       agent (1-based), indices (1-based, local to the agent's
                       slice), threshold, norm ("inf", "1", "2")
    [bus]              p_drop_measurement, per_receiver, forced_drops
    [[disturbances]]   kind, target, window, channel+magnitude or vector
    [run]              horizon, seed, reset_period, reference, diagnostics,
                       x0 / xhat0 / xc0, overflow_limit, norm, track_pairs
    [sweep]            (optional) scales, seeds, seed_base for trade-off sweeps

All matrices are row-major nested arrays.  Agent ids and coordinate indices
are 1-based in files and converted to the library's conventions on load.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .bus import DropModel
from .model import INF, GainSet, LtiPlant, NoiseSpec
from .sim import Disturbance, Scenario
from .trigger import INPUT, MEASUREMENT, TriggerGroup


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario file; message carries field paths."""


_NORM_NAMES = {"inf": INF, "1": 1.0, "2": 2.0, 1: 1.0, 2: 2.0}


def _require(table: dict, key: str, path: str):
    if key not in table:
        raise ScenarioError(f"missing required field [{path}] {key}")
    return table[key]


def _norm_order(value, path: str) -> float:
    try:
        return _NORM_NAMES[value]
    except KeyError:
        raise ScenarioError(f"[{path}] norm must be one of 'inf', '1', '2', got {value!r}")


def _parse_plant(table: dict) -> LtiPlant:
    A = np.array(_require(table, "A", "plant"), dtype=float)
    C = np.array(_require(table, "C", "plant"), dtype=float)
    p_dims = tuple(int(v) for v in _require(table, "p", "plant"))
    q_dims = tuple(int(v) for v in _require(table, "q", "plant"))
    blocks = []
    if "B" in table and "input_blocks" in table:
        raise ScenarioError("[plant] give either B (lag 1 shorthand) or input_blocks")
    if "B" in table:
        blocks.append((1, np.array(table["B"], dtype=float)))
    else:
        for i, entry in enumerate(_require(table, "input_blocks", "plant")):
            lag = int(_require(entry, "lag", f"plant.input_blocks[{i}]"))
            B = np.array(_require(entry, "B", f"plant.input_blocks[{i}]"), dtype=float)
            blocks.append((lag, B))
    try:
        return LtiPlant(
            A=A,
            input_blocks=tuple(blocks),
            C=C,
            p_dims=p_dims,
            q_dims=q_dims,
            sample_time=float(table.get("sample_time", 1.0)),
        )
    except ValueError as exc:
        raise ScenarioError(f"[plant] {exc}") from exc


def _parse_triggers(table: dict, kind: str, path: str) -> list[TriggerGroup]:
    groups = []
    for i, entry in enumerate(table.get(kind, [])):
        agent = int(_require(entry, "agent", f"{path}.{kind}[{i}]"))
        indices = [int(v) - 1 for v in _require(entry, "indices", f"{path}.{kind}[{i}]")]
        threshold = float(_require(entry, "threshold", f"{path}.{kind}[{i}]"))
        norm = _norm_order(entry.get("norm", "inf"), f"{path}.{kind}[{i}]")
        try:
            groups.append(
                TriggerGroup(
                    agent=agent,
                    kind=MEASUREMENT if kind == "measurement" else INPUT,
                    indices=tuple(indices),
                    threshold=threshold,
                    norm_order=norm,
                )
            )
        except ValueError as exc:
            raise ScenarioError(f"[{path}.{kind}[{i}]] {exc}") from exc
    return groups


def _parse_disturbance(entry: dict, i: int, plant: LtiPlant) -> Disturbance:
    path = f"disturbances[{i}]"
    kind = _require(entry, "kind", path)
    target = _require(entry, "target", path)
    window = _require(entry, "window", path)
    if len(window) != 2:
        raise ScenarioError(f"[{path}] window must be [k_start, k_end]")
    dim = plant.q if target == "input" else plant.n
    if "magnitude" in entry and "channel" in entry:
        mag = np.zeros(dim)
        channel = int(entry["channel"]) - 1
        if not 0 <= channel < dim:
            raise ScenarioError(f"[{path}] channel {entry['channel']} outside 1..{dim}")
        mag[channel] = float(entry["magnitude"])
    elif "magnitude" in entry:
        mag = np.array(entry["magnitude"], dtype=float)
        if mag.ndim == 0:
            raise ScenarioError(f"[{path}] scalar magnitude requires a channel")
    else:
        raise ScenarioError(f"[{path}] missing magnitude")
    try:
        return Disturbance(
            kind=kind,
            target=target,
            magnitude=mag,
            k_start=int(window[0]),
            k_end=int(window[1]),
        )
    except ValueError as exc:
        raise ScenarioError(f"[{path}] {exc}") from exc


def scenario_from_dict(doc: dict, name: str = "scenario") -> Scenario:
    if "plant" not in doc:
        raise ScenarioError("missing required section [plant]")
    plant = _parse_plant(doc["plant"])

    gains_tbl = doc.get("gains")
    if gains_tbl is None:
        raise ScenarioError("missing required section [gains]")
    gains = GainSet(
        L=np.array(_require(gains_tbl, "L", "gains"), dtype=float),
        F=np.array(_require(gains_tbl, "F", "gains"), dtype=float),
    )

    noise_tbl = doc.get("noise", {})
    noise = NoiseSpec(
        v_bounds=np.array(noise_tbl.get("v", [0.0] * plant.n), dtype=float),
        w_bounds=np.array(noise_tbl.get("w", [0.0] * plant.p), dtype=float),
        input_noise_bounds=np.array(noise_tbl.get("input", [0.0] * plant.q), dtype=float),
    )

    trig_tbl = doc.get("triggers", {})
    groups = _parse_triggers(trig_tbl, "measurement", "triggers")
    groups += _parse_triggers(trig_tbl, "input", "triggers")

    bus_tbl = doc.get("bus", {})
    forced = []
    for i, entry in enumerate(bus_tbl.get("forced_drops", [])):
        if len(entry) != 3:
            raise ScenarioError(f"[bus.forced_drops[{i}]] expects [k, group, receiver]")
        k, group, receiver = (int(v) for v in entry)
        forced.append((k, group - 1, receiver))
    drop_model = DropModel(
        p_drop_measurement=float(bus_tbl.get("p_drop_measurement", 0.0)),
        per_receiver=bool(bus_tbl.get("per_receiver", True)),
        forced_drops=frozenset(forced),
    )

    disturbances = tuple(
        _parse_disturbance(entry, i, plant) for i, entry in enumerate(doc.get("disturbances", []))
    )

    run_tbl = doc.get("run")
    if run_tbl is None:
        raise ScenarioError("missing required section [run]")
    horizon = int(_require(run_tbl, "horizon", "run"))

    def vec(key, default=None):
        if key not in run_tbl:
            return default
        return np.array(run_tbl[key], dtype=float)

    xhat0 = None
    if "xhat0" in run_tbl:
        raw = run_tbl["xhat0"]
        if raw and isinstance(raw[0], list):
            xhat0 = tuple(np.array(v, dtype=float) for v in raw)
        else:
            xhat0 = (np.array(raw, dtype=float),)

    track_pairs = tuple(
        (int(a), int(b)) for a, b in run_tbl.get("track_pairs", [])
    )

    scenario = Scenario(
        plant=plant,
        noise=noise,
        gains=gains,
        groups=tuple(groups),
        horizon=horizon,
        seed=int(run_tbl.get("seed", 0)),
        reset_period=int(run_tbl.get("reset_period", 0)),
        drop_model=drop_model,
        disturbances=disturbances,
        x0=vec("x0"),
        xhat0=xhat0,
        xc0=vec("xc0"),
        reference=bool(run_tbl.get("reference", True)),
        diagnostics=bool(run_tbl.get("diagnostics", True)),
        norm_order=_norm_order(run_tbl.get("norm", "inf"), "run"),
        overflow_limit=float(run_tbl.get("overflow_limit", 1e12)),
        track_pairs=track_pairs,
        name=name,
    )
    problems = scenario.validate()
    if problems:
        raise ScenarioError("invalid scenario:\n  " + "\n  ".join(problems))
    return scenario


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario TOML file."""
    path = Path(path)
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: TOML parse error: {exc}") from exc
    return scenario_from_dict(doc, name=path.stem)


def sweep_grid(path) -> tuple[Scenario, list[float], list[int]]:
    """Scenario plus the sweep grid ([sweep] section) from one file.

    The optional ``horizon`` key shortens each grid-point run relative to
    the scenario's own horizon.
    """
    path = Path(path)
    with open(path, "rb") as f:
        doc = tomllib.load(f)
    scenario = scenario_from_dict(doc, name=path.stem)
    sweep = doc.get("sweep")
    if not sweep:
        raise ScenarioError(f"{path}: missing [sweep] section")
    scales = [float(s) for s in sweep.get("scales", [])]
    if not scales:
        raise ScenarioError(f"{path}: [sweep] scales must be a non-empty list")
    if any(s < 0 for s in scales):
        raise ScenarioError(f"{path}: [sweep] scales must be >= 0")
    if "horizon" in sweep:
        scenario = scenario.replace(horizon=int(sweep["horizon"]))
    n_seeds = int(sweep.get("seeds", 10))
    base = int(sweep.get("seed_base", 0))
    return scenario, scales, list(range(base, base + n_seeds))
