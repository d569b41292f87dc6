"""Scenario orchestration: plant, noise, agents, bus, and reference observer.

A :class:`Scenario` fully seeds an experiment; :func:`run_scenario` executes
the per-step barrier sequence

    plant step (noise, disturbances) -> sensing -> all predictions ->
    measurement triggers -> bus delivery -> all updates -> reference update ->
    optional synchronous reset -> all controls -> input triggers

and produces a complete trace, communication/error metrics, and (optionally)
the derived diagnostic signals.  Identical scenarios, including the seed,
produce bit-identical traces.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import multiprocessing
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import rng
from .bus import DropModel, drop_table
from .model import INF, GainSet, LtiPlant, NoiseSpec, validate_model
from .trigger import INPUT, MEASUREMENT, TriggerGroup, canonical_groups, validate_groups

IMPULSE = "impulse"
STEP = "step"

_NOISE_DOMAIN = {
    "process": rng.DOMAIN_PROCESS_NOISE,
    "sensor": rng.DOMAIN_SENSOR_NOISE,
    "input": rng.DOMAIN_INPUT_NOISE,
}


class OverflowAbort(RuntimeError):
    """Raised when a simulated magnitude leaves the declared ceiling."""

    def __init__(self, step: int, magnitude: float):
        super().__init__(f"numeric overflow at step {step} (|value| = {magnitude:.3e})")
        self.step = step
        self.magnitude = magnitude


@dataclass(frozen=True)
class Disturbance:
    """Additive disturbance over a step window.

    ``input`` targets add to the actuated input issued at steps within the
    window (entering the plant with the input lags); ``state`` targets add to
    the process-noise term of the transition into x(k) for k in the window.
    The magnitude vector spans the full input (q) or state (n) dimension.
    """

    kind: str
    target: str
    magnitude: np.ndarray
    k_start: int
    k_end: int

    def __post_init__(self):
        if self.kind not in (IMPULSE, STEP):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.target not in ("input", "state"):
            raise ValueError(f"unknown disturbance target {self.target!r}")
        mag = np.array(self.magnitude, dtype=float)
        mag.flags.writeable = False
        object.__setattr__(self, "magnitude", mag)
        if self.k_start > self.k_end:
            raise ValueError("disturbance window must have k_start <= k_end")

    def active(self, k: int) -> bool:
        return self.k_start <= k <= self.k_end


@dataclass(frozen=True)
class Scenario:
    """A fully seeded experiment description."""

    plant: LtiPlant
    noise: NoiseSpec
    gains: GainSet
    groups: tuple[TriggerGroup, ...]
    horizon: int
    seed: int = 0
    reset_period: int = 0
    drop_model: DropModel = DropModel()
    disturbances: tuple[Disturbance, ...] = ()
    x0: np.ndarray | None = None
    xhat0: tuple[np.ndarray, ...] | None = None
    xc0: np.ndarray | None = None
    reference: bool = True
    diagnostics: bool = True
    norm_order: float = INF
    overflow_limit: float = 1e12
    track_pairs: tuple[tuple[int, int], ...] = ()
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "groups", canonical_groups(self.groups))
        n, N = self.plant.n, self.plant.agents
        x0 = np.zeros(n) if self.x0 is None else np.array(self.x0, dtype=float)
        xc0 = np.zeros(n) if self.xc0 is None else np.array(self.xc0, dtype=float)
        if self.xhat0 is None:
            xhat0 = tuple(np.zeros(n) for _ in range(N))
        else:
            xh = [np.array(v, dtype=float) for v in self.xhat0]
            if len(xh) == 1 and N > 1:
                xh = [xh[0].copy() for _ in range(N)]
            xhat0 = tuple(xh)
        for a in (x0, xc0, *xhat0):
            a.flags.writeable = False
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "xc0", xc0)
        object.__setattr__(self, "xhat0", xhat0)
        pairs = self.track_pairs or tuple(
            (i, j) for i in range(1, N + 1) for j in range(i + 1, N + 1)
        )
        object.__setattr__(self, "track_pairs", tuple((int(i), int(j)) for i, j in pairs))

    def validate(self) -> list[str]:
        report = validate_model(self.plant, self.gains)
        report += validate_groups(self.plant, self.groups)
        n, p, q, N = self.plant.n, self.plant.p, self.plant.q, self.plant.agents
        if self.noise.v_bounds.shape != (n,):
            report.append(f"noise.v has length {self.noise.v_bounds.size}, expected {n}")
        if self.noise.w_bounds.shape != (p,):
            report.append(f"noise.w has length {self.noise.w_bounds.size}, expected {p}")
        if self.noise.input_noise_bounds.shape != (q,):
            report.append(
                f"noise.input has length {self.noise.input_noise_bounds.size}, expected {q}"
            )
        if self.horizon < 1:
            report.append(f"horizon must be >= 1, got {self.horizon}")
        if self.reset_period < 0:
            report.append("reset_period must be >= 0 (0 disables resets)")
        if self.x0.shape != (n,):
            report.append(f"x0 has length {self.x0.size}, expected {n}")
        if self.xc0.shape != (n,):
            report.append(f"xc0 has length {self.xc0.size}, expected {n}")
        if len(self.xhat0) != N:
            report.append(f"xhat0 provides {len(self.xhat0)} vectors, expected {N}")
        for i, v in enumerate(self.xhat0, start=1):
            if v.shape != (n,):
                report.append(f"xhat0[{i}] has length {v.size}, expected {n}")
        for d in self.disturbances:
            dim = q if d.target == "input" else n
            if d.magnitude.shape != (dim,):
                report.append(
                    f"disturbance magnitude has length {d.magnitude.size}, expected {dim}"
                )
            # windows clamp to the horizon; steps beyond it are inert, so a
            # truncated scenario stays valid
            if d.k_start < 0:
                report.append(f"disturbance window starts at {d.k_start}, before step 0")
        mgroups = [g for g in self.groups if g.kind == MEASUREMENT]
        for (k, gi, receiver) in self.drop_model.forced_drops:
            if not (0 <= gi < len(mgroups)):
                report.append(f"forced drop references unknown measurement group {gi}")
            elif mgroups[gi].agent == receiver:
                report.append("forced drop cannot target the sending agent")
            if not (1 <= receiver <= N):
                report.append(f"forced drop receiver {receiver} outside 1..{N}")
            if not (1 <= k <= self.horizon):
                report.append(f"forced drop step {k} outside 1..{self.horizon}")
        if self.norm_order not in (1, 2, INF):
            report.append(f"norm_order must be 1, 2 or inf, got {self.norm_order}")
        if self.overflow_limit <= 0:
            report.append("overflow_limit must be positive")
        for (i, j) in self.track_pairs:
            if not (1 <= i <= N and 1 <= j <= N and i != j):
                report.append(f"tracked pair ({i}, {j}) is not a valid agent pair")
        if self.diagnostics and not self.reference:
            report.append("diagnostics require the reference observer to be enabled")
        return report

    def canonical_dict(self) -> dict:
        """Stable, JSON-serializable image of the scenario (hash input)."""

        def arr(a):
            return np.asarray(a, dtype=float).tolist()

        return {
            "name": self.name,
            "plant": {
                "A": arr(self.plant.A),
                "input_blocks": [[lag, arr(B)] for lag, B in self.plant.input_blocks],
                "C": arr(self.plant.C),
                "p_dims": list(self.plant.p_dims),
                "q_dims": list(self.plant.q_dims),
                "sample_time": self.plant.sample_time,
            },
            "noise": {
                "v": arr(self.noise.v_bounds),
                "w": arr(self.noise.w_bounds),
                "input": arr(self.noise.input_noise_bounds),
            },
            "gains": {"L": arr(self.gains.L), "F": arr(self.gains.F)},
            "groups": [
                [g.agent, g.kind, list(g.indices), g.threshold, repr(g.norm_order)]
                for g in self.groups
            ],
            "horizon": self.horizon,
            "seed": self.seed,
            "reset_period": self.reset_period,
            "drop_model": {
                "p_drop_measurement": self.drop_model.p_drop_measurement,
                "per_receiver": self.drop_model.per_receiver,
                "forced_drops": sorted(self.drop_model.forced_drops),
            },
            "disturbances": [
                [d.kind, d.target, arr(d.magnitude), d.k_start, d.k_end]
                for d in self.disturbances
            ],
            "x0": arr(self.x0),
            "xhat0": [arr(v) for v in self.xhat0],
            "xc0": arr(self.xc0),
            "reference": self.reference,
            "diagnostics": self.diagnostics,
            "norm_order": repr(self.norm_order),
            "overflow_limit": self.overflow_limit,
            "track_pairs": [list(t) for t in self.track_pairs],
        }

    def scenario_hash(self) -> str:
        blob = json.dumps(self.canonical_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace(self, **kwargs) -> "Scenario":
        return dataclasses.replace(self, **kwargs)

    def scale_thresholds(self, scale: float) -> "Scenario":
        """Multiply every measurement and input threshold by a factor."""
        if scale < 0:
            raise ValueError("threshold scale must be >= 0")
        groups = tuple(
            dataclasses.replace(g, threshold=g.threshold * scale) for g in self.groups
        )
        return self.replace(groups=groups)


def noise_sample(noise: NoiseSpec, source: str, k: int, seed: int) -> np.ndarray:
    """Uniform noise vector for one step of one source stream.

    Pure function of (seed, source, k, coordinate); the simulation draws the
    same values whether sampled per step or pregenerated for a whole run.
    """
    domain = _NOISE_DOMAIN[source]
    bounds = {
        "process": noise.v_bounds,
        "sensor": noise.w_bounds,
        "input": noise.input_noise_bounds,
    }[source]
    out = np.empty(bounds.size)
    for j, hw in enumerate(bounds):
        if hw == 0.0:
            out[j] = 0.0
        else:
            key = rng.stream_key(seed, domain, j)
            out[j] = (2.0 * rng.uniform01(key, k) - 1.0) * hw
    return out


def _noise_table(bounds: np.ndarray, domain: int, seed: int, ks: np.ndarray) -> np.ndarray:
    """Vectorized noise pregeneration, bit-identical to :func:`noise_sample`."""
    table = np.zeros((ks.size, bounds.size))
    for j, hw in enumerate(bounds):
        if hw == 0.0:
            continue
        key = rng.stream_key(seed, domain, j)
        table[:, j] = (2.0 * rng.uniform01_array(key, ks) - 1.0) * hw
    return table


class SimTrace:
    """Complete per-step record of one scenario run.

    Rows cover steps k = 1..length (end-of-step values); initial conditions
    and the initialization input handshake are kept separately in ``init``.
    """

    def __init__(self, scenario: Scenario, columns, blocks, data, init):
        self.scenario = scenario
        self.columns = tuple(columns)
        self.blocks = dict(blocks)
        self.data = data
        self.init = init
        self.events: list[tuple] = []
        self.reset_snapshots: dict[int, np.ndarray] = {}
        self.overflow_step: int | None = None
        self.length = data.shape[0]

    def block(self, name: str) -> np.ndarray:
        start, width = self.blocks[name]
        return self.data[: self.length, start : start + width]

    def x(self) -> np.ndarray:
        return self.block("x")

    def y(self) -> np.ndarray:
        return self.block("y")

    def u(self) -> np.ndarray:
        return self.block("u")

    def uhat(self) -> np.ndarray:
        return self.block("uhat")

    def xc(self) -> np.ndarray:
        return self.block("xc")

    def epsc(self) -> np.ndarray:
        return self.block("epsc")

    def xhat(self, agent: int) -> np.ndarray:
        return self.block(f"xhat_{agent}")

    def trig_y(self) -> np.ndarray:
        return self.block("trig_y")

    def trig_u(self) -> np.ndarray:
        return self.block("trig_u")

    def reset_flags(self) -> np.ndarray:
        return self.block("reset")[:, 0]


def _column_layout(scenario: Scenario):
    plant = scenario.plant
    n, N, q = plant.n, plant.agents, plant.q
    mgroups = [g for g in scenario.groups if g.kind == MEASUREMENT]
    igroups = [g for g in scenario.groups if g.kind == INPUT]
    names: list[str] = []
    blocks: dict[str, tuple[int, int]] = {}

    def add(block: str, labels: list[str]):
        blocks[block] = (len(names), len(labels))
        names.extend(labels)

    add("k", ["k"])
    add("x", [f"x_{d}" for d in range(1, n + 1)])
    add(
        "y",
        [
            f"y_{i}_{j}"
            for i in range(1, N + 1)
            for j in range(1, plant.p_dims[i - 1] + 1)
        ],
    )
    add(
        "u",
        [
            f"u_{i}_{j}"
            for i in range(1, N + 1)
            for j in range(1, plant.q_dims[i - 1] + 1)
        ],
    )
    add("uhat", [f"uhat_{d}" for d in range(1, q + 1)])
    if scenario.reference:
        add("xc", [f"xc_{d}" for d in range(1, n + 1)])
        add("epsc", [f"epsc_{d}" for d in range(1, n + 1)])
    for i in range(1, N + 1):
        add(f"xhat_{i}", [f"xhat_{i}_{d}" for d in range(1, n + 1)])

    def ordinals(groups):
        counters: dict[int, int] = {}
        out = []
        for g in groups:
            counters[g.agent] = counters.get(g.agent, 0) + 1
            out.append((g.agent, counters[g.agent]))
        return out

    add("trig_y", [f"trig_y_{a}_{o}" for a, o in ordinals(mgroups)])
    add("trig_u", [f"trig_u_{a}_{o}" for a, o in ordinals(igroups)])
    add("reset", ["reset"])
    int_columns = {"k", "reset"} | {nm for nm in names if nm.startswith("trig_")}
    return names, blocks, int_columns, mgroups, igroups


@dataclass
class Metrics:
    """Normalized estimation error and communication of one run."""

    E: float
    C: float
    measurement_scalars: int
    input_scalars: int
    reset_scalars: int
    full_scalars_per_step: int
    steps: int
    rates: dict[str, np.ndarray] = field(default_factory=dict)


def _moving_average(flags: np.ndarray, window: int = 100) -> np.ndarray:
    """Trailing moving average with a growing window at the start."""
    c = np.cumsum(flags, dtype=float)
    out = np.empty_like(c)
    w = min(window, flags.size)
    out[:w] = c[:w] / np.arange(1, w + 1)
    if flags.size > window:
        out[window:] = (c[window:] - c[:-window]) / window
    return out


def compute_metrics(trace: SimTrace, window: int = 100) -> Metrics:
    """Normalized error E and communication C from a recorded trace.

    E averages the squared estimation error over steps and agents; C counts
    transmitted scalars (measurements, inputs, resets) against full periodic
    communication of every measurement and input each step.
    """
    scenario = trace.scenario
    plant = scenario.plant
    steps = trace.length
    x = trace.x()
    err_sum = 0.0
    for i in range(1, plant.agents + 1):
        eps = x - trace.xhat(i)
        err_sum += float((eps * eps).sum())
    E = err_sum / (steps * plant.agents)

    mgroups = [g for g in scenario.groups if g.kind == MEASUREMENT]
    igroups = [g for g in scenario.groups if g.kind == INPUT]
    trig_y = trace.trig_y()
    trig_u = trace.trig_u()
    m_scalars = int(sum(trig_y[:, gi].sum() * g.dim for gi, g in enumerate(mgroups)))
    i_scalars = int(sum(trig_u[:, gi].sum() * g.dim for gi, g in enumerate(igroups)))
    r_scalars = int(trace.reset_flags().sum()) * plant.agents * plant.n
    full = plant.p + plant.q
    C = (m_scalars + i_scalars + r_scalars) / (steps * full) if full else 0.0

    rates: dict[str, np.ndarray] = {}
    y_start = trace.blocks["trig_y"][0]
    u_start = trace.blocks["trig_u"][0]
    for gi in range(len(mgroups)):
        rates[trace.columns[y_start + gi]] = _moving_average(trig_y[:, gi], window)
    for gi in range(len(igroups)):
        rates[trace.columns[u_start + gi]] = _moving_average(trig_u[:, gi], window)

    return Metrics(
        E=E,
        C=C,
        measurement_scalars=m_scalars,
        input_scalars=i_scalars,
        reset_scalars=r_scalars,
        full_scalars_per_step=full,
        steps=steps,
        rates=rates,
    )


def _norm_code(order: float) -> int:
    return {1: 1, 2: 2, INF: 0}[order]


def _fast_norm(vec: np.ndarray, code: int) -> float:
    if code == 0:
        return float(np.abs(vec).max()) if vec.size > 1 else abs(float(vec[0]))
    if code == 1:
        return float(np.abs(vec).sum())
    return float(np.sqrt((vec * vec).sum()))


def run_scenario(scenario: Scenario, overflow: str = "raise"):
    """Execute one scenario; deterministic given the embedded seed.

    Returns (trace, metrics, diagnostics); diagnostics is None unless both
    the reference observer and diagnostics are enabled.  ``overflow``
    chooses between raising :class:`OverflowAbort` and stopping early with
    ``trace.overflow_step`` set.
    """
    problems = scenario.validate()
    if problems:
        raise ValueError("invalid scenario:\n  " + "\n  ".join(problems))
    if overflow not in ("raise", "stop"):
        raise ValueError("overflow must be 'raise' or 'stop'")

    plant, gains, seed = scenario.plant, scenario.gains, scenario.seed
    n, N, p, q = plant.n, plant.agents, plant.p, plant.q
    H = scenario.horizon
    A = plant.A
    lag_blocks = list(plant.input_blocks)
    K = scenario.reset_period
    limit = scenario.overflow_limit

    names, blocks, _, mgroups, igroups = _column_layout(scenario)
    out_offs = plant.output_offsets()
    in_offs = plant.input_offsets()

    def contiguous(idx):
        lo, hi = idx.min(), idx.max()
        return slice(int(lo), int(hi) + 1) if np.array_equal(idx, np.arange(lo, hi + 1)) else idx

    i_compiled = []
    for g in igroups:
        idx = np.array([in_offs[g.agent - 1] + i for i in g.indices])
        i_compiled.append((contiguous(idx), g.threshold, _norm_code(g.norm_order), g.dim))
    f_blocks = [
        (plant.input_slice(i), gains.F_block(plant, i)) for i in range(1, N + 1)
    ]

    _subset_cache: dict[int, tuple] = {}
    _m_indices = [
        np.array([out_offs[g.agent - 1] + i for i in g.indices]) for g in mgroups
    ]

    # all trigger innovations in one product: row block gi of T maps the
    # owner's flattened prediction to that group's predicted output
    trig_gather = (
        np.concatenate(_m_indices) if mgroups else np.array([], dtype=int)
    )
    total_tdim = trig_gather.size
    T = np.zeros((total_tdim, N * n))
    trig_meta = []
    off = 0
    for gi, g in enumerate(mgroups):
        owner = g.agent - 1
        dim = g.dim
        T[off : off + dim, owner * n : (owner + 1) * n] = plant.C[_m_indices[gi], :]
        trig_meta.append((off, dim, g.threshold, _norm_code(g.norm_order), owner))
        off += dim
    T_T = T.T.copy()

    def subset_mats(mask: int):
        """Transposed stacked (C_J, L_J) for one received subset bitmask."""
        cached = _subset_cache.get(mask)
        if cached is None:
            members = [gi for gi in range(len(mgroups)) if mask & (1 << gi)]
            idx = np.concatenate([_m_indices[gi] for gi in members])
            cached = (
                contiguous(idx),
                plant.C[idx, :].T.copy(),
                gains.L[:, idx].T.copy(),
            )
            _subset_cache[mask] = cached
        return cached

    if mgroups:
        idx_all, C_all_T, L_all_T = subset_mats((1 << len(mgroups)) - 1)
    else:
        idx_all, C_all_T, L_all_T = slice(0, 0), np.zeros((n, 0)), np.zeros((0, n))

    ks = np.arange(1, H + 1, dtype=np.uint64)
    ks0 = np.arange(0, H + 1, dtype=np.uint64)
    V = _noise_table(scenario.noise.v_bounds, rng.DOMAIN_PROCESS_NOISE, seed, ks)
    W = _noise_table(scenario.noise.w_bounds, rng.DOMAIN_SENSOR_NOISE, seed, ks)
    ETA = _noise_table(scenario.noise.input_noise_bounds, rng.DOMAIN_INPUT_NOISE, seed, ks0)

    dist_state = None
    dist_input = None
    for d in scenario.disturbances:
        if d.target == "state":
            if dist_state is None:
                dist_state = np.zeros((H + 1, n))
            lo, hi = max(d.k_start, 1), min(d.k_end, H)
            dist_state[lo : hi + 1] += d.magnitude
        else:
            if dist_input is None:
                dist_input = np.zeros((H + 1, q))
            dist_input[d.k_start : d.k_end + 1] += d.magnitude

    drops = drop_table(
        scenario.drop_model, seed, H, [g.agent for g in mgroups], N
    )

    data = np.zeros((H, len(names)))
    trace = SimTrace(scenario, names, blocks, data, init={})
    events = trace.events

    x = scenario.x0.copy()
    xc = scenario.xc0.copy()
    # all agents' posteriors as rows of one matrix; per-step phases are then
    # single matrix products over every agent at once
    XI = np.array([v for v in scenario.xhat0])

    u0 = np.zeros(q)
    for i in range(N):
        sl, Fi = f_blocks[i]
        u0[sl] = Fi @ XI[i]
    uhat = u0.copy()
    ulast = u0.copy()

    max_lag = plant.max_lag
    zeros_q = np.zeros(q)
    hist_app = [zeros_q.copy() for _ in range(max_lag)]
    hist_cmd = [zeros_q.copy() for _ in range(max_lag)]
    hist_hat = [zeros_q.copy() for _ in range(max_lag)]
    u_app0 = u0 + ETA[0]
    if dist_input is not None:
        u_app0 = u_app0 + dist_input[0]
    hist_app.insert(0, u_app0)
    hist_app.pop()
    hist_cmd.insert(0, u0.copy())
    hist_cmd.pop()
    hist_hat.insert(0, uhat.copy())
    hist_hat.pop()

    trace.init = {
        "x0": scenario.x0.copy(),
        "xc0": scenario.xc0.copy(),
        "xhat0": [v.copy() for v in scenario.xhat0],
        "u0": u0.copy(),
        "uhat0": uhat.copy(),
    }

    use_ref = scenario.reference
    n_mg = len(mgroups)
    reset_col = blocks["reset"][0]
    k_col = blocks["k"][0]

    def block_slice(name):
        start, width = blocks[name]
        return slice(start, start + width)

    x_sl = block_slice("x")
    y_sl = block_slice("y")
    u_sl = block_slice("u")
    uh_sl = block_slice("uhat")
    if use_ref:
        xc_sl = block_slice("xc")
        ec_sl = block_slice("epsc")
    # the per-agent xhat blocks are adjacent, so all posteriors write at once
    xi_all_sl = slice(blocks["xhat_1"][0], blocks[f"xhat_{N}"][0] + n)
    ty_start = blocks["trig_y"][0]
    tu_start = blocks["trig_u"][0]

    m_scalars = 0
    i_scalars = 0
    r_scalars = 0
    overflow_step = None
    single_lag = len(lag_blocks) == 1
    B1 = lag_blocks[0][1]
    Cmat = plant.C
    A_T = A.T.copy()
    F_T = gains.F.T.copy()
    in_slices = [sl for sl, _ in f_blocks]

    for k in range(1, H + 1):
        if single_lag:
            xn = A @ x + B1 @ hist_app[0]
        else:
            xn = A @ x
            for lag, B in lag_blocks:
                xn += B @ hist_app[lag - 1]
        xn += V[k - 1]
        if dist_state is not None:
            xn += dist_state[k]
        x = xn
        y = Cmat @ x + W[k - 1]

        if single_lag:
            bu_hat = B1 @ hist_hat[0]
            bu_cmd = B1 @ hist_cmd[0]
        else:
            bu_hat = np.zeros(n)
            bu_cmd = np.zeros(n)
            for lag, B in lag_blocks:
                bu_hat += B @ hist_hat[lag - 1]
                bu_cmd += B @ hist_cmd[lag - 1]
        XP = XI @ A_T + bu_hat

        fired = []
        fired_mask = 0
        row = data[k - 1]
        if n_mg:
            innov_all = y[trig_gather] - XP.ravel() @ T_T
            for gi in range(n_mg):
                off, dim, delta, ncode, owner = trig_meta[gi]
                if dim == 1:
                    val = innov_all[off]
                    gap = val if val >= 0.0 else -val
                else:
                    gap = _fast_norm(innov_all[off : off + dim], ncode)
                if gap >= delta:
                    fired.append((gi, owner))
                    fired_mask |= 1 << gi
                    row[ty_start + gi] = 1.0
                    m_scalars += dim

        # posterior = prediction + stacked-gain correction for the received
        # subset; stacking in canonical group order equals the group-by-group
        # sum, cached per subset bitmask and applied to all receivers at once
        if fired_mask:
            if drops is None:
                idxJ, CJ_T, LJ_T = subset_mats(fired_mask)
                XI = XP + (y[idxJ] - XP @ CJ_T) @ LJ_T
                for gi, owner in fired:
                    events.append((k, MEASUREMENT, owner + 1, gi, ()))
            else:
                drow = drops[k - 1]
                by_mask: dict[int, list[int]] = {}
                for i in range(N):
                    mask_i = fired_mask
                    for gi, owner in fired:
                        if drow[gi, i]:
                            mask_i &= ~(1 << gi)
                    by_mask.setdefault(mask_i, []).append(i)
                if len(by_mask) == 1 and fired_mask in by_mask:
                    idxJ, CJ_T, LJ_T = subset_mats(fired_mask)
                    XI = XP + (y[idxJ] - XP @ CJ_T) @ LJ_T
                else:
                    XI = XP.copy()
                    for mask_i, members in by_mask.items():
                        if not mask_i:
                            continue
                        idxJ, CJ_T, LJ_T = subset_mats(mask_i)
                        sub = XP[members]
                        XI[members] = sub + (y[idxJ] - sub @ CJ_T) @ LJ_T
                for gi, owner in fired:
                    dropped = tuple(
                        r + 1 for r in range(N) if drow[gi, r] and r != owner
                    )
                    events.append((k, MEASUREMENT, owner + 1, gi, dropped))
        else:
            XI = XP

        if use_ref:
            xc_pred = A @ xc + bu_cmd
            xc = xc_pred + (y[idx_all] - xc_pred @ C_all_T) @ L_all_T

        if K > 0 and k % K == 0:
            trace.reset_snapshots[k] = XI.copy()
            xbar = XI.mean(axis=0)
            XI = np.tile(xbar, (N, 1))
            r_scalars += N * n
            for i in range(1, N + 1):
                events.append((k, "reset", i, -1, ()))
            row[reset_col] = 1.0

        FX = XI @ F_T
        u = np.empty(q)
        for i in range(N):
            sl = in_slices[i]
            u[sl] = FX[i, sl]

        for gj in range(len(i_compiled)):
            idx, delta, ncode, dim = i_compiled[gj]
            if delta == 0.0 or _fast_norm(u[idx] - ulast[idx], ncode) >= delta:
                ulast[idx] = u[idx]
                uhat[idx] = u[idx]
                row[tu_start + gj] = 1.0
                i_scalars += dim
                events.append((k, INPUT, igroups[gj].agent, gj, ()))

        u_app = u + ETA[k]
        if dist_input is not None:
            u_app = u_app + dist_input[k]
        hist_app.insert(0, u_app)
        hist_app.pop()
        hist_cmd.insert(0, u)
        hist_cmd.pop()
        hist_hat.insert(0, uhat.copy())
        hist_hat.pop()

        row[k_col] = k
        row[x_sl] = x
        row[y_sl] = y
        row[u_sl] = u
        row[uh_sl] = uhat
        if use_ref:
            row[xc_sl] = xc
            row[ec_sl] = x - xc
        row[xi_all_sl] = XI.ravel()

        mag = float(np.abs(row[1:]).max())
        if not np.isfinite(mag) or mag > limit:
            overflow_step = k
            break

    if overflow_step is not None:
        trace.overflow_step = overflow_step
        trace.length = overflow_step
        if overflow == "raise":
            raise OverflowAbort(overflow_step, mag)

    metrics = compute_metrics(trace)
    diagnostics = None
    if scenario.diagnostics and scenario.reference:
        from .analysis import diagnostics_from_trace

        diagnostics = diagnostics_from_trace(trace)
    return trace, metrics, diagnostics


@dataclass
class RunSummary:
    """Reduced per-run statistics, cheap enough for large seed batches."""

    seed: int
    E: float
    C: float
    sup_emulation_gap: float | None
    sup_input_gap: float
    sup_state: float
    pair_sup: dict[tuple[int, int], float]
    overflow_step: int | None


def summarize_run(trace: SimTrace, metrics: Metrics, diagnostics) -> RunSummary:
    scenario = trace.scenario
    N = scenario.plant.agents
    sup_gap = None
    if scenario.reference:
        xc = trace.xc()
        sup_gap = 0.0
        for i in range(1, N + 1):
            gap = np.abs(xc - trace.xhat(i)).max(axis=1)
            sup_gap = max(sup_gap, float(gap.max()))
    u_tilde = np.abs(trace.u() - trace.uhat()).max() if scenario.plant.q else 0.0
    pair_sup = {}
    for (i, j) in scenario.track_pairs:
        pair_sup[(i, j)] = float(np.abs(trace.xhat(i) - trace.xhat(j)).max())
    return RunSummary(
        seed=scenario.seed,
        E=metrics.E,
        C=metrics.C,
        sup_emulation_gap=sup_gap,
        sup_input_gap=float(u_tilde),
        sup_state=float(np.abs(trace.x()).max()),
        pair_sup=pair_sup,
        overflow_step=trace.overflow_step,
    )


def _run_one(task):
    scenario, seed, reducer = task
    out = run_scenario(scenario.replace(seed=seed), overflow="stop")
    return reducer(*out)


def run_many(
    scenario: Scenario,
    seeds,
    jobs: int = 1,
    reducer: Callable = summarize_run,
) -> list:
    """Run one scenario under many seeds, optionally in parallel processes.

    Scenario runs share no mutable state, so process-level parallelism is
    safe; the reducer maps each (trace, metrics, diagnostics) triple to a
    small picklable result.
    """
    tasks = [(scenario, int(s), reducer) for s in seeds]
    if jobs <= 1 or len(tasks) == 1:
        return [_run_one(t) for t in tasks]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(processes=jobs) as pool:
        return pool.map(_run_one, tasks, chunksize=max(1, len(tasks) // (4 * jobs)))
