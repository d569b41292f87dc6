"""Partitioned discrete-time LTI plant, gain sets, and spectral primitives.

The plant is shared by the true process, the centralized reference observer,
every agent's local observer, and the stability analysis.  Inputs may enter
with one or more delays; the public model keeps the compact lagged form

    x(k) = A x(k-1) + sum_l B_l u(k-l) + v(k-1)
    y(k) = C x(k) + w(k)

while :func:`augmented_system` exposes the equivalent single-lag form
(state plus delayed-input registers) used for closed-loop spectral checks.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

INF = float("inf")


def _freeze(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def vector_norm(v: np.ndarray, order: float = INF) -> float:
    """Holder q-norm of a vector for q in {1, 2, inf}."""
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return 0.0
    if order == INF:
        return float(np.abs(v).max())
    if order == 1:
        return float(np.abs(v).sum())
    if order == 2:
        return float(np.sqrt((v * v).sum()))
    raise ValueError(f"unsupported norm order {order!r}")


def matrix_norm(M: np.ndarray, order: float = INF) -> float:
    """Matrix norm induced by the vector q-norm."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    if order == INF:
        return float(np.abs(M).sum(axis=1).max())
    if order == 1:
        return float(np.abs(M).sum(axis=0).max())
    if order == 2:
        return float(np.linalg.norm(M, 2))
    raise ValueError(f"unsupported norm order {order!r}")


def spectral_radius(M: np.ndarray) -> float:
    """Largest eigenvalue magnitude of a square matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"spectral_radius requires a square matrix, got shape {M.shape}")
    if M.size == 0:
        return 0.0
    if not np.isfinite(M).all():
        raise ValueError("spectral_radius requires finite entries")
    return float(np.abs(np.linalg.eigvals(M)).max())


@dataclass(frozen=True)
class LtiPlant:
    """Discrete-time plant with per-agent output/input partitions.

    ``input_blocks`` maps lag l >= 1 to the n x q matrix B_l; lag 1 must be
    present.  ``p_dims``/``q_dims`` give each agent's output/input dimension
    (zero allowed for agents without sensors or actuators).
    """

    A: np.ndarray
    input_blocks: tuple[tuple[int, np.ndarray], ...]
    C: np.ndarray
    p_dims: tuple[int, ...]
    q_dims: tuple[int, ...]
    sample_time: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "A", _freeze(self.A))
        object.__setattr__(self, "C", _freeze(np.atleast_2d(self.C)))
        blocks = tuple(sorted((int(lag), _freeze(B)) for lag, B in self.input_blocks))
        object.__setattr__(self, "input_blocks", blocks)
        object.__setattr__(self, "p_dims", tuple(int(d) for d in self.p_dims))
        object.__setattr__(self, "q_dims", tuple(int(d) for d in self.q_dims))
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1]:
            raise ValueError("A must be a square matrix")
        if not blocks:
            raise ValueError("input_blocks must not be empty")
        lags = [lag for lag, _ in blocks]
        if len(set(lags)) != len(lags):
            raise ValueError("input_blocks must have distinct lags")
        if 1 not in lags:
            raise ValueError("input_blocks must include lag 1")
        if any(lag < 1 for lag in lags):
            raise ValueError("input lags must be >= 1")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def agents(self) -> int:
        return len(self.p_dims)

    @property
    def p(self) -> int:
        return sum(self.p_dims)

    @property
    def q(self) -> int:
        return sum(self.q_dims)

    @property
    def max_lag(self) -> int:
        return self.input_blocks[-1][0]

    @property
    def B(self) -> np.ndarray:
        """The lag-1 input matrix."""
        return dict(self.input_blocks)[1]

    def output_offsets(self) -> tuple[int, ...]:
        """Start index of each agent's slice in the stacked output vector."""
        out, acc = [], 0
        for d in self.p_dims:
            out.append(acc)
            acc += d
        return tuple(out)

    def input_offsets(self) -> tuple[int, ...]:
        out, acc = [], 0
        for d in self.q_dims:
            out.append(acc)
            acc += d
        return tuple(out)

    def output_slice(self, agent: int) -> slice:
        """Stacked-output slice of a 1-based agent id."""
        off = self.output_offsets()[agent - 1]
        return slice(off, off + self.p_dims[agent - 1])

    def input_slice(self, agent: int) -> slice:
        off = self.input_offsets()[agent - 1]
        return slice(off, off + self.q_dims[agent - 1])

    def matrix_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.A.tobytes())
        for lag, B in self.input_blocks:
            h.update(str(lag).encode())
            h.update(B.tobytes())
        h.update(self.C.tobytes())
        h.update(repr((self.p_dims, self.q_dims, self.sample_time)).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class NoiseSpec:
    """Per-coordinate half-widths of uniform process/sensor/input noise."""

    v_bounds: np.ndarray
    w_bounds: np.ndarray
    input_noise_bounds: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v_bounds", _freeze(np.atleast_1d(self.v_bounds)))
        object.__setattr__(self, "w_bounds", _freeze(np.atleast_1d(self.w_bounds)))
        object.__setattr__(
            self, "input_noise_bounds", _freeze(np.atleast_1d(self.input_noise_bounds))
        )
        for name in ("v_bounds", "w_bounds", "input_noise_bounds"):
            if (getattr(self, name) < 0).any():
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class GainSet:
    """Observer gain L (n x p) and controller gain F (q x n)."""

    L: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "L", _freeze(np.atleast_2d(self.L)))
        object.__setattr__(self, "F", _freeze(np.atleast_2d(self.F)))

    def L_block(self, plant: LtiPlant, agent: int) -> np.ndarray:
        """Observer gain columns for a 1-based agent id."""
        return self.L[:, plant.output_slice(agent)]

    def F_block(self, plant: LtiPlant, agent: int) -> np.ndarray:
        """Controller gain rows for a 1-based agent id."""
        return self.F[plant.input_slice(agent), :]


def validate_model(plant: LtiPlant, gains: GainSet) -> list[str]:
    """Cross-check all dimension invariants; empty report means consistent."""
    report = []
    n, p, q = plant.n, plant.p, plant.q
    if any(d < 0 for d in plant.p_dims):
        report.append(f"p_dims must be non-negative, got {plant.p_dims}")
    if any(d < 0 for d in plant.q_dims):
        report.append(f"q_dims must be non-negative, got {plant.q_dims}")
    if plant.C.shape != (p, n):
        report.append(f"C has shape {plant.C.shape}, expected ({p}, {n}) from sum(p_i) x n")
    for lag, B in plant.input_blocks:
        if B.shape != (n, q):
            report.append(
                f"input block at lag {lag} has shape {B.shape}, expected ({n}, {q}) from n x sum(q_i)"
            )
    if gains.L.shape != (n, p):
        report.append(
            f"L has shape {gains.L.shape}, expected ({n}, {p}): sum(p_i) != L columns"
            if gains.L.shape[0] == n
            else f"L has shape {gains.L.shape}, expected ({n}, {p})"
        )
    if gains.F.shape != (q, n):
        report.append(
            f"F has shape {gains.F.shape}, expected ({q}, {n}): sum(q_i) != F rows"
            if gains.F.shape[1] == n
            else f"F has shape {gains.F.shape}, expected ({q}, {n})"
        )
    if plant.sample_time <= 0:
        report.append(f"sample_time must be positive, got {plant.sample_time}")
    return report


def augmented_system(plant: LtiPlant) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Single-lag equivalent (A_aug, B_aug, C_aug) with delayed-input registers.

    The augmented state is (x(k), u(k-1), ..., u(k-m+1)) for maximum lag m;
    for single-lag plants this returns the plant matrices unchanged.
    """
    n, q, m = plant.n, plant.q, plant.max_lag
    if m == 1:
        return plant.A, plant.B, plant.C
    na = n + (m - 1) * q
    A_aug = np.zeros((na, na))
    A_aug[:n, :n] = plant.A
    blocks = dict(plant.input_blocks)
    for lag in range(2, m + 1):
        if lag in blocks:
            off = n + (lag - 2) * q
            A_aug[:n, off : off + q] = blocks[lag]
    for j in range(m - 2):
        A_aug[n + (j + 1) * q : n + (j + 2) * q, n + j * q : n + (j + 1) * q] = np.eye(q)
    B_aug = np.zeros((na, q))
    B_aug[:n, :] = blocks[1]
    B_aug[n : n + q, :] = np.eye(q)
    C_aug = np.zeros((plant.p, na))
    C_aug[:, :n] = plant.C
    return A_aug, B_aug, C_aug


def controller_closed_loop(plant: LtiPlant, gains: GainSet) -> np.ndarray:
    """Closed-loop matrix A+BF, evaluated on the lag-augmented state."""
    A_aug, B_aug, _ = augmented_system(plant)
    F_aug = np.zeros((plant.q, A_aug.shape[0]))
    F_aug[:, : plant.n] = gains.F
    return A_aug + B_aug @ F_aug


def estimator_closed_loop(plant: LtiPlant, gains: GainSet) -> np.ndarray:
    """Estimation error transition matrix (I - L C) A."""
    n = plant.n
    return (np.eye(n) - gains.L @ plant.C) @ plant.A


@dataclass(frozen=True)
class StabilityCheck:
    estimator_stable: bool
    controller_stable: bool
    rho_estimator: float
    rho_controller: float


def check_stability_margins(plant: LtiPlant, gains: GainSet) -> StabilityCheck:
    """Verify the two design premises: (I-LC)A stable and A+BF stable."""
    rho_est = spectral_radius(estimator_closed_loop(plant, gains))
    rho_ctrl = spectral_radius(controller_closed_loop(plant, gains))
    return StabilityCheck(rho_est < 1.0, rho_ctrl < 1.0, rho_est, rho_ctrl)


class InputHistory:
    """Delayed-input registers: the last ``max_lag`` input vectors.

    ``get(lag)`` returns u(k-lag) relative to the most recent ``push``.
    """

    def __init__(self, q: int, max_lag: int, initial: Sequence[np.ndarray] = ()):
        self._slots = [np.zeros(q) for _ in range(max_lag)]
        for u in initial:
            self.push(u)

    def push(self, u: np.ndarray) -> None:
        self._slots.pop()
        self._slots.insert(0, np.asarray(u, dtype=float))

    def get(self, lag: int) -> np.ndarray:
        return self._slots[lag - 1]


def _lagged_input_term(plant: LtiPlant, history) -> np.ndarray:
    acc = np.zeros(plant.n)
    for lag, B in plant.input_blocks:
        if isinstance(history, (InputHistory,)):
            u = history.get(lag)
        elif isinstance(history, Mapping):
            if lag not in history:
                raise ValueError(f"input history is missing lag {lag}")
            u = history[lag]
        else:
            raise TypeError("history must be an InputHistory or a lag -> vector mapping")
        acc += B @ np.asarray(u, dtype=float)
    return acc


def plant_step(plant: LtiPlant, x: np.ndarray, input_history, v: np.ndarray) -> np.ndarray:
    """One process step: x(k) = A x(k-1) + sum_l B_l u(k-l) + v(k-1)."""
    return plant.A @ np.asarray(x, dtype=float) + _lagged_input_term(plant, input_history) + v


def predict_state(plant: LtiPlant, x_post: np.ndarray, input_history) -> np.ndarray:
    """Observer prediction: same recursion as the plant, without noise."""
    return plant.A @ np.asarray(x_post, dtype=float) + _lagged_input_term(plant, input_history)


def measure(plant: LtiPlant, x: np.ndarray, w: np.ndarray) -> list[np.ndarray]:
    """Noisy output y_i(k) = C_i x(k) + w_i(k), partitioned by agent."""
    y = plant.C @ np.asarray(x, dtype=float) + np.asarray(w, dtype=float)
    return [y[plant.output_slice(i)] for i in range(1, plant.agents + 1)]
