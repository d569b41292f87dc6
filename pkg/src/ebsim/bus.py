"""Common broadcast bus with per-receiver Bernoulli packet loss.

Only measurement broadcasts can be dropped; input broadcasts and the
synchronous-reset exchange are delivered losslessly.  A sender always hears
its own broadcast.  Drop outcomes are a pure function of
(seed, step, sender, group, receiver), so replaying a scenario reproduces
the identical loss pattern.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng

MEASUREMENT = "measurement"
INPUT = "input"
ESTIMATE_RESET = "reset"

_KINDS = (MEASUREMENT, INPUT, ESTIMATE_RESET)


@dataclass(frozen=True)
class BusMessage:
    kind: str
    sender: int
    k: int
    group: int
    payload: np.ndarray

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown message kind {self.kind!r}")
        object.__setattr__(self, "payload", np.asarray(self.payload, dtype=float))


@dataclass(frozen=True)
class DropModel:
    """Loss probabilities; inputs and resets are lossless by construction.

    ``per_receiver`` draws an independent coin per (message, receiver);
    the global mode shares one coin per message across all receivers.
    ``forced_drops`` deterministically drops (k, group, receiver) triples on
    top of the random model.
    """

    p_drop_measurement: float = 0.0
    per_receiver: bool = True
    forced_drops: frozenset = field(default_factory=frozenset)

    p_drop_input = 0.0
    p_drop_reset = 0.0

    def __post_init__(self):
        if not 0.0 <= self.p_drop_measurement <= 1.0:
            raise ValueError("p_drop_measurement must be within [0, 1]")
        object.__setattr__(
            self, "forced_drops", frozenset(tuple(map(int, t)) for t in self.forced_drops)
        )

    def p_drop(self, kind: str) -> float:
        return self.p_drop_measurement if kind == MEASUREMENT else 0.0


@dataclass(frozen=True)
class DeliveryReport:
    message: BusMessage
    delivered_to: tuple[int, ...]
    dropped_at: tuple[int, ...]


def drop_sample(
    drop_model: DropModel, seed: int, k: int, sender: int, group: int, receiver: int,
    kind: str = MEASUREMENT,
) -> bool:
    """Deterministic drop outcome for one (message, receiver) pair."""
    if (k, group, receiver) in drop_model.forced_drops and kind == MEASUREMENT:
        return True
    p = drop_model.p_drop(kind)
    if p <= 0.0:
        return False
    if p >= 1.0:
        return True
    recv_id = receiver if drop_model.per_receiver else 0
    key = rng.stream_key(seed, rng.DOMAIN_DROP, sender, group, recv_id)
    return rng.uniform01(key, k) < p


def broadcast(msg: BusMessage, drop_model: DropModel, seed: int, n_agents: int) -> DeliveryReport:
    """Deliver one message to all agents, sender always included."""
    delivered = [msg.sender]
    dropped = []
    for receiver in range(1, n_agents + 1):
        if receiver == msg.sender:
            continue
        if drop_sample(drop_model, seed, msg.k, msg.sender, msg.group, receiver, msg.kind):
            dropped.append(receiver)
        else:
            delivered.append(receiver)
    return DeliveryReport(msg, tuple(delivered), tuple(dropped))


def drop_table(
    drop_model: DropModel,
    seed: int,
    horizon: int,
    group_senders: list[int],
    n_agents: int,
) -> np.ndarray | None:
    """Precomputed boolean table drop[k-1, group, receiver-1] for k = 1..horizon.

    Bit-identical to :func:`drop_sample` evaluated pointwise.  Returns None
    when no measurement can ever be dropped, which lets the runner skip the
    whole delivery bookkeeping.
    """
    if drop_model.p_drop_measurement <= 0.0 and not drop_model.forced_drops:
        return None
    n_groups = len(group_senders)
    table = np.zeros((horizon, n_groups, n_agents), dtype=bool)
    p = drop_model.p_drop_measurement
    ks = np.arange(1, horizon + 1, dtype=np.uint64)
    for gi, sender in enumerate(group_senders):
        for receiver in range(1, n_agents + 1):
            if receiver == sender:
                continue
            if p > 0.0:
                recv_id = receiver if drop_model.per_receiver else 0
                key = rng.stream_key(seed, rng.DOMAIN_DROP, sender, gi, recv_id)
                table[:, gi, receiver - 1] = rng.uniform01_array(key, ks) < p
    for (k, gi, receiver) in drop_model.forced_drops:
        if 1 <= k <= horizon and 0 <= gi < n_groups and 1 <= receiver <= n_agents:
            if receiver != group_senders[gi]:
                table[k - 1, gi, receiver - 1] = True
    return table
