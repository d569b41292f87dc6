"""One agent's per-step behavior.

Each agent runs the same switching observer: predict with the last known
input vector, update with whatever measurement groups it actually received
over the bus (always including its own transmissions), optionally take part
in the synchronous averaging reset, then compute and possibly broadcast its
local input.  The step order follows the fixed per-step protocol:

    actuate u(k-1); sense y_i(k); predict; measurement triggers (send/receive);
    measurement update; reset if k is a multiple of K; compute u_i(k);
    input trigger (send/receive).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import GainSet, LtiPlant, predict_state
from .trigger import INPUT, MEASUREMENT, TriggerGroup, input_trigger_eval, measurement_trigger_eval


def global_output_indices(plant: LtiPlant, group: TriggerGroup) -> np.ndarray:
    """Stacked-output coordinates covered by a measurement group."""
    off = plant.output_offsets()[group.agent - 1]
    return np.array([off + i for i in group.indices], dtype=int)


def global_input_indices(plant: LtiPlant, group: TriggerGroup) -> np.ndarray:
    """Stacked-input coordinates covered by an input group."""
    off = plant.input_offsets()[group.agent - 1]
    return np.array([off + i for i in group.indices], dtype=int)


@dataclass
class AgentCore:
    """Estimator state and communication bookkeeping of a single agent."""

    agent_id: int
    x_pred: np.ndarray
    x_post: np.ndarray
    u_hat: np.ndarray
    u_last_own: np.ndarray
    gains: GainSet
    groups: tuple[TriggerGroup, ...] = ()
    reset_period: int = 0

    @classmethod
    def initial(cls, agent_id, plant, gains, xhat0, u_hat0, groups=(), reset_period=0):
        xhat0 = np.asarray(xhat0, dtype=float)
        u_hat0 = np.asarray(u_hat0, dtype=float)
        own = u_hat0[plant.input_slice(agent_id)].copy()
        return cls(
            agent_id=agent_id,
            x_pred=xhat0.copy(),
            x_post=xhat0.copy(),
            u_hat=u_hat0.copy(),
            u_last_own=own,
            gains=gains,
            groups=tuple(groups),
            reset_period=int(reset_period),
        )


def agent_predict(core: AgentCore, plant: LtiPlant, uhat_history) -> np.ndarray:
    """Prediction from the posterior and the shared last-known inputs."""
    core.x_pred = predict_state(plant, core.x_post, uhat_history)
    return core.x_pred


def agent_measurement_update(
    core: AgentCore, plant: LtiPlant, received: list[tuple[TriggerGroup, np.ndarray]]
) -> np.ndarray:
    """Posterior from the received measurement groups only.

    With nothing received the posterior equals the prediction.  The received
    list must be in canonical group order for reproducible arithmetic.
    """
    x = core.x_pred.copy()
    for group, y_slice in received:
        if group.kind != MEASUREMENT:
            raise ValueError("received a non-measurement group in the measurement update")
        idx = global_output_indices(plant, group)
        Lg = core.gains.L[:, idx]
        Cg = plant.C[idx, :]
        x += Lg @ (np.asarray(y_slice, dtype=float) - Cg @ core.x_pred)
    core.x_post = x
    return x


def agent_input_bookkeeping(
    core: AgentCore, plant: LtiPlant, input_broadcasts: list[tuple[TriggerGroup, np.ndarray]]
) -> np.ndarray:
    """Fold the step's input broadcasts into the last-known input vector."""
    for group, u_slice in input_broadcasts:
        if group.kind != INPUT:
            raise ValueError("input bookkeeping received a non-input group")
        idx = global_input_indices(plant, group)
        core.u_hat[idx] = np.asarray(u_slice, dtype=float)
    return core.u_hat


def agent_control(core: AgentCore, plant: LtiPlant) -> np.ndarray:
    """Local input from the agent's own controller gain block."""
    return core.gains.F_block(plant, core.agent_id) @ core.x_post


def sync_average_apply(cores: list[AgentCore]) -> np.ndarray:
    """Reset every posterior to the joint average (lossless, in-step).

    Returns the average; afterwards all inter-agent differences are exactly
    zero because every agent is assigned the same vector.
    """
    if not cores:
        raise ValueError("no agents to reset")
    xbar = cores[0].x_post.copy()
    for core in cores[1:]:
        xbar += core.x_post
    xbar /= len(cores)
    for core in cores:
        core.x_post = xbar.copy()
    return xbar


@dataclass
class AgentStepResult:
    fired_measurement: list[TriggerGroup] = field(default_factory=list)
    fired_input: list[TriggerGroup] = field(default_factory=list)
    u_own: np.ndarray | None = None


def agent_step(
    core: AgentCore,
    plant: LtiPlant,
    k: int,
    y_own: np.ndarray,
    uhat_history,
    inbound_measurements: list[tuple[TriggerGroup, np.ndarray]],
    inbound_inputs: list[tuple[TriggerGroup, np.ndarray]],
    reset_exchange: list[np.ndarray] | None = None,
) -> AgentStepResult:
    """Run one agent through a full step of the per-step protocol.

    ``inbound_measurements``/``inbound_inputs`` are the broadcasts from other
    agents that the bus delivered to this agent at step k; the agent's own
    fired groups are added locally (an agent always hears itself).  When the
    step is a reset instant, ``reset_exchange`` carries the other agents'
    pre-reset posteriors.
    """
    result = AgentStepResult()
    agent_predict(core, plant, uhat_history)

    p_off = plant.output_offsets()[core.agent_id - 1]
    own_received = []
    for g in core.groups:
        if g.kind != MEASUREMENT:
            continue
        local = np.array(g.indices, dtype=int)
        y_slice = np.asarray(y_own, dtype=float)[local]
        y_pred = plant.C[[p_off + i for i in g.indices], :] @ core.x_pred
        if measurement_trigger_eval(g, y_slice, y_pred):
            result.fired_measurement.append(g)
            own_received.append((g, y_slice))

    order = lambda item: (item[0].agent, item[0].indices[0])
    received = sorted(own_received + list(inbound_measurements), key=order)
    agent_measurement_update(core, plant, received)

    if core.reset_period and k % core.reset_period == 0 and k > 0:
        if reset_exchange is None:
            raise ValueError("reset step requires the other agents' estimates")
        total = core.x_post.copy()
        for other in reset_exchange:
            total += np.asarray(other, dtype=float)
        core.x_post = total / (len(reset_exchange) + 1)

    u_own = agent_control(core, plant)
    result.u_own = u_own

    own_input_broadcasts = []
    for g in core.groups:
        if g.kind != INPUT:
            continue
        local = np.array(g.indices, dtype=int)
        if input_trigger_eval(g, u_own[local], core.u_last_own[local]):
            result.fired_input.append(g)
            core.u_last_own[local] = u_own[local]
            own_input_broadcasts.append((g, u_own[local]))

    agent_input_bookkeeping(core, plant, own_input_broadcasts + list(inbound_inputs))
    return result
