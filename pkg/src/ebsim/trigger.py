"""Event triggers for measurement and input communication.

Measurement groups fire on the innovation (measured minus predicted output);
input groups fire send-on-delta style against the last transmitted value.
Both rules use an inclusive ``>=`` at the threshold, so a zero threshold
recovers full periodic communication.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import INF, LtiPlant, vector_norm

MEASUREMENT = "measurement"
INPUT = "input"


@dataclass(frozen=True)
class TriggerGroup:
    """One triggering decision unit owned by a single agent.

    ``indices`` are 0-based coordinates local to the owner's sensor slice
    (measurement kind) or input slice (input kind).
    """

    agent: int
    kind: str
    indices: tuple[int, ...]
    threshold: float
    norm_order: float = INF

    def __post_init__(self):
        if self.kind not in (MEASUREMENT, INPUT):
            raise ValueError(f"unknown trigger kind {self.kind!r}")
        if not self.indices:
            raise ValueError("trigger group must cover at least one coordinate")
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))

    @property
    def dim(self) -> int:
        return len(self.indices)


def measurement_trigger_eval(group: TriggerGroup, y_slice, y_pred_slice) -> bool:
    """True iff the innovation norm reaches the group threshold."""
    gap = np.asarray(y_slice, dtype=float) - np.asarray(y_pred_slice, dtype=float)
    return vector_norm(gap, group.norm_order) >= group.threshold


def input_trigger_eval(group: TriggerGroup, u_slice, u_last_slice) -> bool:
    """True iff the input moved by at least the group threshold since last send."""
    gap = np.asarray(u_slice, dtype=float) - np.asarray(u_last_slice, dtype=float)
    return vector_norm(gap, group.norm_order) >= group.threshold


@dataclass(frozen=True)
class IndexSets:
    """Partition of the groups into transmitting and silent at one step."""

    k: int
    transmitting: tuple[int, ...]
    silent: tuple[int, ...]
    input_transmitting: tuple[int, ...]


def build_index_sets(k, measurement_outcomes, input_outcomes=()) -> IndexSets:
    """Partition trigger outcomes into fired/silent sets.

    Outcomes are (group_index, fired) pairs; ordering in the result follows
    ascending group index.  A duplicated group index is rejected.
    """
    seen = set()
    fired, silent = [], []
    for gi, outcome in sorted(measurement_outcomes):
        if gi in seen:
            raise ValueError(f"duplicate outcome for measurement group {gi}")
        seen.add(gi)
        (fired if outcome else silent).append(gi)
    seen_u = set()
    fired_u = []
    for gi, outcome in sorted(input_outcomes):
        if gi in seen_u:
            raise ValueError(f"duplicate outcome for input group {gi}")
        seen_u.add(gi)
        if outcome:
            fired_u.append(gi)
    return IndexSets(int(k), tuple(fired), tuple(silent), tuple(fired_u))


def canonical_groups(groups) -> tuple[TriggerGroup, ...]:
    """Deterministic group ordering: by (agent, kind, first coordinate)."""
    kind_rank = {MEASUREMENT: 0, INPUT: 1}
    return tuple(sorted(groups, key=lambda g: (g.agent, kind_rank[g.kind], g.indices[0])))


def validate_groups(plant: LtiPlant, groups) -> list[str]:
    """Check that the groups partition every sensor and input coordinate."""
    report = []
    for kind, dims in ((MEASUREMENT, plant.p_dims), (INPUT, plant.q_dims)):
        for agent in range(1, plant.agents + 1):
            dim = dims[agent - 1]
            covered: list[int] = []
            for g in groups:
                if g.agent == agent and g.kind == kind:
                    covered.extend(g.indices)
            if sorted(covered) != list(range(dim)):
                if len(covered) != len(set(covered)):
                    report.append(f"agent {agent} {kind} groups overlap: {sorted(covered)}")
                else:
                    report.append(
                        f"agent {agent} {kind} groups cover {sorted(covered)}, "
                        f"expected exactly 0..{dim - 1}"
                    )
            if any(i < 0 or i >= dim for i in covered):
                report.append(f"agent {agent} {kind} group index out of range 0..{dim - 1}")
    return report
