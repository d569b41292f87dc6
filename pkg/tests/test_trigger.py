import numpy as np
import pytest

from ebsim.model import LtiPlant
from ebsim.trigger import (
    TriggerGroup,
    build_index_sets,
    canonical_groups,
    input_trigger_eval,
    measurement_trigger_eval,
    validate_groups,
)

INF = float("inf")


def mgroup(threshold, agent=1, indices=(0,), norm=INF):
    return TriggerGroup(agent, "measurement", indices, threshold, norm)


def igroup(threshold, agent=1, indices=(0,), norm=INF):
    return TriggerGroup(agent, "input", indices, threshold, norm)


class TestMeasurementTrigger:
    def test_fires_above_threshold(self):
        assert measurement_trigger_eval(mgroup(0.05), [1.0], [0.9])

    def test_silent_on_zero_innovation(self):
        assert not measurement_trigger_eval(mgroup(0.01), [1.0], [1.0])

    def test_zero_threshold_always_fires(self):
        g = mgroup(0.0)
        assert measurement_trigger_eval(g, [1.0], [1.0])
        assert measurement_trigger_eval(g, [0.0], [0.0])

    def test_threshold_boundary_inclusive(self):
        assert measurement_trigger_eval(mgroup(0.1), [1.1], [1.0])


class TestInputTrigger:
    def test_below_threshold_silent(self):
        assert not input_trigger_eval(igroup(0.01), [0.10], [0.095])

    def test_at_or_above_threshold_fires(self):
        assert input_trigger_eval(igroup(0.01), [0.12], [0.10])

    def test_joint_two_dim_group_inf_norm(self):
        g = igroup(0.02, indices=(0, 1))
        assert not input_trigger_eval(g, [0.015, 0.001], [0.0, 0.0])
        assert input_trigger_eval(g, [0.021, 0.001], [0.0, 0.0])


class TestIndexSets:
    def test_all_fire(self):
        s = build_index_sets(3, [(0, True), (1, True)])
        assert s.transmitting == (0, 1) and s.silent == ()

    def test_none_fire(self):
        s = build_index_sets(3, [(0, False), (1, False)])
        assert s.transmitting == () and s.silent == (0, 1)

    def test_mixed_partition(self):
        s = build_index_sets(0, [(0, True), (1, False), (2, True)])
        assert s.transmitting == (0, 2) and s.silent == (1,)

    def test_partition_property(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            outcomes = [(gi, bool(rng.integers(2))) for gi in range(6)]
            s = build_index_sets(1, outcomes)
            assert sorted(s.transmitting + s.silent) == list(range(6))
            assert not set(s.transmitting) & set(s.silent)

    def test_duplicate_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            build_index_sets(0, [(0, True), (0, False)])

    def test_input_outcomes(self):
        s = build_index_sets(5, [(0, True)], [(0, False), (1, True)])
        assert s.input_transmitting == (1,)


def test_monotonicity_in_threshold():
    # raising the threshold never turns a silence into a transmission
    rng = np.random.default_rng(9)
    for _ in range(200):
        dim = rng.integers(1, 4)
        y = rng.normal(0, 1, dim)
        yp = rng.normal(0, 1, dim)
        d1 = rng.uniform(0, 2)
        d2 = d1 + rng.uniform(0, 2)
        f1 = measurement_trigger_eval(mgroup(d1, indices=tuple(range(dim))), y, yp)
        f2 = measurement_trigger_eval(mgroup(d2, indices=tuple(range(dim))), y, yp)
        assert f1 or not f2


def test_canonical_ordering():
    gs = [igroup(0.1, agent=2), mgroup(0.1, agent=2), mgroup(0.1, agent=1, indices=(1,)), mgroup(0.1, agent=1)]
    ordered = canonical_groups(gs)
    keys = [(g.agent, g.kind, g.indices[0]) for g in ordered]
    assert keys == [(1, "measurement", 0), (1, "measurement", 1), (2, "measurement", 0), (2, "input", 0)]


class TestGroupValidation:
    def plant(self):
        return LtiPlant(
            A=np.eye(2), input_blocks=((1, np.eye(2)),), C=np.eye(2), p_dims=(2, 0), q_dims=(1, 1)
        )

    def test_full_cover_passes(self):
        groups = [
            mgroup(0.1, agent=1, indices=(0,)),
            mgroup(0.1, agent=1, indices=(1,)),
            igroup(0.1, agent=1),
            igroup(0.1, agent=2),
        ]
        assert validate_groups(self.plant(), groups) == []

    def test_missing_coordinate_reported(self):
        groups = [mgroup(0.1, agent=1, indices=(0,)), igroup(0.1, agent=1), igroup(0.1, agent=2)]
        report = validate_groups(self.plant(), groups)
        assert any("agent 1 measurement" in r for r in report)

    def test_overlap_reported(self):
        groups = [
            mgroup(0.1, agent=1, indices=(0, 1)),
            mgroup(0.1, agent=1, indices=(1,)),
            igroup(0.1, agent=1),
            igroup(0.1, agent=2),
        ]
        report = validate_groups(self.plant(), groups)
        assert any("overlap" in r for r in report)
