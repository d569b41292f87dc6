import numpy as np
import pytest

from ebsim.agent import (
    AgentCore,
    agent_control,
    agent_input_bookkeeping,
    agent_measurement_update,
    agent_predict,
    agent_step,
    sync_average_apply,
)
from ebsim.bus import DropModel
from ebsim.model import GainSet, LtiPlant, NoiseSpec
from ebsim.reference import CentralizedState, centralized_predict
from ebsim.sim import Scenario, run_scenario
from ebsim.trigger import TriggerGroup


def scalar_2agent(f=-0.1, d_est=0.05, d_ctrl=0.01):
    plant = LtiPlant(
        A=[[0.5]],
        input_blocks=((1, [[1.0, 1.0]]),),
        C=[[1.0], [1.0]],
        p_dims=(1, 1),
        q_dims=(1, 1),
    )
    gains = GainSet(L=[[0.2, 0.2]], F=[[f], [f]])
    groups = (
        TriggerGroup(1, "measurement", (0,), d_est),
        TriggerGroup(2, "measurement", (0,), d_est),
        TriggerGroup(1, "input", (0,), d_ctrl),
        TriggerGroup(2, "input", (0,), d_ctrl),
    )
    return plant, gains, groups


def make_core(plant, gains, agent_id=1, xhat0=None, groups=()):
    xhat0 = np.zeros(plant.n) if xhat0 is None else xhat0
    return AgentCore.initial(agent_id, plant, gains, xhat0, np.zeros(plant.q), groups)


class TestPredict:
    def test_matches_centralized_with_shared_inputs(self):
        plant, gains, _ = scalar_2agent()
        core = make_core(plant, gains, xhat0=np.array([0.7]))
        ref = CentralizedState.initial([0.7])
        hist = {1: np.array([0.3, -0.2])}
        assert agent_predict(core, plant, hist) == pytest.approx(centralized_predict(ref, plant, hist))

    def test_scalar_value(self):
        plant = LtiPlant(A=[[0.5]], input_blocks=((1, [[1.0]]),), C=[[1.0]], p_dims=(1,), q_dims=(1,))
        gains = GainSet(L=[[0.4]], F=[[0.0]])
        core = make_core(plant, gains, xhat0=np.array([2.0]))
        assert agent_predict(core, plant, {1: [1.0]})[0] == pytest.approx(2.0, abs=1e-15)

    def test_no_input_matrix_is_autonomous(self):
        plant = LtiPlant(A=[[0.5]], input_blocks=((1, [[0.0]]),), C=[[1.0]], p_dims=(1,), q_dims=(1,))
        gains = GainSet(L=[[0.4]], F=[[0.0]])
        core = make_core(plant, gains, xhat0=np.array([2.0]))
        assert agent_predict(core, plant, {1: [123.0]})[0] == pytest.approx(1.0, abs=1e-15)


class TestMeasurementUpdate:
    def test_empty_received_keeps_prediction(self):
        plant, gains, groups = scalar_2agent()
        core = make_core(plant, gains, groups=groups)
        core.x_pred = np.array([0.9])
        assert agent_measurement_update(core, plant, [])[0] == 0.9

    def test_scalar_own_measurement(self):
        plant, gains, groups = scalar_2agent()
        gains = GainSet(L=[[0.4, 0.4]], F=[[0.0], [0.0]])
        core = make_core(plant, gains, groups=groups)
        core.x_pred = np.array([1.0])
        x = agent_measurement_update(core, plant, [(groups[0], np.array([2.0]))])
        assert x[0] == pytest.approx(1.4, abs=1e-15)

    def test_identical_priors_same_posterior(self):
        plant, gains, groups = scalar_2agent()
        y1, y2 = np.array([0.8]), np.array([1.1])
        posts = []
        for agent_id in (1, 2):
            core = make_core(plant, gains, agent_id=agent_id, xhat0=np.array([0.5]), groups=groups)
            core.x_pred = np.array([0.5])
            posts.append(
                agent_measurement_update(core, plant, [(groups[0], y1), (groups[1], y2)])
            )
        assert np.array_equal(posts[0], posts[1])


class TestInputBookkeeping:
    def test_no_broadcast_keeps_values(self):
        plant, gains, groups = scalar_2agent()
        core = make_core(plant, gains, groups=groups)
        core.u_hat = np.array([0.3, -0.4])
        agent_input_bookkeeping(core, plant, [])
        assert np.allclose(core.u_hat, [0.3, -0.4])

    def test_single_agent_broadcast_updates_slice(self):
        plant, gains, groups = scalar_2agent()
        core = make_core(plant, gains, groups=groups)
        core.u_hat = np.array([0.3, -0.4])
        agent_input_bookkeeping(core, plant, [(groups[3], np.array([0.5]))])
        assert np.allclose(core.u_hat, [0.3, 0.5])

    def test_all_broadcast_recovers_truth(self):
        plant, gains, groups = scalar_2agent()
        core = make_core(plant, gains, groups=groups)
        u = np.array([0.7, -0.2])
        agent_input_bookkeeping(core, plant, [(groups[2], u[:1]), (groups[3], u[1:])])
        assert np.array_equal(core.u_hat, u)


class TestControl:
    def test_zero_gain(self):
        plant, gains, groups = scalar_2agent(f=0.0)
        core = make_core(plant, gains, groups=groups)
        core.x_post = np.array([2.0])
        assert agent_control(core, plant)[0] == 0.0

    def test_scalar_gain(self):
        plant, gains, groups = scalar_2agent(f=-0.9)
        core = make_core(plant, gains, groups=groups)
        core.x_post = np.array([2.0])
        assert agent_control(core, plant)[0] == pytest.approx(-1.8, abs=1e-15)

    def test_actuatorless_agent_empty(self):
        plant = LtiPlant(
            A=np.eye(2), input_blocks=((1, np.ones((2, 1))),), C=np.eye(2), p_dims=(1, 1), q_dims=(1, 0)
        )
        gains = GainSet(L=np.zeros((2, 2)), F=np.zeros((1, 2)))
        core = make_core(plant, gains, agent_id=2)
        core.x_post = np.array([1.0, 2.0])
        assert agent_control(core, plant).size == 0


class TestSyncAverage:
    def test_two_agents_average(self):
        plant, gains, groups = scalar_2agent()
        plant2 = LtiPlant(A=np.eye(2), input_blocks=((1, np.zeros((2, 2))),), C=np.eye(2), p_dims=(1, 1), q_dims=(1, 1))
        cores = [make_core(plant2, gains, agent_id=i) for i in (1, 2)]
        cores[0].x_post = np.array([1.0, 0.0])
        cores[1].x_post = np.array([0.0, 1.0])
        xbar = sync_average_apply(cores)
        assert np.allclose(xbar, [0.5, 0.5])
        assert np.array_equal(cores[0].x_post, cores[1].x_post)
        assert np.abs(cores[0].x_post - cores[1].x_post).max() == 0.0

    def test_fixed_point_when_equal(self):
        plant, gains, groups = scalar_2agent()
        cores = [make_core(plant, gains, agent_id=i, xhat0=np.array([0.4])) for i in (1, 2)]
        xbar = sync_average_apply(cores)
        assert xbar[0] == pytest.approx(0.4, abs=1e-15)


def straight_line_trace(steps=3):
    """Unstructured float-by-float replay of the whole protocol.

    Scalar 2-agent system, no noise: a=0.5, per-agent b=1, c=1, l=0.2,
    f=-0.1, d_est=0.05, d_ctrl=0.01, x(0)=1, estimates start at 0.
    """
    a, b, c, l, f = 0.5, 1.0, 1.0, 0.2, -0.1
    d_est, d_ctrl = 0.05, 0.01
    x = 1.0
    xc = 0.0
    xh = [0.0, 0.0]
    u = [f * xh[0], f * xh[1]]        # initialization handshake
    uhat = list(u)
    ulast = list(u)
    rows = []
    for k in range(1, steps + 1):
        x = a * x + b * (u[0] + u[1])   # actuate the previous step's inputs
        y = [c * x, c * x]
        xp = [a * xh[i] + b * (uhat[0] + uhat[1]) for i in range(2)]
        xcp = a * xc + b * (u[0] + u[1])
        fired = [abs(y[i] - c * xp[i]) >= d_est for i in range(2)]
        for i in range(2):
            xh[i] = xp[i] + sum(l * (y[g] - c * xp[i]) for g in range(2) if fired[g])
        xc = xcp + l * (y[0] - c * xcp) + l * (y[1] - c * xcp)
        u = [f * xh[0], f * xh[1]]
        for i in range(2):
            if abs(u[i] - ulast[i]) >= d_ctrl:
                ulast[i] = u[i]
                uhat[i] = u[i]
        rows.append((x, y[0], y[1], xh[0], xh[1], xc, u[0], u[1], uhat[0], uhat[1], fired[0], fired[1]))
    return rows


def _oracle_scenario(steps):
    plant, gains, groups = scalar_2agent()
    return Scenario(
        plant=plant,
        noise=NoiseSpec([0.0], [0.0, 0.0], [0.0, 0.0]),
        gains=gains,
        groups=groups,
        horizon=steps,
        seed=0,
        x0=[1.0],
        name="hand_trace",
    )


def test_hand_trace_matches_runner():
    rows = straight_line_trace(3)
    trace, _, _ = run_scenario(_oracle_scenario(3))
    for k in range(3):
        x, y1, y2, xh1, xh2, xc, u1, u2, uh1, uh2, f1, f2 = rows[k]
        r = trace.data[k]
        cols = dict(zip(trace.columns, r))
        assert cols["x_1"] == pytest.approx(x, abs=1e-12)
        assert cols["y_1_1"] == pytest.approx(y1, abs=1e-12)
        assert cols["xhat_1_1"] == pytest.approx(xh1, abs=1e-12)
        assert cols["xhat_2_1"] == pytest.approx(xh2, abs=1e-12)
        assert cols["xc_1"] == pytest.approx(xc, abs=1e-12)
        assert cols["u_1_1"] == pytest.approx(u1, abs=1e-12)
        assert cols["uhat_1"] == pytest.approx(uh1, abs=1e-12)
        assert cols["trig_y_1_1"] == (1.0 if f1 else 0.0)
        assert cols["trig_y_2_1"] == (1.0 if f2 else 0.0)


def test_hand_trace_matches_agent_step_composition():
    rows = straight_line_trace(3)
    plant, gains, groups = scalar_2agent()
    mgroups = [g for g in groups if g.kind == "measurement"]
    cores = [
        AgentCore.initial(i, plant, gains, np.zeros(1), np.zeros(2),
                          groups=[g for g in groups if g.agent == i])
        for i in (1, 2)
    ]
    x = np.array([1.0])
    u = np.array([0.0, 0.0])
    uhat_hist = {1: np.array([0.0, 0.0])}
    for k in range(1, 4):
        x = plant.A @ x + plant.B @ u
        y = plant.C @ x
        # trigger decisions are local: evaluate each owner's own groups first
        fired = {}
        for i, core in enumerate(cores, start=1):
            xp = plant.A @ core.x_post + plant.B @ uhat_hist[1]
            g = mgroups[i - 1]
            fired[i] = abs(y[i - 1] - xp[0]) >= g.threshold
        results = []
        for i, core in enumerate(cores, start=1):
            other = 2 if i == 1 else 1
            inbound_meas = (
                [(mgroups[other - 1], y[other - 1 : other])] if fired[other] else []
            )
            res = agent_step(core, plant, k, y[i - 1 : i], uhat_hist, inbound_meas, [])
            results.append(res)
        # mirror the other agent's input broadcasts after both steps ran
        for i, core in enumerate(cores):
            other_res = results[1 - i]
            agent_input_bookkeeping(core, plant, [(g, other_res.u_own) for g in other_res.fired_input])
        u = np.concatenate([res.u_own for res in results])
        uhat_hist = {1: cores[0].u_hat.copy()}
        exp = rows[k - 1]
        assert cores[0].x_post[0] == pytest.approx(exp[3], abs=1e-12)
        assert cores[1].x_post[0] == pytest.approx(exp[4], abs=1e-12)
        assert u[0] == pytest.approx(exp[6], abs=1e-12)
        assert cores[0].u_hat[0] == pytest.approx(exp[8], abs=1e-12)
        assert np.array_equal(cores[0].u_hat, cores[1].u_hat)


def test_consistency_under_perfect_communication():
    # identical init, no drops, no resets: every agent's posterior sequence
    # is bitwise identical
    from ebsim import scenarios

    s = scenarios.load("thermofluid_like").replace(
        horizon=300, drop_model=DropModel(p_drop_measurement=0.0), disturbances=()
    )
    trace, _, _ = run_scenario(s)
    assert np.array_equal(trace.xhat(1), trace.xhat(2))


def test_zero_thresholds_track_reference():
    from ebsim import scenarios

    s = scenarios.load("thermofluid_like")
    s = s.scale_thresholds(0.0).replace(
        horizon=300, drop_model=DropModel(p_drop_measurement=0.0), disturbances=()
    )
    trace, _, _ = run_scenario(s)
    for i in (1, 2):
        assert np.abs(trace.xhat(i) - trace.xc()).max() <= 1e-9


def test_post_reset_interagent_error_exactly_zero():
    from ebsim import scenarios

    s = scenarios.load("balancing_platform").replace(horizon=450)
    trace, _, _ = run_scenario(s)
    resets = np.where(trace.reset_flags() > 0.5)[0]
    assert resets.size == 2
    for r in resets:
        posts = [trace.xhat(i)[r] for i in range(1, 7)]
        for i in range(6):
            for j in range(i + 1, 6):
                assert np.abs(posts[i] - posts[j]).max() == 0.0


def test_agent_step_reset_instant():
    plant, gains, groups = scalar_2agent(d_est=99.0, d_ctrl=99.0)  # everyone silent
    core = AgentCore.initial(
        1, plant, gains, np.array([1.0]), np.zeros(2),
        groups=[g for g in groups if g.agent == 1], reset_period=4,
    )
    # at k = 4 the agent folds the other agents' estimates into the average
    res = agent_step(
        core, plant, 4, np.array([0.0]), {1: np.zeros(2)},
        inbound_measurements=[], inbound_inputs=[],
        reset_exchange=[np.array([0.2]), np.array([0.6])],
    )
    # prediction from posterior 1.0 is 0.5 (a = 0.5, silent update)
    assert core.x_post[0] == pytest.approx((0.5 + 0.2 + 0.6) / 3, abs=1e-15)
    assert res.fired_measurement == []


def test_agent_step_requires_exchange_on_reset():
    plant, gains, groups = scalar_2agent()
    core = AgentCore.initial(
        1, plant, gains, np.zeros(1), np.zeros(2),
        groups=[g for g in groups if g.agent == 1], reset_period=2,
    )
    with pytest.raises(ValueError, match="reset"):
        agent_step(core, plant, 2, np.array([0.0]), {1: np.zeros(2)}, [], [])
