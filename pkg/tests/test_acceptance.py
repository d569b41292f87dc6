"""Acceptance suite: one test per shipped guarantee, at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
pass/fail lines; the CLI mirror is ``ebsim verify``.
"""

import time

import numpy as np

from ebsim import scenarios
from ebsim.analysis import (
    common_lyapunov_check,
    emulation_error_bound,
    fit_decay_envelope,
    tradeoff_sweep,
)
from ebsim.bus import DropModel, drop_table
from ebsim.cli import main
from ebsim.model import estimator_closed_loop
from ebsim.sim import run_many, run_scenario

JOBS = 2


def check(num, name, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"[criterion {num:2d}] {name}: {status} ({detail})")
    assert ok, f"criterion {num} ({name}): {detail}"


def test_01_centralized_recovery():
    s = scenarios.load("thermofluid_like")
    s = s.scale_thresholds(0.0).replace(
        horizon=1000, drop_model=DropModel(0.0), reset_period=0
    )
    t0 = time.perf_counter()
    trace, _, _ = run_scenario(s)
    elapsed = time.perf_counter() - t0
    gap = max(
        float(np.abs(trace.xhat(i) - trace.xc()).max()) for i in (1, 2)
    )
    check(
        1,
        "centralized recovery at zero thresholds",
        gap <= 1e-9 and elapsed < 1.0,
        f"sup gap {gap:.2e} <= 1e-9, runtime {elapsed:.2f}s < 1s",
    )


def test_02_emulation_error_bound():
    s = scenarios.load("scalar_2agent")
    assert s.horizon == 10_000
    env = fit_decay_envelope(estimator_closed_loop(s.plant, s.gains))
    deltas = [g.threshold for g in s.groups if g.kind == "measurement"]
    bound = emulation_error_bound(env, s.gains.L, deltas, e0_norm=0.0)
    t0 = time.perf_counter()
    summaries = run_many(s, range(100), jobs=JOBS)
    elapsed = time.perf_counter() - t0
    sups = [r.sup_emulation_gap for r in summaries]
    violations = sum(v > bound for v in sups)
    check(
        2,
        "closed-form bound on the centralized-emulation gap",
        violations == 0 and elapsed < 30.0,
        f"max sup gap {max(sups):.5f} <= bound {bound:.5f}, "
        f"0 violations in 100 seeds x 10k steps, runtime {elapsed:.1f}s < 30s",
    )


def test_03_input_knowledge_bound():
    worst = 0.0
    runs = 0
    ok = True
    for name in scenarios.available():
        s = scenarios.load(name)
        extra_seeds = (s.seed,) if name.startswith("balancing") else (s.seed, 101, 202)
        deltas = [g.threshold for g in s.groups if g.kind == "input"]
        bound = max(deltas)
        for seed in extra_seeds:
            trace, _, _ = run_scenario(s.replace(seed=seed), overflow="stop")
            gap = float(np.abs(trace.u() - trace.uhat()).max())
            ok = ok and gap <= bound
            worst = max(worst, gap / bound if bound else gap)
            runs += 1
    check(
        3,
        "send-on-delta input mismatch never exceeds its threshold",
        ok,
        f"{runs} runs across the shipped suite, worst gap/threshold {worst:.6f} <= 1 (exact)",
    )


def test_04_reset_exactness():
    s = scenarios.load("balancing_platform").replace(horizon=1000)
    trace, _, _ = run_scenario(s)
    resets = np.where(trace.reset_flags() > 0.5)[0]
    assert resets.size == 5
    max_pair = 0.0
    max_avg_drift = 0.0
    for r in resets:
        k = r + 1
        posts = [trace.xhat(i)[r] for i in range(1, 7)]
        for i in range(6):
            for j in range(i + 1, 6):
                max_pair = max(max_pair, float(np.abs(posts[i] - posts[j]).max()))
        post_mean = np.mean(posts, axis=0)
        pre_mean = trace.reset_snapshots[k].mean(axis=0)
        max_avg_drift = max(
            max_avg_drift, float(np.abs(post_mean - pre_mean).max())
        )
    check(
        4,
        "synchronous averaging: exact agreement, average preserved",
        max_pair == 0.0 and max_avg_drift <= 1e-12,
        f"5 resets: max pairwise gap {max_pair}, average drift {max_avg_drift:.2e} <= 1e-12",
    )


def test_05_switching_stability_certificate():
    s = scenarios.load("thermofluid_like")
    P = np.diag([500.0, 1.0, 500.0, 1.0])
    cert = common_lyapunov_check(s.plant, s.gains, P, s.groups)
    k0 = 100
    forced = s.scale_thresholds(0.0).replace(
        horizon=k0 + 60,
        drop_model=DropModel(0.0, forced_drops=frozenset({(k0, 0, 2)})),
        disturbances=(),
    )
    _, _, diag = run_scenario(forced)
    e12 = diag.pair_errors[(1, 2)]
    pnorm = np.sqrt(np.einsum("ij,jk,ik->i", e12, P, e12))
    impulse = pnorm[k0 - 1]
    window = pnorm[k0 - 1 : k0 + 50]
    monotone = bool(np.all(np.diff(window) < 0.0))
    check(
        5,
        "common Lyapunov certificate and post-drop decay",
        cert.valid and impulse > 0 and monotone,
        f"margin {cert.margin:.3e} > 0 over {cert.subsets_checked} subsets; "
        f"impulse {impulse:.2e} decays monotonically in the P-norm for 50 steps",
    )


def test_06_instability_without_resets():
    noreset = scenarios.load("balancing_platform_noreset").replace(horizon=10_000)
    with_reset = noreset.replace(reset_period=200)
    tr0, _, d0 = run_scenario(noreset, overflow="stop")
    tr2, _, d2 = run_scenario(with_reset, overflow="stop")
    drift = float(np.abs(d0.pair_errors[(1, 5)][: tr0.length]).max())
    ceiling = float(np.abs(d2.pair_errors[(1, 5)][: tr2.length]).max())
    ratio = drift / ceiling
    check(
        6,
        "inter-agent error drifts without synchronous averaging",
        ratio >= 10.0,
        f"max |e_15| {drift:.3g} without resets vs {ceiling:.3g} ceiling with K=200 "
        f"(ratio {ratio:.0f}x >= 10x within 10k steps)",
    )


def _window_rates(trace, metrics, diag):
    s = trace.scenario
    fired = trace.trig_y().mean(axis=1)
    in_mask = np.zeros(trace.length, dtype=bool)
    for d in s.disturbances:
        lo = max(d.k_start, 1) - 1
        in_mask[lo : d.k_end] = True
    return float(fired[in_mask].mean()), float(fired[~in_mask].mean())


def test_07_communication_adapts_to_disturbances():
    s = scenarios.load("thermofluid_like")
    rates = run_many(s, range(20), jobs=JOBS, reducer=_window_rates)
    in_rate = float(np.mean([r[0] for r in rates]))
    out_rate = float(np.mean([r[1] for r in rates]))
    check(
        7,
        "measurement rate rises inside disturbance windows",
        in_rate >= 2.0 * out_rate,
        f"in-window rate {in_rate:.3f} >= 2 x out-of-window rate {out_rate:.3f}, 20 seeds",
    )


def test_08_tradeoff_anchor():
    s = scenarios.load("scalar_2agent").replace(horizon=2000)
    scales = [0.0, 0.3, 1.0, 2.0, 3.0]
    points = tradeoff_sweep(s, scales, seeds=range(100), jobs=JOBS)
    baseline = s.scale_thresholds(0.0).replace(reset_period=0)
    base = run_many(baseline, range(1000, 1100), jobs=JOBS)
    base_E = np.array([r.E for r in base])
    sweep0 = points[0]
    sigma = max(sweep0.E_std, float(base_E.std()))
    agree = abs(sweep0.E_mean - base_E.mean()) <= 2.0 * sigma
    Cs = [p.C_mean for p in points]
    monotone = all(Cs[i] > Cs[i + 1] for i in range(len(Cs) - 1))
    check(
        8,
        "trade-off curve anchored at full communication",
        agree and monotone and sweep0.C_mean == 1.0,
        f"E(scale 0) {sweep0.E_mean:.3e} vs baseline {base_E.mean():.3e} "
        f"(within 2 sigma = {2 * sigma:.1e}); C strictly decreasing {np.round(Cs, 4).tolist()}",
    )


def test_09_byte_identical_traces(tmp_path):
    scen_path = scenarios.path("scalar_2agent")
    payloads = []
    for sub in ("first", "second"):
        out = tmp_path / sub
        assert main(["run", "--scenario", str(scen_path), "--out", str(out)]) == 0
        payloads.append(
            tuple((out / f).read_bytes() for f in ("trace.csv", "events.csv", "metrics.txt"))
        )
    identical = payloads[0] == payloads[1]
    check(
        9,
        "identical seeds give byte-identical outputs",
        identical,
        f"trace/events/metrics compared, {len(payloads[0][0])} trace bytes",
    )


def test_10_packet_drop_statistics():
    details = []
    ok = True
    for p in (0.02, 0.05):
        table = drop_table(DropModel(p), seed=2024, horizon=100_000, group_senders=[1], n_agents=5)
        rate = float(table[:, 0, 1:].mean())
        rel = abs(rate - p) / p
        ok = ok and rel <= 0.10
        details.append(f"p={p}: empirical {rate:.5f} (rel err {rel:.3f})")
    check(10, "empirical drop rates match configuration", ok, "; ".join(details))
