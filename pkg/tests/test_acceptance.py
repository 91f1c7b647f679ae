"""One test per acceptance criterion; each records a pass/fail line in the summary."""

import os
import time
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from conftest import CRITERIA, STAGE_AUDIT, report
from disagg import presets
from disagg.errors import PlacementError
from disagg.latency import (BatchProfile, LatencyCoefficients, ModelSpec, ParallelConfig,
                            attention_arithmetic_intensity, kv_cache_bytes, mdl_avg_ttft,
                            parallelize, prefill_iter_time, speedup_k)
from disagg.placement import (Placement, SimEvaluator, best_replica_mix, pack_high_affinity,
                              pack_low_affinity, plan_colocated, plan_high_affinity,
                              plan_low_affinity)
from disagg.search import SearchConfig, max_goodput, simu_prefill
from disagg.simulator import ClusterSpec, SLOSpec, make_instance, run, simulate
from disagg.workload import Trace, preset_lengths, sample_trace
from oracles import Analytic, Memo, exhaustive_high, exhaustive_low

GiB = 2**30


def _say(num, ok, detail):
    report(num, ok, detail)
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


# 1 -----------------------------------------------------------------------------

@pytest.mark.parametrize("rd", [0.2, 0.5, 0.8])
def test_c01_md1_oracle(rd):
    model, coef = presets.model("opt-13b"), presets.a100_coefficients()
    cl = ClusterSpec(1, 1, 80 * GiB)
    src = Trace.from_requests(preset_lengths("uniform-512"))
    D = prefill_iter_time(model, BatchProfile.of([512]), coef)
    R = rd / D
    t0 = time.perf_counter()
    inst = make_instance("prefill", model, ParallelConfig(1, 1), cl, coef, max_batch_tokens=512)
    res = run(model, coef, sample_trace(src, R, 100_000, 11), None, prefill=[inst])
    took = time.perf_counter() - t0
    sim, ref = float(res.ttft.mean()), mdl_avg_ttft(D, R)
    err = abs(sim - ref) / ref
    ok = err <= 0.03 and took < 30
    prev = CRITERIA.get(1, (True, ""))
    detail = (prev[1] + "; " if prev[1] else "") + \
        f"RD={rd}: sim {sim:.5f}s vs M/D/1 {ref:.5f}s ({err:.2%}), {took:.1f}s"
    _say(1, ok and prev[0], detail)
    assert err <= 0.03
    assert took < 30


# 2 -----------------------------------------------------------------------------

def test_c02_parallelism_crossover():
    model = presets.model("opt-66b")
    coef = presets.a100_coefficients({1: 1.0, 2: 1.25})
    assert speedup_k(coef, 2) == pytest.approx(1.6)
    cl = ClusterSpec(1, 2, 80 * GiB, affinity="high")
    src = Trace.from_requests(preset_lengths("uniform-512"))
    inter, intra = ParallelConfig(2, 1), ParallelConfig(1, 2)
    D = prefill_iter_time(model, BatchProfile.of([512]), coef)
    D_intra = prefill_iter_time(parallelize(model, intra), BatchProfile.of([512]), coef)
    # stay below the intra-op saturation point RD = K_eff
    k_eff = D / D_intra
    rates = np.linspace(0.1, 0.95 * k_eff, 10) / D
    insts = {c: make_instance("prefill", model, c, cl, coef) for c in (inter, intra)}
    diffs = []
    for R in rates:
        tr = sample_trace(src, R, 20_000, 5)
        ttft = {c: float(run(model, coef, tr, None, prefill=[i]).ttft.mean())
                for c, i in insts.items()}
        diffs.append(ttft[intra] - ttft[inter])
    flips = int(np.count_nonzero(np.diff(np.sign(diffs))))
    # goodput view of the same crossover: tight TTFT favours intra, loose favours inter
    search = SearchConfig(trial_requests=1000, warmup_requests=100)
    tight, loose = SLOSpec(0.36, 1.0), SLOSpec(1.5, 1.0)
    g = {(name, c): simu_prefill(model, c, src, slo, coef, cl, search)
         for name, slo in (("tight", tight), ("loose", loose)) for c in (inter, intra)}
    ok = diffs[0] < 0 < diffs[-1] and flips == 1 and \
        g["tight", intra] > g["tight", inter] and g["loose", inter] > g["loose", intra]
    _say(2, ok, f"K_eff={k_eff:.3f}; intra-inter mean TTFT {diffs[0]*1e3:+.1f} ms at "
                f"R={rates[0]:.2f} to {diffs[-1]*1e3:+.1f} ms at R={rates[-1]:.2f}, "
                f"{flips} sign change; goodput tight intra/inter "
                f"{g['tight', intra]:.2f}/{g['tight', inter]:.2f}, loose "
                f"{g['loose', intra]:.2f}/{g['loose', inter]:.2f} req/s")
    assert diffs[0] < 0 < diffs[-1]
    assert flips == 1
    assert g["tight", intra] > g["tight", inter]
    assert g["loose", inter] > g["loose", intra]


# 3 -----------------------------------------------------------------------------

def test_c03_kv_sizing():
    b = kv_cache_bytes(presets.model("opt-66b"), 512)
    gib = b / GiB
    ok = 1.12 <= gib <= 1.14
    _say(3, ok, f"{b:,.0f} bytes = {gib:.4f} GiB ({b / 1e9:.4f} GB decimal)")
    assert b == 1_207_959_552
    assert 1.12 <= gib <= 1.14


# 4 -----------------------------------------------------------------------------

def test_c04_intensity_b32():
    v = attention_arithmetic_intensity(32)
    ok = abs(v - 21.333) <= 1e-3
    prev = CRITERIA.get(4)
    _say(4, ok and (prev is None or prev[0]),
         (prev[1] + "; " if prev else "") + f"b=32 -> {v:.4f} (target 21.333)")
    assert abs(v - 21.333) <= 1e-3


@pytest.mark.xfail(strict=True, reason="2b/3 at b=16 is 10.6667; the stated 10.677 is off "
                                       "by 0.0103, outside the 1e-3 tolerance")
def test_c04_intensity_b16():
    v = attention_arithmetic_intensity(16)
    ok = abs(v - 10.677) <= 1e-3
    prev = CRITERIA.get(4)
    _say(4, ok and (prev is None or prev[0]),
         (prev[1] + "; " if prev else "") + f"b=16 -> {v:.4f} (target 10.677, "
         f"off by {abs(v - 10.677):.4f})")
    assert abs(v - 10.677) <= 1e-3


# 5 -----------------------------------------------------------------------------

def _coef_draw(rng):
    base = presets.a100_coefficients()
    f = np.exp(rng.uniform(-0.7, 0.7, 5))
    p2 = 1.0 + rng.uniform(0.05, 0.4)
    p4 = p2 + rng.uniform(0.0, 0.3)
    return LatencyCoefficients(base.c1 * f[0], base.c2 * f[1], base.c3 * f[2], base.c4 * f[3],
                               base.c5 * f[4], {1: 1.0, 2: p2, 4: p4, 8: p4 + 0.1})


def test_c05_planner_vs_oracle():
    model = presets.model("toy")
    src = Trace.from_requests(preset_lengths("fixed-512-64"))
    slo = SLOSpec(0.05, 0.01)
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    mismatches, sizes = 0, set()
    for _ in range(10):
        coef = _coef_draw(rng)
        for aff, planner, oracle in (("high", plan_high_affinity, exhaustive_high),
                                     ("low", plan_low_affinity, exhaustive_low)):
            cl = ClusterSpec(2, 4, 80 * GiB, affinity=aff)
            ev = Memo(SimEvaluator(model, src, slo, coef, cl))
            pl = planner(model, cl, src, slo, coef, 10.0, evaluator=ev)
            best, size = oracle(model, cl, ev)
            sizes.add((aff, size))
            mismatches += (pl.prefill_cfg, pl.decode_cfg) != tuple(best)
    took = time.perf_counter() - t0
    small = all(s <= 40 for _, s in sizes)
    ok = mismatches == 0 and took < 300 and small
    _say(5, ok, f"{mismatches} mismatches over 10 draws x 2 planners; search spaces "
                f"{sorted(sizes)}; {took:.1f}s")
    assert small
    assert mismatches == 0
    assert took < 300


# 6 -----------------------------------------------------------------------------

def _independent_violations(pl, model, cl):
    bad = []
    usable = cl.gpu_mem_C * (1 - cl.activation_reserve)
    M = cl.gpus_per_node_M
    cfgs = [pl.prefill_cfg] + ([pl.decode_cfg] if pl.mode != "colocated" else [])
    for c in cfgs:
        if not model.weight_bytes / (c.inter_op * c.intra_op) < usable:
            bad.append("memory")
        if model.num_layers % c.inter_op or model.num_heads_n % c.intra_op:
            bad.append("divisibility")
    if pl.target_rate > 0:
        if pl.prefill_replicas_n < 1 or (pl.mode != "colocated" and pl.decode_replicas_m < 1):
            bad.append("replicas")
    used = {}
    for s in pl.node_assignment:
        used[s.node] = used.get(s.node, 0) + (s.gpu_hi - s.gpu_lo)
        if s.gpu_lo < 0 or s.gpu_hi > M:
            bad.append("gpu range")
    if any(v > M for v in used.values()):
        bad.append("node budget")
    expect = pl.prefill_replicas_n * pl.prefill_cfg.inter_op
    if pl.mode != "colocated":
        expect += pl.decode_replicas_m * pl.decode_cfg.inter_op
    if len(pl.node_assignment) != expect:
        bad.append("segment count")
    if pl.mode == "low_affinity":
        p, d = pl.prefill_cfg, pl.decode_cfg
        if p.inter_op != d.inter_op or p.intra_op + d.intra_op > M:
            bad.append("stage pairing")
        by_node = {}
        for s in pl.node_assignment:
            by_node.setdefault(s.node, []).append((s.instance.split("[")[0], s.stage))
        for segs in by_node.values():
            if sorted(k for k, _ in segs) != ["decode", "prefill"] or len({st for _, st in segs}) != 1:
                bad.append("stage pairing")
    return bad


@st.composite
def _problems(draw):
    heads = draw(st.sampled_from([2, 4, 6, 8, 12, 16, 24, 32, 40, 96]))
    layers = draw(st.sampled_from([1, 2, 3, 4, 6, 8, 12, 24, 40, 96]))
    model = ModelSpec("r", layers, heads * 64, heads, 64, heads * 256,
                      draw(st.floats(0, 1.2e12)))
    cl = ClusterSpec(draw(st.integers(1, 6)), draw(st.sampled_from([1, 2, 3, 4, 8])),
                     draw(st.sampled_from([16, 24, 40, 80])) * GiB,
                     activation_reserve=draw(st.sampled_from([0.0, 0.1, 0.2])),
                     affinity=draw(st.sampled_from(["high", "low"])))
    kind = draw(st.sampled_from(["disagg", "colocated"]))
    rate = draw(st.one_of(st.just(0.0), st.floats(0.01, 1000)))
    return model, cl, kind, draw(st.integers(0, 10**6)), rate


_C6 = {"problems": 0, "placements": 0, "infeasible": 0, "violations": 0}


@settings(max_examples=1000, deadline=None, derandomize=True,
          suppress_health_check=[HealthCheck.too_slow])
@given(_problems())
def _c06_property(problem):
    model, cl, kind, seed, rate = problem
    _C6["problems"] += 1
    if kind == "colocated":
        planner = plan_colocated
    else:
        planner = plan_high_affinity if cl.affinity == "high" else plan_low_affinity
    try:
        pl = planner(model, cl, [], SLOSpec(1, 1), presets.a100_coefficients(), rate,
                     evaluator=Analytic(seed))
    except PlacementError:
        _C6["infeasible"] += 1
        return
    _C6["placements"] += 1
    bad = _independent_violations(pl, model, cl)
    _C6["violations"] += bool(bad)
    assert not bad, bad


def test_c06_constraint_soundness():
    for k in _C6:
        _C6[k] = 0
    try:
        _c06_property()
    finally:
        ok = _C6["violations"] == 0 and _C6["problems"] >= 1000
        _say(6, ok, f"{_C6['problems']} problems, {_C6['placements']} placements, "
                    f"{_C6['infeasible']} infeasible (PlacementError), "
                    f"{_C6['violations']} violations")
    assert _C6["problems"] >= 1000


# 7 -----------------------------------------------------------------------------

def _gain(cl, model, coef, src, slo):
    base = plan_high_affinity(model, cl, src, slo, coef, 1.0)
    R, n, m = best_replica_mix(base.prefill_goodput, base.prefill_cfg.num_gpus,
                               base.decode_goodput, base.decode_cfg.num_gpus)
    pl = replace(base, prefill_replicas_n=n, decode_replicas_m=m, target_rate=R,
                 node_assignment=pack_high_affinity(base.prefill_cfg, n, base.decode_cfg, m,
                                                    cl.gpus_per_node_M))
    planned = R / pl.num_gpus
    measured = max_goodput(pl, model, src, slo, coef, cl) / pl.num_gpus
    col = plan_colocated(model, cl, src, slo, coef, 1.0)
    return pl, planned, measured, col


def test_c07_disaggregation_gain():
    model, coef = presets.model("opt-13b"), presets.a100_coefficients()
    src = Trace.from_requests(preset_lengths("fixed-512-64"))
    slo = SLOSpec(0.4, 0.04, 0.9)
    lines, ok = [], True
    for M in (1, 8):
        cl = ClusterSpec(1, M, 80 * GiB, 600e9, 100e9, "high")
        pl, planned, measured, col = _gain(cl, model, coef, src, slo)
        ratio = min(planned, measured) / col.per_gpu_goodput
        ok &= ratio >= 1.5
        lines.append(
            f"{M} GPU/node: {pl.prefill_replicas_n}x prefill tp{pl.prefill_cfg.intra_op}"
            f"pp{pl.prefill_cfg.inter_op} + {pl.decode_replicas_m}x decode "
            f"tp{pl.decode_cfg.intra_op}pp{pl.decode_cfg.inter_op}: planned {planned:.2f}, "
            f"simulated {measured:.2f} req/s/GPU vs colocated tp{col.prefill_cfg.intra_op}"
            f"pp{col.prefill_cfg.inter_op} {col.per_gpu_goodput:.2f} -> {ratio:.2f}x")
    _say(7, ok, "; ".join(lines))
    assert ok


# 8 -----------------------------------------------------------------------------

def test_c08_transfer_negligible():
    model, coef = presets.model("opt-175b"), presets.a100_coefficients()
    cl = ClusterSpec(3, 8, 80 * GiB, 600e9, 25e9 / 8, "low")
    cfg = ParallelConfig(3, 4)
    pl = Placement("low_affinity", cfg, cfg, 1, 1, per_gpu_goodput=0.0, target_rate=1.0,
                   node_assignment=pack_low_affinity(cfg, cfg, 1))
    tr = sample_trace(preset_lengths("chat"), 1.0, 2000, 0)
    res = simulate(pl, tr, SLOSpec(1.0, 0.1), coef, cl, model)
    share = res.stage_shares()["transmission"]
    fast = float(np.mean(res.transfer < 0.030))
    ok = share < 0.01 and fast >= 0.95
    _say(8, ok, f"transmission share {share:.4%}, {fast:.1%} of transfers < 30 ms "
                f"(max {res.transfer.max() * 1e3:.1f} ms)")
    assert share < 0.01
    assert fast >= 0.95


# 9 -----------------------------------------------------------------------------

def test_c09_search_determinism_monotonicity():
    model, coef = presets.model("opt-13b"), presets.a100_coefficients()
    cl = presets.cluster("a100-1x2-high")
    src = Trace.from_requests(preset_lengths("fixed-512-64"))
    one = ParallelConfig(1, 1)
    pl = Placement("high_affinity", one, one, 1, 1, per_gpu_goodput=0.0,
                   node_assignment=pack_high_affinity(one, 1, one, 1, 2))
    slo = SLOSpec(0.4, 0.04)
    a = max_goodput(pl, model, src, slo, coef, cl)
    b = max_goodput(pl, model, src, slo, coef, cl)
    scales = [0.5, 0.75, 1.0, 1.5, 2.0]
    goods = [max_goodput(pl, model, src, replace(slo, slo_scale=s), coef, cl) for s in scales]
    mono = all(x <= y for x, y in zip(goods, goods[1:]))
    ok = a == b and mono
    _say(9, ok, f"repeat {a!r} == {b!r}; goodput over scales {scales}: "
                + ", ".join(f"{g:.3f}" for g in goods))
    assert a == b
    assert mono


# 10 ----------------------------------------------------------------------------

def test_c10_planner_runtime():
    model, coef = presets.model("opt-13b"), presets.a100_coefficients()
    src = Trace.from_requests(preset_lengths("chat"))
    slo = SLOSpec(0.25, 0.1)
    jobs = os.cpu_count() or 1
    times = {}
    for N, M in ((1, 2), (1, 8), (4, 8)):
        for aff, planner in (("high", plan_high_affinity), ("low", plan_low_affinity)):
            cl = ClusterSpec(N, M, 80 * GiB, 600e9, 100e9 if aff == "high" else 25e9 / 8, aff)
            t0 = time.perf_counter()
            pl = planner(model, cl, src, slo, coef, 10.0, jobs=jobs)
            times[N * M, aff] = (time.perf_counter() - t0, pl.enumerated)
    grows = all(times[2, a][0] < times[32, a][0] for a in ("high", "low"))
    bound = all(times[32, a][0] < 120 for a in ("high", "low"))
    ok = grows and bound
    _say(10, ok, f"jobs={jobs}; " + ", ".join(
        f"{a} {g} GPUs: {t:.1f}s/{n} configs" for (g, a), (t, n) in sorted(times.items())))
    assert grows
    assert bound


# 11 ----------------------------------------------------------------------------

def test_c11_stage_conservation():
    model, coef = presets.model("opt-13b"), presets.a100_coefficients()
    cl = presets.cluster("a100-4x8-high")
    worst = 0.0
    for wl in ("fixed-512-64", "chat", "long-prompt"):
        tr = sample_trace(preset_lengths(wl), 6.0, 1500, 3)
        for pcfg, dcfg in ((ParallelConfig(1, 1), ParallelConfig(1, 1)),
                           (ParallelConfig(2, 2), ParallelConfig(4, 1))):
            p = make_instance("prefill", model, pcfg, cl, coef)
            d = make_instance("decoding", model, dcfg, cl, coef)
            c = make_instance("colocated", model, pcfg, cl, coef)
            for kw in ({"prefill": [p, p]}, {"decode": [d]},
                       {"prefill": [p], "decode": [d, d], "link_bw": 3e9},
                       {"colocated": [c, c]}):
                res = run(model, coef, tr, SLOSpec(0.3, 0.05), **kw)
                e2e = float(np.sum(res.completion - res.arrival))
                worst = max(worst, abs(sum(res.stage_totals.values()) - e2e) / e2e)
    ok = worst <= 1e-6 and STAGE_AUDIT["worst_rel"] <= 1e-6
    _say(11, ok, f"battery worst {worst:.2e}; {STAGE_AUDIT['runs']} audited simulations so "
                 f"far, worst {STAGE_AUDIT['worst_rel']:.2e} (suite-wide total in summary)")
    assert worst <= 1e-6
    assert STAGE_AUDIT["worst_rel"] <= 1e-6
