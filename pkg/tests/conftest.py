import functools

import numpy as np
import pytest

import disagg.search
import disagg.simulator
from disagg import presets
from disagg.latency import LatencyCoefficients, ModelSpec
from disagg.simulator import ClusterSpec, SLOSpec
from disagg.workload import Trace, preset_lengths


# Every simulation in the suite passes through this wrapper, which checks that
# the five stage totals add up to end-to-end latency measured from arrival to
# the last token. Worst relative error seen is kept for the acceptance report.
STAGE_AUDIT = {"runs": 0, "worst_rel": 0.0}


def _audited(run):
    @functools.wraps(run)
    def wrapper(*args, **kwargs):
        res = run(*args, **kwargs)
        total = sum(res.stage_totals.values())
        e2e = float(np.sum(res.completion - res.arrival))
        rel = abs(total - e2e) / max(abs(e2e), 1e-300) if len(res.arrival) else 0.0
        STAGE_AUDIT["runs"] += 1
        STAGE_AUDIT["worst_rel"] = max(STAGE_AUDIT["worst_rel"], rel)
        assert rel <= 1e-6, f"stage totals off by {rel:.3g} relative"
        return res
    return wrapper


disagg.simulator.run = _audited(disagg.simulator.run)
disagg.search.run = disagg.simulator.run


@pytest.fixture
def unit_coef():
    return LatencyCoefficients(1.0, 1.0, 1.0, 1.0, 1.0)


@pytest.fixture
def tiny_model():
    # hidden 2 = 1 head of size 2; ffn 4; one layer
    return ModelSpec("tiny", 1, 2, 1, 2, 4, 0)


@pytest.fixture
def opt13b():
    return presets.model("opt-13b")


@pytest.fixture
def a100():
    return presets.a100_coefficients()


@pytest.fixture
def big_cluster():
    return ClusterSpec(4, 8, 80 * 2**30, 600e9, 100e9, "high")


@pytest.fixture
def fixed_src():
    return Trace.from_requests(preset_lengths("fixed-512-64"))


@pytest.fixture
def loose_slo():
    return SLOSpec(10.0, 10.0, 0.9)


def poisson_trace(rate, n, inp, out, seed=0):
    rng = np.random.default_rng(seed)
    arr = np.cumsum(rng.exponential(1.0 / rate, n))
    return Trace(arr, np.full(n, inp, dtype=np.int64), np.full(n, out, dtype=np.int64))


# --- acceptance report -----------------------------------------------------------

CRITERIA = {}


def report(num, ok, detail):
    CRITERIA[num] = (bool(ok), detail)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA and not STAGE_AUDIT["runs"]:
        return
    tr = terminalreporter
    tr.section("acceptance criteria" if CRITERIA else "stage accounting")
    for num in sorted(CRITERIA):
        ok, detail = CRITERIA[num]
        tr.write_line(f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    tr.write_line(f"stage accounting audit: {STAGE_AUDIT['runs']} simulations, worst relative "
                  f"error {STAGE_AUDIT['worst_rel']:.2e}")
