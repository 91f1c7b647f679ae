"""Wall time of both planners as the cluster grows."""

import argparse
import csv
import os
import sys
import time

from disagg import presets
from disagg.placement import plan_high_affinity, plan_low_affinity
from disagg.simulator import ClusterSpec, SLOSpec
from disagg.workload import Trace, preset_lengths


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="opt-13b")
    ap.add_argument("--workload", default="chat")
    ap.add_argument("--shapes", default="1x2,1x4,1x8,2x8,4x8", help="NODESxGPUS list")
    ap.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--out", default="-")
    a = ap.parse_args()

    model, coef = presets.model(a.model), presets.a100_coefficients()
    src = Trace.from_requests(preset_lengths(a.workload))
    slo = SLOSpec(0.25, 0.1)
    out = sys.stdout if a.out == "-" else open(a.out, "w", newline="")
    w = csv.writer(out)
    w.writerow(["affinity", "nodes", "gpus_per_node", "configs", "seconds"])
    for shape in a.shapes.split(","):
        N, M = map(int, shape.split("x"))
        for aff, planner in (("high", plan_high_affinity), ("low", plan_low_affinity)):
            cl = ClusterSpec(N, M, 80 * 2**30, 600e9, 100e9 if aff == "high" else 25e9 / 8, aff)
            t0 = time.perf_counter()
            pl = planner(model, cl, src, slo, coef, 10.0, jobs=a.jobs)
            w.writerow([aff, N, M, pl.enumerated, f"{time.perf_counter() - t0:.3f}"])
            out.flush()
    if out is not sys.stdout:
        out.close()


if __name__ == "__main__":
    main()
