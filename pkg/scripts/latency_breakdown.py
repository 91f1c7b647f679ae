"""Stage breakdown of end-to-end latency for OPT-175B on a low-affinity cluster.

Writes the share of each stage and the CDF of KV transfer times.
"""

import argparse
import csv
import sys

import numpy as np

from disagg import presets
from disagg.latency import ParallelConfig
from disagg.placement import Placement, pack_low_affinity
from disagg.simulator import ClusterSpec, SLOSpec, simulate
from disagg.workload import preset_lengths, sample_trace


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workload", default="chat")
    ap.add_argument("--rate", type=float, default=1.0)
    ap.add_argument("--requests", type=int, default=2000)
    ap.add_argument("--cross-node-gbps", type=float, default=25.0)
    ap.add_argument("--out", default="-")
    a = ap.parse_args()

    model, coef = presets.model("opt-175b"), presets.a100_coefficients()
    cl = ClusterSpec(3, 8, 80 * 2**30, 600e9, a.cross_node_gbps * 1e9 / 8, "low")
    cfg = ParallelConfig(3, 4)
    pl = Placement("low_affinity", cfg, cfg, 1, 1, per_gpu_goodput=0.0, target_rate=a.rate,
                   node_assignment=pack_low_affinity(cfg, cfg, 1))
    tr = sample_trace(preset_lengths(a.workload), a.rate, a.requests, 0)
    res = simulate(pl, tr, SLOSpec(1.0, 0.1), coef, cl, model)

    out = sys.stdout if a.out == "-" else open(a.out, "w", newline="")
    w = csv.writer(out)
    w.writerow(["kind", "key", "value"])
    for stage, share in res.stage_shares().items():
        w.writerow(["share", stage, f"{share:.6f}"])
    xs = np.sort(res.transfer)
    for q in np.linspace(0, 1, 21):
        w.writerow(["transfer_cdf", f"{q:.2f}", f"{np.quantile(xs, q):.6f}"])
    if out is not sys.stdout:
        out.close()


if __name__ == "__main__":
    main()
