"""Average TTFT of a two-GPU prefill instance, pipeline vs tensor parallel.

Writes one row per arrival rate with both the queueing formulas and the
simulated means, so the crossover point can be plotted directly.
"""

import argparse
import csv
import sys

import numpy as np

from disagg import presets
from disagg.latency import (BatchProfile, ParallelConfig, mdl_avg_ttft_inter, mdl_avg_ttft_intra,
                            parallelize, prefill_iter_time)
from disagg.simulator import ClusterSpec, make_instance, run
from disagg.workload import Trace, preset_lengths, sample_trace


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", default="opt-66b")
    ap.add_argument("--penalty", type=float, default=1.25, help="slowdown of a 2-way shard")
    ap.add_argument("--points", type=int, default=12)
    ap.add_argument("--requests", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--out", default="-")
    a = ap.parse_args()

    model = presets.model(a.model)
    coef = presets.a100_coefficients({1: 1.0, 2: a.penalty})
    cl = ClusterSpec(1, 2, 80 * 2**30, affinity="high")
    src = Trace.from_requests(preset_lengths("uniform-512"))
    inter, intra = ParallelConfig(2, 1), ParallelConfig(1, 2)
    D = prefill_iter_time(model, BatchProfile.of([512]), coef)
    K = D / prefill_iter_time(parallelize(model, intra), BatchProfile.of([512]), coef)
    insts = {c: make_instance("prefill", model, c, cl, coef) for c in (inter, intra)}

    out = sys.stdout if a.out == "-" else open(a.out, "w", newline="")
    w = csv.writer(out)
    w.writerow(["rate", "rd", "inter_model_s", "intra_model_s", "inter_sim_s", "intra_sim_s"])
    for rd in np.linspace(0.05, 0.95 * min(2.0, K), a.points):
        R = rd / D
        tr = sample_trace(src, R, a.requests, a.seed)
        sim = [float(run(model, coef, tr, None, prefill=[insts[c]]).ttft.mean())
               for c in (inter, intra)]
        w.writerow([f"{R:.4f}", f"{rd:.4f}", f"{mdl_avg_ttft_inter(D, R):.6f}",
                    f"{mdl_avg_ttft_intra(D, R, K):.6f}", f"{sim[0]:.6f}", f"{sim[1]:.6f}"])
    if out is not sys.stdout:
        out.close()


if __name__ == "__main__":
    main()
