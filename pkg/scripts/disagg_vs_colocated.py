"""Per-GPU goodput of the best disaggregated and colocated placements."""

import argparse
import csv
import sys
from dataclasses import replace

from disagg import presets
from disagg.placement import best_replica_mix, pack_high_affinity, plan_colocated, plan_high_affinity
from disagg.search import max_goodput
from disagg.simulator import ClusterSpec, SLOSpec
from disagg.workload import Trace, preset_lengths


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="opt-13b")
    ap.add_argument("--workload", default="fixed-512-64")
    ap.add_argument("--ttft", type=float, default=0.4)
    ap.add_argument("--tpot", type=float, default=0.04)
    ap.add_argument("--gpus", default="1,2,4,8", help="GPUs per node to try, one node each")
    ap.add_argument("--out", default="-")
    a = ap.parse_args()

    model, coef = presets.model(a.model), presets.a100_coefficients()
    src = Trace.from_requests(preset_lengths(a.workload))
    slo = SLOSpec(a.ttft, a.tpot, 0.9)
    out = sys.stdout if a.out == "-" else open(a.out, "w", newline="")
    w = csv.writer(out)
    w.writerow(["gpus_per_node", "prefill", "decode", "n", "m", "disagg_planned",
                "disagg_simulated", "colocated", "colocated_per_gpu", "ratio"])
    for M in map(int, a.gpus.split(",")):
        cl = ClusterSpec(1, M, 80 * 2**30, 600e9, 100e9, "high")
        base = plan_high_affinity(model, cl, src, slo, coef, 1.0)
        R, n, m = best_replica_mix(base.prefill_goodput, base.prefill_cfg.num_gpus,
                                   base.decode_goodput, base.decode_cfg.num_gpus)
        pl = replace(base, prefill_replicas_n=n, decode_replicas_m=m, target_rate=R,
                     node_assignment=pack_high_affinity(base.prefill_cfg, n, base.decode_cfg, m, M))
        sim = max_goodput(pl, model, src, slo, coef, cl) / pl.num_gpus
        col = plan_colocated(model, cl, src, slo, coef, 1.0)
        p, d, c = pl.prefill_cfg, pl.decode_cfg, col.prefill_cfg
        w.writerow([M, f"tp{p.intra_op}pp{p.inter_op}", f"tp{d.intra_op}pp{d.inter_op}", n, m,
                    f"{R / pl.num_gpus:.4f}", f"{sim:.4f}", f"tp{c.intra_op}pp{c.inter_op}",
                    f"{col.per_gpu_goodput:.4f}", f"{min(R / pl.num_gpus, sim) / col.per_gpu_goodput:.3f}"])
        out.flush()
    if out is not sys.stdout:
        out.close()


if __name__ == "__main__":
    main()
