"""Placement search for disaggregated serving.

``plan_high_affinity`` sizes prefill and decoding instances independently
(KV transfer is cheap anywhere in the cluster). ``plan_low_affinity`` pairs a
prefill and a decoding instance that share pipeline stage boundaries so each
node holds matching stage segments and KV moves over the intra-node link only.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

from .errors import PlacementError
from .latency import LatencyCoefficients, ModelSpec, ParallelConfig
from .search import SearchConfig, simu_colocated, simu_decode, simu_pair, simu_prefill
from .simulator import ClusterSpec, SLOSpec
from .workload import Trace

log = logging.getLogger(__name__)

MODES = ("high_affinity", "low_affinity", "colocated")


@dataclass(frozen=True)
class NodeSegment:
    node: int
    gpu_lo: int
    gpu_hi: int  # exclusive
    instance: str  # e.g. "prefill[0]"
    stage: int

    @property
    def num_gpus(self) -> int:
        return self.gpu_hi - self.gpu_lo

    @property
    def phase(self) -> str:
        return self.instance.split("[")[0]


@dataclass
class Placement:
    mode: str
    prefill_cfg: ParallelConfig
    decode_cfg: ParallelConfig
    prefill_replicas_n: int
    decode_replicas_m: int
    per_gpu_goodput: float = 0.0
    prefill_goodput: float = 0.0
    decode_goodput: float = 0.0
    target_rate: float = 0.0
    node_assignment: list = field(default_factory=list)
    enumerated: int = 0
    planning_time_s: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise PlacementError(f"unknown placement mode {self.mode!r}")

    @property
    def num_gpus(self) -> int:
        if self.mode == "colocated":
            return self.prefill_replicas_n * self.prefill_cfg.num_gpus
        return (self.prefill_replicas_n * self.prefill_cfg.num_gpus
                + self.decode_replicas_m * self.decode_cfg.num_gpus)

    @property
    def combined_per_gpu_goodput(self) -> float:
        """Target rate served per provisioned GPU after replica rounding."""
        return self.target_rate / self.num_gpus if self.num_gpus else 0.0

    def to_dict(self) -> dict:
        d = {
            "mode": self.mode,
            "prefill": {**self.prefill_cfg.to_dict(), "replicas": self.prefill_replicas_n,
                        "goodput_rps": self.prefill_goodput},
            "decode": {**self.decode_cfg.to_dict(), "replicas": self.decode_replicas_m,
                       "goodput_rps": self.decode_goodput},
            "per_gpu_goodput": self.per_gpu_goodput,
            "combined_per_gpu_goodput": self.combined_per_gpu_goodput,
            "target_rate": self.target_rate,
            "num_gpus": self.num_gpus,
            "enumerated": self.enumerated,
            "planning_time_s": self.planning_time_s,
            "node_assignment": [
                {"node": s.node, "gpus": [s.gpu_lo, s.gpu_hi], "instance": s.instance,
                 "stage": s.stage} for s in self.node_assignment],
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Placement":
        p, q = d["prefill"], d["decode"]
        return cls(
            mode=d["mode"],
            prefill_cfg=ParallelConfig.from_dict(p), decode_cfg=ParallelConfig.from_dict(q),
            prefill_replicas_n=int(p.get("replicas", 1)),
            decode_replicas_m=int(q.get("replicas", 1)),
            per_gpu_goodput=float(d.get("per_gpu_goodput", 0.0)),
            prefill_goodput=float(p.get("goodput_rps", 0.0)),
            decode_goodput=float(q.get("goodput_rps", 0.0)),
            target_rate=float(d.get("target_rate", 0.0)),
            node_assignment=[NodeSegment(s["node"], s["gpus"][0], s["gpus"][1], s["instance"],
                                         s.get("stage", 0))
                             for s in d.get("node_assignment", [])],
            enumerated=int(d.get("enumerated", 0)),
            planning_time_s=float(d.get("planning_time_s", 0.0)),
        )


# --- helpers ----------------------------------------------------------------

def replicate_to_rate(per_instance_goodput: float, target_R: float) -> int:
    if target_R <= 0:
        if target_R == 0:
            log.warning("target rate is 0: degenerate placement with no replicas")
            return 0
        raise PlacementError("target rate must be >= 0")
    if per_instance_goodput <= 0:
        raise PlacementError("no configuration reaches the SLO attainment target (goodput 0)")
    return max(1, math.ceil(target_R / per_instance_goodput - 1e-9))


def best_replica_mix(good_p: float, gpus_p: int, good_d: float, gpus_d: int,
                     max_replicas: int = 8) -> tuple[float, int, int]:
    """Target rate whose replica counts waste the least capacity.

    Candidate rates are the throughputs of whole instance mixes,
    ``min(n * good_p, m * good_d)`` for n, m up to ``max_replicas``; each is
    provisioned by :func:`replicate_to_rate`. Returns ``(rate, n, m)`` with the
    highest rate per provisioned GPU.
    """
    if good_p <= 0 or good_d <= 0:
        raise PlacementError("both phases need positive goodput")
    best = None
    for i in range(1, max_replicas + 1):
        for j in range(1, max_replicas + 1):
            R = min(i * good_p, j * good_d)
            n, m = replicate_to_rate(good_p, R), replicate_to_rate(good_d, R)
            eff = R / (n * gpus_p + m * gpus_d)
            if best is None or eff > best[0] + 1e-12:
                best = (eff, R, n, m)
    return best[1:]


def shard_fits(model: ModelSpec, cfg: ParallelConfig, cluster: ClusterSpec) -> bool:
    """Per-GPU weight shard leaves room under the usable GPU memory."""
    return model.weight_bytes / cfg.num_gpus < cluster.usable_gpu_mem


def divisible(model: ModelSpec, cfg: ParallelConfig) -> bool:
    return model.num_heads_n % cfg.intra_op == 0 and model.num_layers % cfg.inter_op == 0


def high_affinity_configs(model: ModelSpec, cluster: ClusterSpec) -> list[ParallelConfig]:
    """Configs visited by the high-affinity loops, in loop order."""
    N, M = cluster.num_nodes_N, cluster.gpus_per_node_M
    out = []
    for intra in range(1, M + 1):
        for inter in range(1, N * M // intra + 1):
            cfg = ParallelConfig(inter, intra)
            if divisible(model, cfg) and shard_fits(model, cfg, cluster):
                out.append(cfg)
    return out


def get_intra_node_configs(model: ModelSpec, M: int, C: float, inter_op: int,
                           activation_reserve: float = 0.1) -> list[ParallelConfig]:
    """Intra-node segment configs for a fixed pipeline degree."""
    if model.num_layers % inter_op:
        return []
    usable = C * (1.0 - activation_reserve)
    seg = model.weight_bytes / inter_op
    return [ParallelConfig(inter_op, intra) for intra in range(1, M + 1)
            if model.num_heads_n % intra == 0 and seg / intra < usable]


def low_affinity_pairs(model: ModelSpec, cluster: ClusterSpec) -> list[tuple]:
    out = []
    for inter in range(1, cluster.num_nodes_N + 1):
        P = get_intra_node_configs(model, cluster.gpus_per_node_M, cluster.gpu_mem_C, inter,
                                   cluster.activation_reserve)
        for pp in P:
            for pd in P:
                if pp.intra_op + pd.intra_op <= cluster.gpus_per_node_M:
                    out.append((pp, pd))
    return out


def _rank_key(goodput: float, cfg_gpus: int, inter: int, intra: int):
    # max per-GPU goodput; ties: fewer GPUs, lower inter_op, lower intra_op
    return (goodput / cfg_gpus, -cfg_gpus, -inter, -intra)


def pick_best(scored: Sequence[tuple]) -> tuple:
    """Deterministic argmax over ``(cfg, goodput)`` pairs."""
    return max(scored, key=lambda x: _rank_key(x[1], x[0].num_gpus, x[0].inter_op,
                                               x[0].intra_op))


def pick_best_pair(scored: Sequence[tuple]) -> tuple:
    """Argmax over ``((cfg_p, cfg_d), goodput)``."""
    def key(x):
        (pp, pd), g = x
        gpus = pp.num_gpus + pd.num_gpus
        return (g / gpus, -gpus, -pp.inter_op, -pp.intra_op, -pd.intra_op)
    return max(scored, key=key)


def pack_high_affinity(cfg_p: ParallelConfig, n: int, cfg_d: ParallelConfig, m: int,
                       M: int) -> list[NodeSegment]:
    """First-fit-decreasing packing of instance stages onto M-GPU nodes."""
    items = []
    for phase, cfg, count in (("prefill", cfg_p, n), ("decode", cfg_d, m)):
        for i in range(count):
            for s in range(cfg.inter_op):
                items.append((cfg.intra_op, f"{phase}[{i}]", s))
    items.sort(key=lambda x: -x[0])
    free = []
    segs = []
    for size, label, stage in items:
        for node, f in enumerate(free):
            if f >= size:
                break
        else:
            free.append(M)
            node = len(free) - 1
        lo = M - free[node]
        free[node] -= size
        segs.append(NodeSegment(node, lo, lo + size, label, stage))
    return segs


def pack_low_affinity(cfg_p: ParallelConfig, cfg_d: ParallelConfig, n: int) -> list[NodeSegment]:
    segs = []
    for i in range(n):
        for s in range(cfg_p.inter_op):
            node = i * cfg_p.inter_op + s
            segs.append(NodeSegment(node, 0, cfg_p.intra_op, f"prefill[{i}]", s))
            segs.append(NodeSegment(node, cfg_p.intra_op, cfg_p.intra_op + cfg_d.intra_op,
                                    f"decode[{i}]", s))
    return segs


def placement_violations(placement: Placement, model: ModelSpec,
                         cluster: ClusterSpec) -> list[str]:
    """Invariant breaches of ``placement``; empty when it is valid."""
    bad = []
    M = cluster.gpus_per_node_M
    cfgs = [("prefill", placement.prefill_cfg)]
    if placement.mode != "colocated":
        cfgs.append(("decode", placement.decode_cfg))
    for name, cfg in cfgs:
        if not divisible(model, cfg):
            bad.append(f"{name} {cfg} does not divide the model")
        if not shard_fits(model, cfg, cluster):
            bad.append(f"{name} {cfg} weight shard does not fit GPU memory")
        if cfg.intra_op > M:
            bad.append(f"{name} intra_op {cfg.intra_op} exceeds GPUs per node {M}")
    if placement.target_rate > 0 and placement.prefill_replicas_n < 1:
        bad.append("no prefill replicas for a positive target rate")
    if placement.mode != "colocated" and placement.target_rate > 0 \
            and placement.decode_replicas_m < 1:
        bad.append("no decode replicas for a positive target rate")
    if placement.mode == "low_affinity":
        p, d = placement.prefill_cfg, placement.decode_cfg
        if p.inter_op != d.inter_op:
            bad.append(f"stage pairing: inter_op differs ({p.inter_op} vs {d.inter_op})")
        if p.intra_op + d.intra_op > M:
            bad.append(f"node budget: {p.intra_op} + {d.intra_op} > {M}")
        if placement.prefill_replicas_n != placement.decode_replicas_m:
            bad.append("low-affinity replicas must come in prefill/decode pairs")
    by_node: dict = {}
    for s in placement.node_assignment:
        by_node.setdefault(s.node, []).append(s)
    for node, segs in by_node.items():
        used = sorted((s.gpu_lo, s.gpu_hi) for s in segs)
        if sum(hi - lo for lo, hi in used) > M or any(hi > M or lo < 0 for lo, hi in used):
            bad.append(f"node {node} over its {M} GPUs")
        for (a, b), (c, _) in zip(used, used[1:]):
            if c < b:
                bad.append(f"node {node} has overlapping GPU ranges")
        if placement.mode == "low_affinity":
            stages = {(s.phase, s.stage) for s in segs}
            phases = sorted(s.phase for s in segs)
            if phases != ["decode", "prefill"] or len({st for _, st in stages}) != 1:
                bad.append(f"node {node} does not hold one matching prefill/decode stage pair")
    return bad


def validate_placement(placement: Placement, model: ModelSpec, cluster: ClusterSpec) -> None:
    bad = placement_violations(placement, model, cluster)
    if bad:
        raise PlacementError("; ".join(bad))


# --- evaluation -------------------------------------------------------------

@dataclass(frozen=True)
class SimEvaluator:
    """Goodput oracle backed by the simulator. Picklable for process pools."""
    model: ModelSpec
    source: Trace
    slo: SLOSpec
    coef: LatencyCoefficients
    cluster: ClusterSpec
    search: SearchConfig = SearchConfig()

    def prefill(self, cfg):
        return simu_prefill(self.model, cfg, self.source, self.slo, self.coef, self.cluster,
                            self.search)

    def decode(self, cfg):
        return simu_decode(self.model, cfg, self.source, self.slo, self.coef, self.cluster,
                           self.search)

    def pair(self, cfg_p, cfg_d):
        return simu_pair(self.model, cfg_p, cfg_d, self.source, self.slo, self.coef,
                         self.cluster, self.search, link_bw=self.cluster.intra_node_bw)

    def colocated(self, cfg):
        return simu_colocated(self.model, cfg, self.source, self.slo, self.coef, self.cluster,
                              self.search)


def _call(args):
    ev, method, cfgs = args
    return getattr(ev, method)(*cfgs)


def _evaluate(ev, method: str, items: list, jobs: int) -> list:
    tasks = [(ev, method, cfgs) for cfgs in items]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_call, tasks))
    return [_call(t) for t in tasks]


def _evaluator(model, cluster, workload_source, slo, coef, search, evaluator):
    if evaluator is not None:
        return evaluator
    src = workload_source if isinstance(workload_source, Trace) else \
        Trace.from_requests(list(workload_source))
    return SimEvaluator(model, src, slo, coef, cluster, search)


# --- planners ---------------------------------------------------------------

def plan_high_affinity(model: ModelSpec, cluster: ClusterSpec, workload_source, slo: SLOSpec,
                       coef: LatencyCoefficients, target_rate_R: float,
                       search: SearchConfig = SearchConfig(), jobs: int = 1,
                       evaluator=None) -> Placement:
    """Independent per-phase search, then replication to the target rate."""
    t0 = time.perf_counter()
    ev = _evaluator(model, cluster, workload_source, slo, coef, search, evaluator)
    configs = high_affinity_configs(model, cluster)
    if not configs:
        raise PlacementError(f"no parallel config fits {model.name} on this cluster")
    gp = _evaluate(ev, "prefill", [(c,) for c in configs], jobs)
    gd = _evaluate(ev, "decode", [(c,) for c in configs], jobs)
    cfg_p, good_p = pick_best(list(zip(configs, gp)))
    cfg_d, good_d = pick_best(list(zip(configs, gd)))
    if target_rate_R > 0 and (good_p <= 0 or good_d <= 0):
        raise PlacementError("no configuration reaches the SLO attainment target")
    n = replicate_to_rate(good_p, target_rate_R)
    m = replicate_to_rate(good_d, target_rate_R)
    if good_p > 0 and good_d > 0:
        per_gpu = 1.0 / (cfg_p.num_gpus / good_p + cfg_d.num_gpus / good_d)
    else:
        per_gpu = 0.0
    return Placement(
        "high_affinity", cfg_p, cfg_d, n, m, per_gpu_goodput=per_gpu,
        prefill_goodput=good_p, decode_goodput=good_d, target_rate=target_rate_R,
        node_assignment=pack_high_affinity(cfg_p, n, cfg_d, m, cluster.gpus_per_node_M),
        enumerated=len(configs), planning_time_s=time.perf_counter() - t0)


def plan_low_affinity(model: ModelSpec, cluster: ClusterSpec, workload_source, slo: SLOSpec,
                      coef: LatencyCoefficients, target_rate_R: float,
                      search: SearchConfig = SearchConfig(), jobs: int = 1,
                      evaluator=None) -> Placement:
    """Joint search over stage-paired prefill/decode segments on one node."""
    t0 = time.perf_counter()
    ev = _evaluator(model, cluster, workload_source, slo, coef, search, evaluator)
    pairs = low_affinity_pairs(model, cluster)
    if not pairs:
        raise PlacementError(f"no prefill/decode segment pair of {model.name} fits a node")
    goods = _evaluate(ev, "pair", pairs, jobs)
    (cfg_p, cfg_d), good = pick_best_pair(list(zip(pairs, goods)))
    if target_rate_R > 0 and good <= 0:
        raise PlacementError("no configuration reaches the SLO attainment target")
    n = replicate_to_rate(good, target_rate_R)
    gpus = cfg_p.num_gpus + cfg_d.num_gpus
    return Placement(
        "low_affinity", cfg_p, cfg_d, n, n, per_gpu_goodput=good / gpus,
        prefill_goodput=good, decode_goodput=good, target_rate=target_rate_R,
        node_assignment=pack_low_affinity(cfg_p, cfg_d, n),
        enumerated=len(pairs), planning_time_s=time.perf_counter() - t0)


def plan_colocated(model: ModelSpec, cluster: ClusterSpec, workload_source, slo: SLOSpec,
                   coef: LatencyCoefficients, target_rate_R: float,
                   search: SearchConfig = SearchConfig(), jobs: int = 1, evaluator=None,
                   max_inter_op: int | None = None) -> Placement:
    """Baseline: best colocated config over the same config space."""
    t0 = time.perf_counter()
    ev = _evaluator(model, cluster, workload_source, slo, coef, search, evaluator)
    configs = [c for c in high_affinity_configs(model, cluster)
               if max_inter_op is None or c.inter_op <= max_inter_op]
    if not configs:
        raise PlacementError(f"no parallel config fits {model.name} on this cluster")
    goods = _evaluate(ev, "colocated", [(c,) for c in configs], jobs)
    cfg, good = pick_best(list(zip(configs, goods)))
    if target_rate_R > 0 and good <= 0:
        raise PlacementError("no colocated configuration reaches the SLO attainment target")
    n = replicate_to_rate(good, target_rate_R)
    return Placement(
        "colocated", cfg, cfg, n, 0, per_gpu_goodput=good / cfg.num_gpus,
        prefill_goodput=good, decode_goodput=good, target_rate=target_rate_R,
        node_assignment=pack_high_affinity(cfg, n, cfg, 0, cluster.gpus_per_node_M),
        enumerated=len(configs), planning_time_s=time.perf_counter() - t0)
