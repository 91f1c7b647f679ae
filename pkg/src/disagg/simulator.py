"""Iteration-level discrete-event simulation of LLM serving.

Three instance kinds share one event loop:

* prefill instances run FCFS batches capped at a token budget and keep each
  finished request's KV cache in their own memory until a decoding instance
  pulls it;
* decoding instances run continuous batching, admitting pulled requests at
  iteration boundaries when their full KV footprint fits the budget;
* colocated instances merge new prefills into ongoing decode iterations.

Pipeline parallelism is modelled with per-stage busy-until times: a batch
entering stage ``k`` waits for both its own stage ``k-1`` output and for
stage ``k`` to drain earlier work, so bubbles appear when stage times differ.
Decoding and colocated instances keep one continuous batch per stage (lanes)
so a ``p``-stage instance has ``p`` micro-batches in flight.
"""

from __future__ import annotations

import csv
import heapq
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CapacityError, ConfigError, PlacementError
from .latency import (LatencyCoefficients, ModelSpec, ParallelConfig, decode_cost,
                      kv_bytes_per_token, parallelize, prefill_cost, saturation_length)
from .workload import Request, Trace

STAGES = ("prefill_queuing", "prefill_execution", "transmission",
          "decoding_queuing", "decoding_execution")


@dataclass(frozen=True)
class ClusterSpec:
    num_nodes_N: int
    gpus_per_node_M: int
    gpu_mem_C: float
    intra_node_bw: float = 600e9
    cross_node_bw: float = 25e9 / 8
    affinity: str = "low"
    activation_reserve: float = 0.1

    def __post_init__(self):
        if self.num_nodes_N < 1 or self.gpus_per_node_M < 1:
            raise ConfigError("cluster needs at least one node and one GPU per node")
        if self.gpu_mem_C <= 0 or self.intra_node_bw <= 0 or self.cross_node_bw <= 0:
            raise ConfigError("memory and bandwidths must be positive")
        if self.affinity not in ("high", "low"):
            raise ConfigError(f"affinity must be 'high' or 'low', got {self.affinity!r}")
        if not 0 <= self.activation_reserve < 1:
            raise ConfigError("activation_reserve must be in [0, 1)")

    @property
    def usable_gpu_mem(self) -> float:
        return self.gpu_mem_C * (1.0 - self.activation_reserve)

    def to_dict(self) -> dict:
        return {"num_nodes": self.num_nodes_N, "gpus_per_node": self.gpus_per_node_M,
                "gpu_mem_bytes": self.gpu_mem_C,
                "intra_node_bw_bytes_per_s": self.intra_node_bw,
                "cross_node_bw_bytes_per_s": self.cross_node_bw,
                "affinity": self.affinity, "activation_reserve": self.activation_reserve}

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterSpec":
        return cls(int(d["num_nodes"]), int(d["gpus_per_node"]), float(d["gpu_mem_bytes"]),
                   float(d.get("intra_node_bw_bytes_per_s", 600e9)),
                   float(d.get("cross_node_bw_bytes_per_s", 25e9 / 8)),
                   str(d.get("affinity", "low")), float(d.get("activation_reserve", 0.1)))


@dataclass(frozen=True)
class SLOSpec:
    ttft_s: float
    tpot_s: float
    attainment_target: float = 0.9
    slo_scale: float = 1.0

    def __post_init__(self):
        if not (self.ttft_s > 0 and self.tpot_s > 0 and self.slo_scale > 0):
            raise ConfigError("SLO latencies and scale must be positive")
        if not 0 < self.attainment_target <= 1:
            raise ConfigError("attainment_target must be in (0, 1]")

    @property
    def ttft_limit(self) -> float:
        return self.ttft_s * self.slo_scale

    @property
    def tpot_limit(self) -> float:
        return self.tpot_s * self.slo_scale


@dataclass(frozen=True)
class InstanceConfig:
    kind: str  # prefill | decoding | colocated
    parallel: ParallelConfig
    kv_budget_bytes: float
    max_batch_tokens: int = 512
    max_batch_size: int = 256

    def __post_init__(self):
        if self.kind not in ("prefill", "decoding", "colocated"):
            raise ConfigError(f"unknown instance kind {self.kind!r}")
        if self.kv_budget_bytes < 0:
            raise ConfigError("kv budget is negative: weights do not fit")


def kv_budget(model: ModelSpec, cfg: ParallelConfig, cluster: ClusterSpec) -> float:
    """Instance memory left for KV cache after weights and activation reserve."""
    return cfg.num_gpus * cluster.usable_gpu_mem - model.weight_bytes


def make_instance(kind: str, model: ModelSpec, cfg: ParallelConfig, cluster: ClusterSpec,
                  coef: LatencyCoefficients, max_batch_size: int = 256,
                  max_batch_tokens: int | None = None) -> InstanceConfig:
    budget = kv_budget(model, cfg, cluster)
    if budget < 0:
        raise PlacementError(f"{kind} instance {cfg} cannot hold the model weights")
    if max_batch_tokens is None:
        max_batch_tokens = saturation_length(parallelize(model, cfg), coef)
    return InstanceConfig(kind, cfg, budget, max_batch_tokens, max_batch_size)


# --- result -----------------------------------------------------------------

@dataclass
class SimResult:
    mode: str
    arrival: np.ndarray
    input_len: np.ndarray
    output_len: np.ndarray
    ttft: np.ndarray
    tpot: np.ndarray
    met_slo: np.ndarray
    stages: dict  # stage name -> per-request seconds
    transfer: np.ndarray
    completion: np.ndarray  # time each request's last token was produced
    peak_kv_bytes: list = field(default_factory=list)
    kv_budgets: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def num_requests(self) -> int:
        return len(self.ttft)

    @property
    def attainment(self) -> float:
        return float(self.met_slo.mean()) if len(self.met_slo) else 1.0

    def attainment_after(self, warmup: int) -> float:
        met = self.met_slo[warmup:] if warmup < len(self.met_slo) else self.met_slo
        return float(met.mean()) if len(met) else 1.0

    @property
    def latency(self) -> np.ndarray:
        return sum(self.stages[s] for s in STAGES)

    @property
    def stage_totals(self) -> dict:
        return {s: float(self.stages[s].sum()) for s in STAGES}

    def stage_shares(self) -> dict:
        tot = self.stage_totals
        denom = sum(tot.values())
        return {s: (v / denom if denom > 0 else 0.0) for s, v in tot.items()}

    def percentiles(self) -> dict:
        out = {}
        for name, arr in (("ttft", self.ttft), ("tpot", self.tpot)):
            for q in (50, 90, 99):
                out[f"{name}_p{q}"] = float(np.percentile(arr, q)) if len(arr) else 0.0
        return out

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "num_requests": self.num_requests,
            "attainment": self.attainment,
            "mean_ttft_s": float(self.ttft.mean()) if len(self.ttft) else 0.0,
            "mean_tpot_s": float(self.tpot.mean()) if len(self.tpot) else 0.0,
            "percentiles": self.percentiles(),
            "stage_totals": self.stage_totals,
            "stage_shares": self.stage_shares(),
            "peak_kv_bytes": self.peak_kv_bytes,
            "kv_budgets": self.kv_budgets,
            "info": self.info,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["id", "arrival_s", "input_len", "output_len", "ttft_s", "tpot_s",
                        "met_slo", *STAGES])
            cols = [self.stages[s] for s in STAGES]
            for i in range(self.num_requests):
                w.writerow([i, repr(float(self.arrival[i])), int(self.input_len[i]),
                            int(self.output_len[i]), repr(float(self.ttft[i])),
                            repr(float(self.tpot[i])), int(self.met_slo[i]),
                            *(repr(float(c[i])) for c in cols)])


# --- engine -----------------------------------------------------------------

_PREFILL_DONE, _STAGE0_FREE, _LANE_END, _XFER_DONE, _COLOC_END = range(5)


class _Lane:
    __slots__ = ("n", "sum_ctx", "idx", "finish", "joining", "busy", "prefilling")

    def __init__(self):
        self.n = 0
        self.sum_ctx = 0
        self.idx = 0
        self.finish = {}
        self.joining = []
        self.busy = False
        self.prefilling = None


def _traverse(stage_free, now, st):
    """Push one batch through the pipeline; return its completion time."""
    end = now
    for k in range(len(stage_free)):
        s = stage_free[k]
        if end > s:
            s = end
        end = s + st
        stage_free[k] = end
    return end


class _Prefill:
    __slots__ = ("id", "cost", "lm", "budget", "kv_tok", "queue", "outstanding",
                 "stage_free", "buffer", "peak")

    def __init__(self, iid, shard, coef, icfg, kv_tok):
        self.id = iid
        self.cost = prefill_cost(shard, coef, icfg.parallel.intra_op)
        self.lm = icfg.max_batch_tokens
        self.budget = icfg.kv_budget_bytes
        self.kv_tok = kv_tok
        self.queue = deque()
        self.outstanding = 0
        self.stage_free = [0.0] * icfg.parallel.inter_op
        self.buffer = 0.0
        self.peak = 0.0


class _Decode:
    __slots__ = ("id", "cost", "max_batch", "budget", "kv_tok", "bw", "pending",
                 "pending_bytes", "reserved", "count", "stage_free", "lanes", "peak")

    def __init__(self, iid, shard, coef, icfg, kv_tok, bw):
        self.id = iid
        self.cost = decode_cost(shard, coef, icfg.parallel.intra_op)
        self.max_batch = icfg.max_batch_size
        self.budget = icfg.kv_budget_bytes
        self.kv_tok = kv_tok
        self.bw = bw
        self.pending = deque()
        self.pending_bytes = 0.0
        self.reserved = 0.0
        self.count = 0
        p = icfg.parallel.inter_op
        self.stage_free = [0.0] * p
        self.lanes = [_Lane() for _ in range(p)]
        self.peak = 0.0


class _Coloc:
    __slots__ = ("id", "pcost", "dcost", "lm", "max_batch", "budget", "kv_tok", "queue",
                 "outstanding", "reserved", "count", "stage_free", "lanes", "peak")

    def __init__(self, iid, shard, coef, icfg, kv_tok):
        self.id = iid
        self.pcost = prefill_cost(shard, coef, icfg.parallel.intra_op)
        self.dcost = decode_cost(shard, coef, icfg.parallel.intra_op)
        self.lm = icfg.max_batch_tokens
        self.max_batch = icfg.max_batch_size
        self.budget = icfg.kv_budget_bytes
        self.kv_tok = kv_tok
        self.queue = deque()
        self.outstanding = 0
        self.reserved = 0.0
        self.count = 0
        p = icfg.parallel.inter_op
        self.stage_free = [0.0] * p
        self.lanes = [_Lane() for _ in range(p)]
        self.peak = 0.0


def run(model: ModelSpec, coef: LatencyCoefficients, trace: Trace, slo: SLOSpec | None, *,
        prefill: Sequence[InstanceConfig] = (), decode: Sequence[InstanceConfig] = (),
        colocated: Sequence[InstanceConfig] = (), link_bw: float = math.inf) -> SimResult:
    """Simulate ``trace`` on a set of instances.

    Modes follow from which instance lists are non-empty: prefill only,
    decoding only (KV already materialized at arrival), prefill + decoding,
    or colocated. ``slo`` may be None, in which case every request counts as
    meeting it.
    """
    if colocated and (prefill or decode):
        raise ConfigError("colocated instances cannot be mixed with disaggregated ones")
    if colocated:
        mode = "colocated"
    elif prefill and decode:
        mode = "disaggregated"
    elif prefill:
        mode = "prefill"
    elif decode:
        mode = "decode"
    else:
        raise ConfigError("no instances to simulate")

    kv_tok = kv_bytes_per_token(model)
    arr = trace.arrival.tolist()
    inp = trace.input_len.tolist()
    out = trace.output_len.tolist()
    n = len(arr)
    if any(arr[i] > arr[i + 1] for i in range(n - 1)):
        raise ConfigError("workload arrivals must be sorted")
    nan = math.nan
    t_ps, t_pe, t_xs, t_xe, t_j, t_last = ([nan] * n for _ in range(6))
    pre_of = [None] * n

    def shard(icfg):
        return parallelize(model, icfg.parallel)

    pre = [_Prefill(i, shard(c), coef, c, kv_tok) for i, c in enumerate(prefill)]
    dec = [_Decode(i, shard(c), coef, c, kv_tok, link_bw) for i, c in enumerate(decode)]
    col = [_Coloc(i, shard(c), coef, c, kv_tok) for i, c in enumerate(colocated)]

    heap = []
    push = heapq.heappush
    seq = 0

    # -- prefill ---------------------------------------------------------
    def prefill_launch(p, now):
        nonlocal seq
        q = p.queue
        if not q or p.stage_free[0] > now:
            return
        kv = p.kv_tok
        batch = []
        tok = t2 = 0
        mem = p.buffer
        lm = p.lm
        while q:
            r = q[0]
            L = inp[r]
            if batch and tok + L > lm:
                break
            need = kv * L
            if mem + need > p.budget:
                if not batch and p.buffer == 0.0:
                    raise CapacityError(
                        f"request {r} needs {need:.3g} B of KV, prefill budget is {p.budget:.3g} B",
                        request_id=r)
                break
            q.popleft()
            batch.append(r)
            tok += L
            t2 += L * L
            mem += need
            if tok >= lm:
                break
        if not batch:
            return  # blocked on buffer space; a pull will retry
        p.buffer = mem
        if mem > p.peak:
            p.peak = mem
        st = p.cost(tok, t2)
        for r in batch:
            t_ps[r] = now
        end = _traverse(p.stage_free, now, st)
        push(heap, (end, seq, _PREFILL_DONE, p, batch))
        seq += 1
        if len(p.stage_free) > 1:
            push(heap, (p.stage_free[0], seq, _STAGE0_FREE, p, None))
            seq += 1

    def prefill_release(p, r, now):
        p.buffer -= p.kv_tok * inp[r]
        if p.buffer < 1e-6:
            p.buffer = 0.0
        prefill_launch(p, now)

    # -- decoding --------------------------------------------------------
    def decode_admit(d, now):
        nonlocal seq
        q = d.pending
        kv = d.kv_tok
        while q and d.count < d.max_batch:
            r = q[0]
            need = kv * (inp[r] + out[r])
            if need > d.budget:
                raise CapacityError(
                    f"request {r} needs {need:.3g} B of KV, decoding budget is {d.budget:.3g} B",
                    request_id=r)
            if d.reserved + need > d.budget:
                break
            q.popleft()
            d.pending_bytes -= need
            d.reserved += need
            if d.reserved > d.peak:
                d.peak = d.reserved
            d.count += 1
            t_xs[r] = now
            x = kv * inp[r] / d.bw if pre_of[r] is not None else 0.0
            if x > 0.0:
                push(heap, (now + x, seq, _XFER_DONE, d, r))
                seq += 1
            else:
                t_xe[r] = now
                if pre_of[r] is not None:
                    prefill_release(pre_of[r], r, now)
                decode_join(d, r)
        decode_kick(d, now)

    def decode_join(d, r):
        best = None
        for lane in d.lanes:
            if best is None or lane.n + len(lane.joining) < best.n + len(best.joining):
                best = lane
        best.joining.append(r)

    def decode_kick(d, now):
        for lane in d.lanes:
            if not lane.busy and (lane.n or lane.joining):
                decode_start(d, lane, now)

    def decode_start(d, lane, now):
        nonlocal seq
        if lane.joining:
            idx = lane.idx
            fin = lane.finish
            for r in lane.joining:
                t_j[r] = now
                lane.n += 1
                lane.sum_ctx += inp[r] + 1
                k = idx + out[r] - 2
                if k in fin:
                    fin[k].append(r)
                else:
                    fin[k] = [r]
            lane.joining = []
        if lane.n == 0:
            lane.busy = False
            return
        lane.busy = True
        st = d.cost(lane.sum_ctx)
        sf = d.stage_free
        end = now
        for k in range(len(sf)):
            if sf[k] > end:
                end = sf[k]
            end += st
            sf[k] = end
        push(heap, (end, seq, _LANE_END, d, lane))
        seq += 1

    def decode_lane_end(d, lane, now):
        k = lane.idx
        lane.idx = k + 1
        lane.sum_ctx += lane.n
        done = lane.finish.pop(k, None)
        if done:
            kv = d.kv_tok
            for r in done:
                t_last[r] = now
                lane.n -= 1
                lane.sum_ctx -= inp[r] + out[r]
                d.reserved -= kv * (inp[r] + out[r])
                d.count -= 1
            if d.reserved < 1e-6:
                d.reserved = 0.0
        lane.busy = False
        if d.pending:
            decode_admit(d, now)  # kicks idle lanes, including this one
        elif lane.n or lane.joining:
            decode_start(d, lane, now)

    def route_to_decode(r, now):
        best = dec[0]
        if len(dec) > 1:
            bl = best.reserved + best.pending_bytes
            for d in dec[1:]:
                ld = d.reserved + d.pending_bytes
                if ld < bl:
                    best, bl = d, ld
        best.pending.append(r)
        best.pending_bytes += best.kv_tok * (inp[r] + out[r])
        decode_admit(best, now)

    # -- colocated -------------------------------------------------------
    def coloc_start(c, lane, now):
        nonlocal seq
        q = c.queue
        kv = c.kv_tok
        batch = []
        tok = t2 = 0
        while q and c.count < c.max_batch:
            r = q[0]
            L = inp[r]
            if batch and tok + L > c.lm:
                break
            need = kv * (L + out[r])
            if need > c.budget:
                raise CapacityError(
                    f"request {r} needs {need:.3g} B of KV, instance budget is {c.budget:.3g} B",
                    request_id=r)
            if c.reserved + need > c.budget:
                break
            q.popleft()
            c.reserved += need
            if c.reserved > c.peak:
                c.peak = c.reserved
            c.count += 1
            t_ps[r] = now
            batch.append(r)
            tok += L
            t2 += L * L
            if tok >= c.lm:
                break
        if not batch and lane.n == 0:
            lane.busy = False
            return
        st = 0.0
        if batch:
            st += c.pcost(tok, t2)
        if lane.n:
            st += c.dcost(lane.sum_ctx)
        lane.prefilling = batch
        lane.busy = True
        end = _traverse(c.stage_free, now, st)
        push(heap, (end, seq, _COLOC_END, c, lane))
        seq += 1

    def coloc_end(c, lane, now):
        k = lane.idx
        lane.idx = k + 1
        lane.sum_ctx += lane.n
        kv = c.kv_tok
        done = lane.finish.pop(k, None)
        if done:
            for r in done:
                t_last[r] = now
                lane.n -= 1
                lane.sum_ctx -= inp[r] + out[r]
                c.reserved -= kv * (inp[r] + out[r])
                c.count -= 1
                c.outstanding -= 1
        fin = lane.finish
        for r in lane.prefilling:
            t_pe[r] = t_xs[r] = t_xe[r] = t_j[r] = now
            if out[r] == 1:
                t_last[r] = now
                c.reserved -= kv * (inp[r] + 1)
                c.count -= 1
                c.outstanding -= 1
                continue
            lane.n += 1
            lane.sum_ctx += inp[r] + 1
            kk = k + out[r] - 1
            if kk in fin:
                fin[kk].append(r)
            else:
                fin[kk] = [r]
        lane.prefilling = None
        if c.reserved < 1e-6:
            c.reserved = 0.0
        coloc_start(c, lane, now)
        for other in c.lanes:
            if not other.busy:
                coloc_start(c, other, now)

    # -- arrivals --------------------------------------------------------
    def arrive(r, now):
        if mode == "decode":
            t_ps[r] = t_pe[r] = now
            if out[r] == 1:
                t_xs[r] = t_xe[r] = t_j[r] = t_last[r] = now
                return
            route_to_decode(r, now)
            return
        if mode == "colocated":
            c = min(col, key=lambda x: (x.outstanding, x.id)) if len(col) > 1 else col[0]
            c.queue.append(r)
            c.outstanding += 1
            for lane in c.lanes:
                if not lane.busy:
                    coloc_start(c, lane, now)
                    break
            return
        p = min(pre, key=lambda x: (x.outstanding, x.id)) if len(pre) > 1 else pre[0]
        p.queue.append(r)
        p.outstanding += 1
        pre_of[r] = p
        prefill_launch(p, now)

    def prefill_done(p, batch, now):
        for r in batch:
            t_pe[r] = now
            p.outstanding -= 1
            if mode == "prefill" or out[r] == 1:
                t_xs[r] = t_xe[r] = t_j[r] = t_last[r] = now
                p.buffer -= p.kv_tok * inp[r]
            else:
                route_to_decode(r, now)
        if p.buffer < 1e-6:
            p.buffer = 0.0
        prefill_launch(p, now)

    # -- loop ------------------------------------------------------------
    i = 0
    pop = heapq.heappop
    while True:
        if heap and (i >= n or heap[0][0] <= arr[i]):
            now, _, kind, a, b = pop(heap)
            if kind == _LANE_END:
                decode_lane_end(a, b, now)
            elif kind == _PREFILL_DONE:
                prefill_done(a, b, now)
            elif kind == _COLOC_END:
                coloc_end(a, b, now)
            elif kind == _XFER_DONE:
                t_xe[b] = now
                prefill_release(pre_of[b], b, now)
                decode_join(a, b)
                decode_kick(a, now)
            else:
                prefill_launch(a, now)
        elif i < n:
            arrive(i, arr[i])
            i += 1
        else:
            break

    A = np.asarray(arr)
    ps, pe, xs, xe, j, last = (np.asarray(x) for x in (t_ps, t_pe, t_xs, t_xe, t_j, t_last))
    if n and np.isnan(last).any():
        raise RuntimeError(f"{int(np.isnan(last).sum())} requests never completed")
    O = trace.output_len
    ttft = pe - A
    tpot = np.where(O > 1, (last - pe) / np.maximum(O - 1, 1), 0.0)
    if mode == "decode":
        ttft = np.zeros(n)
    stages = {
        "prefill_queuing": ps - A,
        "prefill_execution": pe - ps,
        "transmission": xe - xs,
        "decoding_queuing": (xs - pe) + (j - xe),
        "decoding_execution": last - j,
    }
    if slo is None:
        met = np.ones(n, dtype=bool)
    elif mode == "prefill":
        met = ttft <= slo.ttft_limit
    elif mode == "decode":
        met = tpot <= slo.tpot_limit
    else:
        met = (ttft <= slo.ttft_limit) & (tpot <= slo.tpot_limit)
    pools = pre + dec + col
    return SimResult(
        mode=mode, arrival=A, input_len=trace.input_len, output_len=O,
        ttft=ttft, tpot=tpot, met_slo=met, stages=stages, transfer=xe - xs, completion=last,
        peak_kv_bytes=[float(x.peak) for x in pools],
        kv_budgets=[float(x.budget) for x in pools],
        info={"link_bw": link_bw,
              "max_batch_tokens": [int(x.lm) for x in pre + col]},
    )


def _as_trace(workload) -> Trace:
    if isinstance(workload, Trace):
        return workload
    return Trace.from_requests(list(workload))


def placement_instances(placement, model: ModelSpec, cluster: ClusterSpec,
                        coef: LatencyCoefficients, max_batch_size: int = 256,
                        max_batch_tokens: int | None = None) -> dict:
    """Instance lists and link bandwidth realizing ``placement``."""
    kw = dict(max_batch_size=max_batch_size, max_batch_tokens=max_batch_tokens)
    if placement.mode == "colocated":
        icfg = make_instance("colocated", model, placement.prefill_cfg, cluster, coef, **kw)
        return {"colocated": [icfg] * placement.prefill_replicas_n}
    p = make_instance("prefill", model, placement.prefill_cfg, cluster, coef, **kw)
    d = make_instance("decoding", model, placement.decode_cfg, cluster, coef, **kw)
    bw = cluster.intra_node_bw if placement.mode == "low_affinity" else cluster.cross_node_bw
    return {"prefill": [p] * placement.prefill_replicas_n,
            "decode": [d] * placement.decode_replicas_m, "link_bw": bw}


def simulate(placement, workload, slo: SLOSpec, coef: LatencyCoefficients,
             cluster: ClusterSpec, model: ModelSpec, max_batch_size: int = 256,
             max_batch_tokens: int | None = None) -> SimResult:
    """Run one workload through the instances a placement describes."""
    from .placement import validate_placement

    validate_placement(placement, model, cluster)
    if placement.prefill_replicas_n < 1 or (
            placement.mode != "colocated" and placement.decode_replicas_m < 1):
        raise PlacementError("placement has no instances to simulate")
    kw = placement_instances(placement, model, cluster, coef, max_batch_size, max_batch_tokens)
    return run(model, coef, _as_trace(workload), slo, **kw)
