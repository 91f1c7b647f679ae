"""Maximum-goodput search: bisection on arrival rate over simulation trials."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import CapacityError, PlacementError
from .latency import (LatencyCoefficients, ModelSpec, ParallelConfig, decode_cost,
                      kv_bytes_per_token, parallelize, prefill_cost)
from .simulator import ClusterSpec, SLOSpec, make_instance, placement_instances, run
from .workload import Trace, sample_trace

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchConfig:
    trial_requests: int = 1000
    warmup_requests: int = 100
    rel_tol: float = 0.01
    abs_tol: float = 0.01
    max_steps: int = 40
    seed: int = 0
    max_batch_size: int = 256


def trial_seed(base: int, step: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(base), int(step)])


def search_rate(attainment_at: Callable[[float, int], float], target: float,
                search: SearchConfig, hint: float = 1.0, upper: float = math.inf) -> float:
    """Largest probed rate whose attainment meets ``target``.

    ``attainment_at(rate, step)`` runs one trial; ``step`` counts probes so
    each trial draws from its own seed. The bracket is found by doubling (or
    halving) from ``hint`` (capped at half of ``upper``) and then bisected until its width is within
    ``max(abs_tol, rel_tol * lo)``. Returns 0 when even tiny rates fail.
    Rates at or above ``upper`` (a throughput bound) fail without a trial: a
    finite trial cannot expose an overloaded steady state on its own.
    """
    step = 0

    def ok(rate):
        nonlocal step
        if rate >= upper:
            return False
        a = attainment_at(rate, step)
        step += 1
        return a >= target

    hint = min(hint, 0.5 * upper)
    hint = max(hint if math.isfinite(hint) else 1.0, search.abs_tol)
    if ok(hint):
        lo, hi = hint, None
        while hi is None and step < search.max_steps:
            r = lo * 2.0
            if ok(r):
                lo = r
            else:
                hi = r
        if hi is None:
            return lo
    else:
        lo, hi = 0.0, hint
        while step < search.max_steps:
            r = hi / 2.0
            if r < search.abs_tol:
                return 0.0
            if ok(r):
                lo = r
                break
            hi = r
        if lo == 0.0:
            return 0.0
    while hi - lo > max(search.abs_tol, search.rel_tol * lo) and step < search.max_steps:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _prefill_hint(model, cfg, coef, source):
    shard = parallelize(model, cfg)
    mean_in = float(np.mean(source.input_len))
    st = prefill_cost(shard, coef, cfg.intra_op)(mean_in, mean_in * mean_in)
    return 0.5 / st if st > 0 else 1.0


def _source(workload_source):
    return workload_source if isinstance(workload_source, Trace) else \
        Trace.from_requests(list(workload_source))


def capacity_rate(instances: dict, model: ModelSpec, coef: LatencyCoefficients,
                  src: Trace, slack: float = 1.1) -> float:
    """Upper bound on the sustainable request rate of a set of instances.

    Prefill: requests shorter than the token budget share the fixed overhead,
    which makes the bound exact for unbatched prompts. Decoding: every lane
    runs at the largest batch the KV budget and batch cap allow; this uses
    mean lengths, so it is loosened by ``slack``. A colocated instance spends
    stage time on both per request.
    """
    inp = src.input_len.astype(float)
    out = src.output_len.astype(float)
    kv_tok = kv_bytes_per_token(model)

    def prefill_time(icfg):
        cost = prefill_cost(parallelize(model, icfg.parallel), coef, icfg.parallel.intra_op)
        share = np.maximum(1.0, np.floor(icfg.max_batch_tokens / inp))
        return cost.per_token * inp + cost.per_sq_token * inp ** 2 + cost.overhead / share

    def token_time(icfg):
        cost = decode_cost(parallelize(model, icfg.parallel), coef, icfg.parallel.intra_op)
        fit = int(icfg.kv_budget_bytes // (kv_tok * float(np.mean(inp + out))))
        total = max(1, min(icfg.max_batch_size, fit))
        lane = max(1.0, total / icfg.parallel.inter_op)
        ctx = float(np.mean(inp + (out + 1) / 2))
        return cost(lane * ctx) / lane

    def rate(per_request, k=1.0):
        return math.inf if per_request <= 0 else k / per_request

    if instances.get("colocated"):
        return sum(rate(float(np.mean(prefill_time(c) + (out - 1) * token_time(c))), slack)
                   for c in instances["colocated"])
    bound = math.inf
    if instances.get("prefill"):
        bound = sum(rate(float(np.mean(prefill_time(c)))) for c in instances["prefill"])
    if instances.get("decode"):
        bound = min(bound, sum(rate(float(np.mean(out - 1)) * token_time(c), slack)
                               for c in instances["decode"]))
    return bound


def _goodput(instances: dict, model, coef, src, slo, search, hint, label):
    def attainment_at(rate, step):
        trace = sample_trace(src, rate, search.trial_requests, trial_seed(search.seed, step))
        res = run(model, coef, trace, slo, **instances)
        return res.attainment_after(search.warmup_requests)

    try:
        upper = capacity_rate(instances, model, coef, src)
        return search_rate(attainment_at, slo.attainment_target, search, hint, upper)
    except CapacityError as e:
        log.warning("%s: goodput 0, %s", label, e)
        return 0.0


def simu_prefill(model: ModelSpec, cfg: ParallelConfig, workload_source, slo: SLOSpec,
                 coef: LatencyCoefficients, cluster: ClusterSpec,
                 search: SearchConfig = SearchConfig()) -> float:
    """Goodput (req/s) of one prefill instance judged on TTFT alone."""
    src = _source(workload_source)
    try:
        icfg = make_instance("prefill", model, cfg, cluster, coef, search.max_batch_size)
    except PlacementError as e:
        log.warning("prefill %s: %s", cfg, e)
        return 0.0
    return _goodput({"prefill": [icfg]}, model, coef, src, slo, search,
                    _prefill_hint(model, cfg, coef, src), f"prefill {cfg}")


def simu_decode(model: ModelSpec, cfg: ParallelConfig, workload_source, slo: SLOSpec,
                coef: LatencyCoefficients, cluster: ClusterSpec,
                search: SearchConfig = SearchConfig()) -> float:
    """Goodput (req/s) of one decoding instance judged on TPOT alone.

    Requests arrive Poisson with their KV cache already resident.
    """
    src = _source(workload_source)
    try:
        icfg = make_instance("decoding", model, cfg, cluster, coef, search.max_batch_size,
                             max_batch_tokens=1)
    except PlacementError as e:
        log.warning("decode %s: %s", cfg, e)
        return 0.0
    return _goodput({"decode": [icfg]}, model, coef, src, slo, search, math.inf,
                    f"decode {cfg}")


def simu_pair(model: ModelSpec, prefill_cfg: ParallelConfig, decode_cfg: ParallelConfig,
              workload_source, slo: SLOSpec, coef: LatencyCoefficients, cluster: ClusterSpec,
              search: SearchConfig = SearchConfig(), link_bw: float | None = None) -> float:
    """Goodput of one prefill instance feeding one decoding instance."""
    src = _source(workload_source)
    try:
        p = make_instance("prefill", model, prefill_cfg, cluster, coef, search.max_batch_size)
        d = make_instance("decoding", model, decode_cfg, cluster, coef, search.max_batch_size,
                          max_batch_tokens=1)
    except PlacementError as e:
        log.warning("pair %s/%s: %s", prefill_cfg, decode_cfg, e)
        return 0.0
    bw = cluster.intra_node_bw if link_bw is None else link_bw
    return _goodput({"prefill": [p], "decode": [d], "link_bw": bw}, model, coef, src, slo,
                    search, _prefill_hint(model, prefill_cfg, coef, src),
                    f"pair {prefill_cfg}/{decode_cfg}")


def simu_colocated(model: ModelSpec, cfg: ParallelConfig, workload_source, slo: SLOSpec,
                   coef: LatencyCoefficients, cluster: ClusterSpec,
                   search: SearchConfig = SearchConfig(),
                   max_batch_tokens: int | None = None) -> float:
    """Goodput of one colocated instance judged on TTFT and TPOT jointly."""
    src = _source(workload_source)
    try:
        icfg = make_instance("colocated", model, cfg, cluster, coef, search.max_batch_size,
                             max_batch_tokens)
    except PlacementError as e:
        log.warning("colocated %s: %s", cfg, e)
        return 0.0
    return _goodput({"colocated": [icfg]}, model, coef, src, slo, search,
                    _prefill_hint(model, cfg, coef, src), f"colocated {cfg}")


def max_goodput(placement, model: ModelSpec, workload_source, slo: SLOSpec,
                coef: LatencyCoefficients, cluster: ClusterSpec,
                search: SearchConfig = SearchConfig()) -> float:
    """Goodput of a whole placement (all its replicas) in req/s."""
    src = _source(workload_source)
    try:
        inst = placement_instances(placement, model, cluster, coef, search.max_batch_size)
    except PlacementError as e:
        log.warning("placement infeasible: %s", e)
        return 0.0
    n = max(placement.prefill_replicas_n, 1)
    hint = n * _prefill_hint(model, placement.prefill_cfg, coef, src)
    return _goodput(inst, model, coef, src, slo, search, hint, "placement")
