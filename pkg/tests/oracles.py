"""Brute-force reference planners and evaluator doubles shared by the tests."""

import itertools
import math
import zlib

from disagg.latency import ParallelConfig


class Memo:
    """Caches an evaluator's answers and counts distinct invocations."""

    def __init__(self, inner):
        self.inner = inner
        self.cache = {}
        self.calls = {"prefill": 0, "decode": 0, "pair": 0, "colocated": 0}

    def _get(self, method, *cfgs):
        key = (method, cfgs)
        if key not in self.cache:
            self.calls[method] += 1
            self.cache[key] = getattr(self.inner, method)(*cfgs)
        return self.cache[key]

    def prefill(self, cfg):
        return self._get("prefill", cfg)

    def decode(self, cfg):
        return self._get("decode", cfg)

    def pair(self, p, d):
        return self._get("pair", p, d)

    def colocated(self, cfg):
        return self._get("colocated", cfg)


class Analytic:
    """Cheap closed-form goodput used where simulation is not the subject.

    Goodput is a seeded, deterministic function of the config so that argmax
    and tie-breaking are exercised without running trials.
    """

    def __init__(self, seed, ties=False):
        self.seed = seed
        self.ties = ties

    def _g(self, tag, *cfgs):
        key = (self.seed, tag) + tuple((c.inter_op, c.intra_op) for c in cfgs)
        h = zlib.crc32(repr(key).encode())
        gpus = sum(c.num_gpus for c in cfgs)
        if self.ties:
            return float(gpus * (1 + h % 3))
        return gpus * (0.5 + (h % 1000) / 1000.0)

    def prefill(self, cfg):
        return self._g("p", cfg)

    def decode(self, cfg):
        return self._g("d", cfg)

    def pair(self, p, d):
        return self._g("pd", p, d)

    def colocated(self, cfg):
        return self._g("c", cfg)


def _fits(model, inter, intra, C, reserve):
    return (model.num_heads_n % intra == 0 and model.num_layers % inter == 0
            and model.weight_bytes / (inter * intra) < C * (1 - reserve))


def _best(scored):
    # highest per-GPU goodput, then fewest GPUs, lowest inter, lowest intra
    ranked = sorted(scored, key=lambda x: (-x[1] / x[2], x[2], x[3]))
    return ranked[0]


def exhaustive_high(model, cluster, ev):
    N, M = cluster.num_nodes_N, cluster.gpus_per_node_M
    space = [ParallelConfig(inter, intra)
             for intra, inter in itertools.product(range(1, M + 1), range(1, N * M + 1))
             if inter * intra <= N * M
             and _fits(model, inter, intra, cluster.gpu_mem_C, cluster.activation_reserve)]
    out = []
    for phase in ("prefill", "decode"):
        scored = [(c, getattr(ev, phase)(c), c.num_gpus, (c.inter_op, c.intra_op))
                  for c in space]
        out.append(_best(scored)[0])
    return tuple(out), len(space)


def exhaustive_low(model, cluster, ev):
    N, M = cluster.num_nodes_N, cluster.gpus_per_node_M
    scored = []
    for inter in range(1, N + 1):
        for ip, id_ in itertools.product(range(1, M + 1), repeat=2):
            if ip + id_ > M:
                continue
            if not (_fits(model, inter, ip, cluster.gpu_mem_C, cluster.activation_reserve)
                    and _fits(model, inter, id_, cluster.gpu_mem_C, cluster.activation_reserve)):
                continue
            p, d = ParallelConfig(inter, ip), ParallelConfig(inter, id_)
            scored.append(((p, d), ev.pair(p, d), inter * (ip + id_), (inter, ip, id_)))
    return _best(scored)[0], len(scored)


def alg1_bound(cluster):
    N, M = cluster.num_nodes_N, cluster.gpus_per_node_M
    return sum(N * M // intra for intra in range(1, M + 1))


def ceil_div(a, b):
    return math.ceil(a / b)
