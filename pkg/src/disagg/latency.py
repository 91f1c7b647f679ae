"""Analytical latency model for prefill and decoding iterations.

Iteration times are built from the GEMM-dominated cost terms of a transformer
layer. Prefill cost grows with the batch token count ``t`` and the squared
prompt-length sum ``t2`` (FlashAttention memory traffic); decoding cost is a
weight-load floor plus a term linear in the summed context length.

Queueing helpers give closed-form mean TTFT for a prefill instance treated as
an M/D/1 queue, with and without 2-way parallelism.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.optimize import nnls

from .errors import ConfigError, FitError, ParseError, UnstableQueueError

log = logging.getLogger(__name__)

DEFAULT_INTRA_PENALTY = {1: 1.0, 2: 1.15, 4: 1.25, 8: 1.35}


@dataclass(frozen=True)
class ModelSpec:
    """Transformer dimensions.

    A sharded view (see :func:`parallelize`) keeps the per-GPU values of
    ``hidden_h``, ``num_heads_n`` and ``ffn_m`` plus the degrees it was
    sharded by, so cost formulas can restore the unsharded input dimension of
    each GEMM.
    """

    name: str
    num_layers: int
    hidden_h: int
    num_heads_n: int
    head_size_s: int
    ffn_m: float
    weight_bytes: float
    kv_elem_bytes: int = 2
    attn_block_b: int = 16
    tp_degree: int = 1
    pp_degree: int = 1

    def __post_init__(self):
        for name in ("num_layers", "hidden_h", "num_heads_n", "head_size_s",
                     "kv_elem_bytes", "attn_block_b", "tp_degree", "pp_degree"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.ffn_m <= 0:
            raise ConfigError(f"ffn_m must be positive, got {self.ffn_m}")
        if self.weight_bytes < 0:
            raise ConfigError("weight_bytes must be non-negative")
        if self.hidden_h != self.num_heads_n * self.head_size_s:
            raise ConfigError(
                f"hidden_h ({self.hidden_h}) != num_heads_n * head_size_s "
                f"({self.num_heads_n} * {self.head_size_s})")

    @property
    def is_shard(self) -> bool:
        return self.tp_degree > 1 or self.pp_degree > 1

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "num_layers": self.num_layers,
            "hidden_size": self.hidden_h,
            "num_heads": self.num_heads_n,
            "head_size": self.head_size_s,
            "ffn_size": self.ffn_m,
            "weight_bytes": self.weight_bytes,
            "kv_elem_bytes": self.kv_elem_bytes,
            "attn_block": self.attn_block_b,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            name=str(d.get("name", "model")),
            num_layers=int(d["num_layers"]),
            hidden_h=int(d["hidden_size"]),
            num_heads_n=int(d["num_heads"]),
            head_size_s=int(d["head_size"]),
            ffn_m=d["ffn_size"],
            weight_bytes=float(d["weight_bytes"]),
            kv_elem_bytes=int(d.get("kv_elem_bytes", 2)),
            attn_block_b=int(d.get("attn_block", 16)),
        )


@dataclass(frozen=True)
class ParallelConfig:
    inter_op: int = 1
    intra_op: int = 1

    def __post_init__(self):
        if self.inter_op < 1 or self.intra_op < 1:
            raise ConfigError(f"parallel degrees must be >= 1, got {self}")

    @property
    def num_gpus(self) -> int:
        return self.inter_op * self.intra_op

    def to_dict(self) -> dict:
        return {"tp": self.intra_op, "pp": self.inter_op}

    @classmethod
    def from_dict(cls, d: dict) -> "ParallelConfig":
        return cls(inter_op=int(d["pp"]), intra_op=int(d["tp"]))


@dataclass(frozen=True)
class BatchProfile:
    """Token statistics of one batch.

    ``tokens_t`` is the sum of ``token_lens``: prompt lengths for prefill,
    current context lengths for decoding.
    """

    batch_size_B: int
    tokens_t: int
    sq_sum_t2: int
    token_lens: tuple = ()

    def __post_init__(self):
        if self.token_lens:
            lens = self.token_lens
            if (self.batch_size_B != len(lens) or self.tokens_t != sum(lens)
                    or self.sq_sum_t2 != sum(x * x for x in lens)):
                raise ConfigError("batch totals inconsistent with token_lens")

    @classmethod
    def of(cls, lens: Iterable[int]) -> "BatchProfile":
        lens = tuple(int(x) for x in lens)
        return cls(len(lens), sum(lens), sum(x * x for x in lens), lens)


@dataclass(frozen=True)
class LatencyCoefficients:
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    intra_penalty: dict = field(default_factory=lambda: dict(DEFAULT_INTRA_PENALTY))

    def __post_init__(self):
        for name in ("c1", "c2", "c3", "c4", "c5"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        pen = {int(k): float(v) for k, v in self.intra_penalty.items()}
        if pen.get(1) != 1.0:
            raise ConfigError("intra_penalty[1] must be 1.0")
        prev = 0.0
        for k in sorted(pen):
            if pen[k] < prev:
                raise ConfigError("intra_penalty must be non-decreasing in degree")
            prev = pen[k]
        object.__setattr__(self, "intra_penalty", pen)

    def penalty(self, degree: int) -> float:
        """Multiplicative slowdown at a tensor-parallel degree.

        Degrees missing from the table are linearly interpolated and clamped
        at the table ends.
        """
        pen = self.intra_penalty
        if degree in pen:
            return pen[degree]
        keys = sorted(pen)
        return float(np.interp(degree, keys, [pen[k] for k in keys]))

    def to_json(self) -> str:
        d = {k: getattr(self, k) for k in ("c1", "c2", "c3", "c4", "c5")}
        d["intra_penalty"] = {str(k): v for k, v in sorted(self.intra_penalty.items())}
        return json.dumps(d, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "LatencyCoefficients":
        pen = d.get("intra_penalty", DEFAULT_INTRA_PENALTY)
        return cls(*(float(d[k]) for k in ("c1", "c2", "c3", "c4", "c5")),
                   intra_penalty={int(k): float(v) for k, v in pen.items()})

    @classmethod
    def from_json(cls, text: str) -> "LatencyCoefficients":
        return cls.from_dict(json.loads(text))


def parallelize(model: ModelSpec, cfg: ParallelConfig) -> ModelSpec:
    """Per-GPU shard view of ``model`` under ``cfg``."""
    if model.is_shard:
        raise ConfigError("model is already a shard")
    tp, pp = cfg.intra_op, cfg.inter_op
    if model.num_heads_n % tp:
        raise ConfigError(f"num_heads {model.num_heads_n} not divisible by intra_op {tp}")
    if model.num_layers % pp:
        raise ConfigError(f"num_layers {model.num_layers} not divisible by inter_op {pp}")
    if tp == 1 and pp == 1:
        return model
    m = model.ffn_m
    m = m // tp if m % tp == 0 else m / tp
    return replace(
        model,
        num_layers=model.num_layers // pp,
        hidden_h=model.hidden_h // tp,
        num_heads_n=model.num_heads_n // tp,
        ffn_m=m,
        weight_bytes=model.weight_bytes / (tp * pp),
        tp_degree=tp,
        pp_degree=pp,
    )


class PrefillCost(NamedTuple):
    """Iteration time = per_token * t + per_sq_token * t2 + overhead."""
    per_token: float
    per_sq_token: float
    overhead: float

    def __call__(self, t: float, t2: float) -> float:
        return self.per_token * t + self.per_sq_token * t2 + self.overhead


class DecodeCost(NamedTuple):
    """Iteration time = weight_load + per_ctx_token * sum(context lengths)."""
    weight_load: float
    per_ctx_token: float

    def __call__(self, t: float) -> float:
        return self.weight_load + self.per_ctx_token * t


def _gemm_units(shard: ModelSpec) -> tuple[float, float]:
    # Shard dims are per-GPU; the GEMM input dimension stays unsharded, so one
    # factor of tp comes back in the quadratic-in-dimension terms.
    h, m, tp = shard.hidden_h, shard.ffn_m, shard.tp_degree
    return 4.0 * h * h * tp + 2.0 * h * m * tp, 3.0 * h


def prefill_cost(shard: ModelSpec, coef: LatencyCoefficients,
                 intra_op: int | None = None) -> PrefillCost:
    deg = shard.tp_degree if intra_op is None else intra_op
    scale = coef.penalty(deg) * shard.num_layers
    gemm, attn = _gemm_units(shard)
    return PrefillCost(scale * coef.c1 * gemm,
                       scale * coef.c2 * attn / shard.attn_block_b,
                       scale * coef.c3)


def decode_cost(shard: ModelSpec, coef: LatencyCoefficients,
                intra_op: int | None = None) -> DecodeCost:
    deg = shard.tp_degree if intra_op is None else intra_op
    scale = coef.penalty(deg) * shard.num_layers
    gemm, attn = _gemm_units(shard)
    return DecodeCost(scale * coef.c4 * gemm, scale * coef.c5 * attn)


def prefill_iter_time(shard: ModelSpec, batch: BatchProfile,
                      coef: LatencyCoefficients, intra_op: int | None = None) -> float:
    return prefill_cost(shard, coef, intra_op)(batch.tokens_t, batch.sq_sum_t2)


def decode_iter_time(shard: ModelSpec, batch: BatchProfile,
                     coef: LatencyCoefficients, intra_op: int | None = None) -> float:
    return decode_cost(shard, coef, intra_op)(batch.tokens_t)


def mixed_iter_time(shard: ModelSpec, prefill: BatchProfile, decode: BatchProfile,
                    coef: LatencyCoefficients, intra_op: int | None = None) -> float:
    """Colocated iteration: prefill members and decode members in one launch.

    The two cost terms compose additively; an empty side contributes nothing.
    """
    total = 0.0
    if prefill.batch_size_B:
        total += prefill_iter_time(shard, prefill, coef, intra_op)
    if decode.batch_size_B:
        total += decode_iter_time(shard, decode, coef, intra_op)
    return total


# --- queueing ---------------------------------------------------------------

def mdl_avg_ttft(exec_D: float, rate_R: float) -> float:
    """Mean TTFT of an M/D/1 prefill queue: execution plus mean wait."""
    rho = rate_R * exec_D
    if rho >= 1.0:
        raise UnstableQueueError(f"R*D = {rho:.4g} >= 1")
    return exec_D + rate_R * exec_D ** 2 / (2.0 * (1.0 - rho))


def mdl_avg_ttft_inter(exec_D: float, rate_R: float, stages: int = 2) -> float:
    """Mean TTFT with ``stages``-way pipelining.

    Request latency stays ``exec_D``; the bottleneck stage serves in
    ``exec_D / stages``. For two stages this is D + R D^2 / (4 (2 - R D)).
    """
    d_m = exec_D / stages
    rho = rate_R * d_m
    if rho >= 1.0:
        raise UnstableQueueError(f"R*D = {rate_R * exec_D:.4g} >= {stages}")
    return exec_D + rate_R * d_m ** 2 / (2.0 * (1.0 - rho))


def mdl_avg_ttft_intra(exec_D: float, rate_R: float, speedup_K: float) -> float:
    """Mean TTFT with tensor parallelism giving speedup ``speedup_K``."""
    if speedup_K <= 0:
        raise ConfigError("speedup_K must be positive")
    rd = rate_R * exec_D
    if rd >= speedup_K:
        raise UnstableQueueError(f"R*D = {rd:.4g} >= K = {speedup_K:.4g}")
    return exec_D / speedup_K + rate_R * exec_D ** 2 / (2.0 * speedup_K * (speedup_K - rd))


def speedup_k(coef: LatencyCoefficients, degree: int) -> float:
    return degree / coef.penalty(degree)


def attention_arithmetic_intensity(block_b: int) -> float:
    """FLOPs per memory access of the prefill attention kernel, 2b/3."""
    return 2.0 * block_b / 3.0


# --- memory -----------------------------------------------------------------

def kv_bytes_per_token(model: ModelSpec) -> float:
    return 2.0 * model.num_layers * model.hidden_h * model.kv_elem_bytes


def kv_cache_bytes(model: ModelSpec, num_tokens: int) -> float:
    if num_tokens < 0:
        raise ConfigError("num_tokens must be >= 0")
    return kv_bytes_per_token(model) * num_tokens


# --- batching knee ----------------------------------------------------------

def saturation_grid(max_len: int = 8192) -> list[int]:
    """Powers of two up to ``max_len`` plus the midpoints between them."""
    grid = {1}
    p = 1
    while p <= max_len:
        grid.add(p)
        if p >= 2 and p + p // 2 <= max_len:
            grid.add(p + p // 2)
        p *= 2
    return sorted(grid)


def saturation_length(shard: ModelSpec, coef: LatencyCoefficients,
                      intra_op: int | None = None, threshold: float = 0.97,
                      grid: Sequence[int] | None = None) -> int:
    """Shortest prompt length whose prefill throughput reaches the plateau."""
    grid = saturation_grid() if grid is None else sorted(grid)
    cost = prefill_cost(shard, coef, intra_op)
    thr = []
    for L in grid:
        t = cost(L, L * L)
        thr.append(math.inf if t <= 0 else L / t)
    best = max(thr)
    if math.isinf(best):
        return grid[0]
    for L, x in zip(grid, thr):
        if x >= threshold * best:
            return L
    return grid[-1]


# --- fitting ----------------------------------------------------------------

@dataclass(frozen=True)
class ProfileRow:
    batch: BatchProfile
    phase: str  # "prefill" or "decode"
    measured_s: float


PREFILL_FEATURES = ("gemm term (c1)", "attention t2 term (c2)", "overhead term (c3)")
DECODE_FEATURES = ("weight-load term (c4)", "context term (c5)")


def _feature_rows(rows, shard, intra_op, coef_pen):
    scale = shard.num_layers * coef_pen
    gemm, attn = _gemm_units(shard)
    pre_x, pre_y, dec_x, dec_y = [], [], [], []
    for r in rows:
        t, t2 = r.batch.tokens_t, r.batch.sq_sum_t2
        if r.phase == "prefill":
            pre_x.append([scale * gemm * t, scale * attn * t2 / shard.attn_block_b, scale])
            pre_y.append(r.measured_s)
        elif r.phase == "decode":
            dec_x.append([scale * gemm, scale * attn * t])
            dec_y.append(r.measured_s)
        else:
            raise FitError(f"unknown phase {r.phase!r}")
    return (np.array(pre_x, float).reshape(-1, 3), np.array(pre_y, float),
            np.array(dec_x, float).reshape(-1, 2), np.array(dec_y, float))


def _solve_nonneg(X, y, names):
    col = np.linalg.norm(X, axis=0)
    if np.any(col == 0):
        raise FitError(f"degenerate feature: {names[int(np.argmin(col))]} is all zero")
    Xs = X / col
    rank = np.linalg.matrix_rank(Xs)
    if rank < X.shape[1]:
        for j in range(X.shape[1]):
            if np.linalg.matrix_rank(np.delete(Xs, j, axis=1)) == rank:
                raise FitError(
                    f"degenerate feature: {names[j]} is not identifiable from the rows "
                    f"(rank {rank} < {X.shape[1]})")
    sol, _ = nnls(Xs, y)
    free = np.linalg.lstsq(Xs, y, rcond=None)[0]
    for j, (a, b) in enumerate(zip(sol, free)):
        if b < 0 and a == 0:
            log.warning("coefficient for %s clamped at zero", names[j])
    return sol / col


def fit_coefficients(rows: Sequence[ProfileRow], shard: ModelSpec,
                     intra_op: int | None = None,
                     intra_penalty: dict | None = None) -> LatencyCoefficients:
    """Non-negative least-squares fit of c1..c5 from measured iterations.

    All rows must come from the same shard and tensor-parallel degree.
    """
    pen_table = dict(DEFAULT_INTRA_PENALTY if intra_penalty is None else intra_penalty)
    deg = shard.tp_degree if intra_op is None else intra_op
    probe = LatencyCoefficients(0, 0, 0, 0, 0, pen_table)
    Xp, yp, Xd, yd = _feature_rows(rows, shard, deg, probe.penalty(deg))
    if len(yp) < 3:
        raise FitError(f"need >= 3 prefill rows, got {len(yp)}")
    if len(yd) < 2:
        raise FitError(f"need >= 2 decode rows, got {len(yd)}")
    c1, c2, c3 = _solve_nonneg(Xp, yp, PREFILL_FEATURES)
    c4, c5 = _solve_nonneg(Xd, yd, DECODE_FEATURES)
    return LatencyCoefficients(float(c1), float(c2), float(c3), float(c4), float(c5),
                               pen_table)


def predict(row: ProfileRow, shard: ModelSpec, coef: LatencyCoefficients,
            intra_op: int | None = None) -> float:
    if row.phase == "prefill":
        return prefill_iter_time(shard, row.batch, coef, intra_op)
    return decode_iter_time(shard, row.batch, coef, intra_op)


def read_profile_csv(path) -> list[ProfileRow]:
    """Rows of ``phase,batch_size,token_lens,measured_s``; lens ';'-separated."""
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = {"phase", "batch_size", "token_lens", "measured_s"} - set(reader.fieldnames or ())
        if missing:
            raise ParseError(f"profile CSV missing columns: {sorted(missing)}", 1)
        for i, rec in enumerate(reader, start=2):
            try:
                phase = rec["phase"].strip()
                if phase not in ("prefill", "decode"):
                    raise ValueError(f"phase must be prefill or decode, got {phase!r}")
                lens = [int(x) for x in rec["token_lens"].split(";") if x.strip()]
                batch = BatchProfile.of(lens)
                if int(rec["batch_size"]) != batch.batch_size_B:
                    raise ValueError("batch_size does not match token_lens")
                rows.append(ProfileRow(batch, phase, float(rec["measured_s"])))
            except (ValueError, ConfigError, TypeError, AttributeError) as e:
                raise ParseError(str(e), i) from None
    return rows


def write_profile_csv(path, rows: Iterable[ProfileRow]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["phase", "batch_size", "token_lens", "measured_s"])
        for r in rows:
            w.writerow([r.phase, r.batch.batch_size_B,
                        ";".join(str(x) for x in r.batch.token_lens), repr(r.measured_s)])
