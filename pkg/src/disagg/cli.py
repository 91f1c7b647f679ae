"""Command-line entry point.

Exit codes: 0 ok, 1 I/O, 2 fit, 3 placement/capacity, 4 usage.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import presets
from .errors import (CapacityError, ConfigError, FitError, ParseError, PlacementError)
from .latency import (LatencyCoefficients, ModelSpec, fit_coefficients, parallelize,
                      ParallelConfig, predict, read_profile_csv)
from .placement import Placement, plan_colocated, plan_high_affinity, plan_low_affinity
from .search import SearchConfig
from .simulator import ClusterSpec, SLOSpec, simulate
from .workload import Trace, resolve_source, sample_trace, save_trace

log = logging.getLogger("disagg")

EXIT_OK, EXIT_IO, EXIT_FIT, EXIT_PLACEMENT, EXIT_USAGE = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _read_struct(path) -> dict:
    with open(path) as f:
        return yaml.safe_load(f) or {}


def load_model(spec: str) -> ModelSpec:
    if spec in presets.MODELS:
        return presets.MODELS[spec]
    return ModelSpec.from_dict(_read_struct(spec))


def load_cluster(spec: str) -> ClusterSpec:
    if spec in presets.CLUSTERS:
        return presets.CLUSTERS[spec]
    return ClusterSpec.from_dict(_read_struct(spec))


def load_coefficients(spec: str) -> LatencyCoefficients:
    if spec in presets.COEFFICIENTS:
        return presets.coefficients(spec)
    return LatencyCoefficients.from_dict(_read_struct(spec))


@dataclass
class RunConfig:
    model: str = "opt-13b"
    cluster: str = "a100-4x8-low"
    coef: str = "a100"
    workload: str = "chat"
    ttft_s: float = 0.25
    tpot_s: float = 0.1
    attainment: float = 0.9
    slo_scale: float = 1.0
    seed: int = 0
    out: str = "out"
    trial_requests: int = 1000
    warmup_requests: int = 100
    max_batch_size: int = 256

    def slo(self) -> SLOSpec:
        return SLOSpec(self.ttft_s, self.tpot_s, self.attainment, self.slo_scale)

    def search(self) -> SearchConfig:
        return SearchConfig(trial_requests=self.trial_requests,
                            warmup_requests=min(self.warmup_requests, self.trial_requests // 2),
                            seed=self.seed, max_batch_size=self.max_batch_size)


_FLAG_FIELDS = {"model": "model", "cluster": "cluster", "coef": "coef", "workload": "workload",
                "slo_ttft": "ttft_s", "slo_tpot": "tpot_s", "attainment": "attainment",
                "slo_scale": "slo_scale", "seed": "seed", "out": "out",
                "trial_requests": "trial_requests", "max_batch_size": "max_batch_size"}


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        raw = _read_struct(args.config)
        known = set(asdict(cfg))
        unknown = set(raw) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg = replace(cfg, **raw)
    for flag, name in _FLAG_FIELDS.items():
        v = getattr(args, flag, None)
        if v is not None:
            cfg = replace(cfg, **{name: v})
    return cfg


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML/JSON run config; flags override its keys")
    p.add_argument("--model", help="model preset name or spec file")
    p.add_argument("--cluster", help="cluster preset name or spec file")
    p.add_argument("--coef", help="coefficient preset name or JSON file")
    p.add_argument("--workload", help="workload preset name or JSONL trace")
    p.add_argument("--slo-ttft", type=float)
    p.add_argument("--slo-tpot", type=float)
    p.add_argument("--attainment", type=float)
    p.add_argument("--slo-scale", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--trial-requests", type=int)
    p.add_argument("--max-batch-size", type=int)
    p.add_argument("--jobs", type=int, default=1)


def _resolved(cfg: RunConfig, model, cluster, coef) -> dict:
    return {"run": asdict(cfg), "model": model.to_dict(), "cluster": cluster.to_dict(),
            "coefficients": json.loads(coef.to_json())}


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --- commands ---------------------------------------------------------------

def cmd_fit(args) -> int:
    model = load_model(args.model or "opt-13b")
    shard = parallelize(model, ParallelConfig(args.pp, args.tp))
    rows = read_profile_csv(args.profile)
    coef = fit_coefficients(rows, shard)
    rel = [abs(predict(r, shard, coef) - r.measured_s) / r.measured_s
           for r in rows if r.measured_s > 0]
    out = Path(args.out_json)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(coef.to_json() + "\n")
    print(f"fitted {len(rows)} rows: c1={coef.c1:.4g} c2={coef.c2:.4g} c3={coef.c3:.4g} "
          f"c4={coef.c4:.4g} c5={coef.c5:.4g}")
    if rel:
        print(f"relative residual: mean {np.mean(rel):.3%} max {np.max(rel):.3%}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_workload(args) -> int:
    cfg = resolve_config(args)
    src = resolve_source(cfg.workload, cfg.seed)
    trace = sample_trace(src, args.rate, args.num_requests, cfg.seed)
    out = Path(args.trace_out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_trace(out, trace.to_requests())
    print(f"wrote {len(trace)} requests at {args.rate} req/s to {out}")
    return EXIT_OK


def _planner(mode):
    return {"high": plan_high_affinity, "low": plan_low_affinity,
            "colocated": plan_colocated}[mode]


def _summary(pl: Placement) -> str:
    lines = [f"mode: {pl.mode}"]
    if pl.mode == "colocated":
        lines.append(f"instance: tp={pl.prefill_cfg.intra_op} pp={pl.prefill_cfg.inter_op} "
                     f"x{pl.prefill_replicas_n}  goodput {pl.prefill_goodput:.3f} req/s")
    else:
        lines.append(f"prefill: tp={pl.prefill_cfg.intra_op} pp={pl.prefill_cfg.inter_op} "
                     f"x{pl.prefill_replicas_n}  goodput {pl.prefill_goodput:.3f} req/s")
        lines.append(f"decode:  tp={pl.decode_cfg.intra_op} pp={pl.decode_cfg.inter_op} "
                     f"x{pl.decode_replicas_m}  goodput {pl.decode_goodput:.3f} req/s")
    lines += [f"per-GPU goodput: {pl.per_gpu_goodput:.4f} req/s/GPU",
              f"target rate {pl.target_rate:g} req/s on {pl.num_gpus} GPUs "
              f"({pl.combined_per_gpu_goodput:.4f} req/s/GPU)",
              f"configurations enumerated: {pl.enumerated}",
              f"planning time: {pl.planning_time_s:.2f} s"]
    return "\n".join(lines)


def cmd_plan(args) -> int:
    cfg = resolve_config(args)
    model, cluster, coef = load_model(cfg.model), load_cluster(cfg.cluster), \
        load_coefficients(cfg.coef)
    if args.mode in ("high", "low") and cluster.affinity != args.mode:
        raise UsageError(f"mode {args.mode!r} does not match cluster affinity "
                         f"{cluster.affinity!r}")
    src = Trace.from_requests(resolve_source(cfg.workload, cfg.seed))
    pl = _planner(args.mode)(model, cluster, src, cfg.slo(), coef, args.rate,
                             search=cfg.search(), jobs=args.jobs)
    out = Path(cfg.out)
    _write_json(out / "placement.json",
                {"placement": pl.to_dict(), "config": _resolved(cfg, model, cluster, coef)})
    text = _summary(pl)
    (out / "summary.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


def _sim_once(pl, cfg, model, cluster, coef, src, rate, scale=None):
    slo = cfg.slo() if scale is None else replace(cfg.slo(), slo_scale=scale)
    trace = sample_trace(src, rate, cfg.trial_requests, cfg.seed)
    return simulate(pl, trace, slo, coef, cluster, model, cfg.max_batch_size)


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    if args.num_requests:
        cfg = replace(cfg, trial_requests=args.num_requests)
    model, cluster, coef = load_model(cfg.model), load_cluster(cfg.cluster), \
        load_coefficients(cfg.coef)
    raw = json.loads(Path(args.placement).read_text())
    pl = Placement.from_dict(raw.get("placement", raw))
    src = Trace.from_requests(resolve_source(cfg.workload, cfg.seed))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    tag = args.tag or pl.mode

    if args.sweep_rates or args.sweep_scales:
        rows = []
        if args.sweep_rates:
            for r in _floats(args.sweep_rates):
                res = _sim_once(pl, cfg, model, cluster, coef, src, r)
                rows.append(("rate", r, res.attainment))
        if args.sweep_scales:
            for s in _floats(args.sweep_scales):
                res = _sim_once(pl, cfg, model, cluster, coef, src, args.rate, s)
                rows.append(("slo_scale", s, res.attainment))
        for kind in ("rate", "slo_scale"):
            sel = [(x, a) for k, x, a in rows if k == kind]
            if not sel:
                continue
            path = out / f"{tag}_sweep_{kind}.csv"
            with open(path, "w", newline="") as f:
                w = csv.writer(f)
                w.writerow([kind, "attainment"])
                w.writerows(sel)
            for x, a in sel:
                print(f"{kind}={x:g} attainment={a:.4f}")
            print(f"wrote {path}")
        return EXIT_OK

    res = _sim_once(pl, cfg, model, cluster, coef, src, args.rate)
    doc = res.to_dict()
    doc["rate"] = args.rate
    doc["config"] = _resolved(cfg, model, cluster, coef)
    _write_json(out / f"{tag}_result.json", doc)
    res.write_csv(out / f"{tag}_requests.csv")
    pct = res.percentiles()
    print(f"attainment {res.attainment:.4f} at {args.rate:g} req/s "
          f"({res.num_requests} requests)")
    print(f"P90 TTFT {pct['ttft_p90']:.4f} s  P90 TPOT {pct['tpot_p90']:.4f} s")
    for stage, share in res.stage_shares().items():
        print(f"  {stage:<20s} {share:7.3%}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = resolve_config(args)
    model, cluster, coef = load_model(cfg.model), load_cluster(cfg.cluster), \
        load_coefficients(cfg.coef)
    src = Trace.from_requests(resolve_source(cfg.workload, cfg.seed))
    mode = cluster.affinity
    dis = _planner(mode)(model, cluster, src, cfg.slo(), coef, args.rate,
                         search=cfg.search(), jobs=args.jobs)
    col = plan_colocated(model, cluster, src, cfg.slo(), coef, args.rate,
                         search=cfg.search(), jobs=args.jobs)
    out = Path(cfg.out)
    _write_json(out / "compare.json", {"disaggregated": dis.to_dict(),
                                       "colocated": col.to_dict(),
                                       "config": _resolved(cfg, model, cluster, coef)})
    ratio = dis.per_gpu_goodput / col.per_gpu_goodput if col.per_gpu_goodput else float("inf")
    print(_summary(dis))
    print()
    print(_summary(col))
    print(f"\nper-GPU goodput ratio (disaggregated / colocated): {ratio:.2f}x")
    return EXIT_OK


def _floats(s: str) -> list[float]:
    try:
        return [float(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"not a comma-separated list of numbers: {s!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="disagg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    f = sub.add_parser("fit", help="fit latency coefficients from a profile CSV")
    f.add_argument("profile")
    f.add_argument("out_json")
    f.add_argument("--model")
    f.add_argument("--tp", type=int, default=1)
    f.add_argument("--pp", type=int, default=1)
    f.set_defaults(func=cmd_fit)

    w = sub.add_parser("workload", help="resample a Poisson workload to JSONL")
    _common(w)
    w.add_argument("--rate", type=float, required=True)
    w.add_argument("--num-requests", type=int, default=1000)
    w.add_argument("trace_out")
    w.set_defaults(func=cmd_workload)

    pl = sub.add_parser("plan", help="run a placement search")
    _common(pl)
    pl.add_argument("--mode", choices=("high", "low", "colocated"), required=True)
    pl.add_argument("--rate", type=float, required=True)
    pl.set_defaults(func=cmd_plan)

    s = sub.add_parser("simulate", help="simulate a placement")
    _common(s)
    s.add_argument("--placement", required=True)
    s.add_argument("--rate", type=float, required=True)
    s.add_argument("--num-requests", type=int)
    s.add_argument("--sweep-rates")
    s.add_argument("--sweep-scales")
    s.add_argument("--tag")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="disaggregated plan vs best colocated config")
    _common(c)
    c.add_argument("--rate", type=float, required=True)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("DISAGG_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FitError as e:
        print(f"fit error: {e}", file=sys.stderr)
        return EXIT_FIT
    except (PlacementError, CapacityError) as e:
        print(f"placement error: {e}", file=sys.stderr)
        return EXIT_PLACEMENT
    except (UsageError, ConfigError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ParseError, yaml.YAMLError, KeyError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
