"""Request traces: ingest, paired-bootstrap resampling, Poisson stamping."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, EmptySourceError, ParseError


@dataclass(frozen=True, slots=True)
class Request:
    id: int
    arrival_s: float
    input_len: int
    output_len: int

    def __post_init__(self):
        if self.input_len < 1 or self.output_len < 1:
            raise ConfigError(f"request {self.id}: lengths must be >= 1")
        if self.arrival_s < 0:
            raise ConfigError(f"request {self.id}: arrival_s must be >= 0")


@dataclass(frozen=True)
class WorkloadSpec:
    rate_R: float
    num_requests: int
    seed: int = 0
    source: str = ""

    def __post_init__(self):
        if not self.rate_R > 0:
            raise ConfigError("rate_R must be > 0")
        if self.num_requests < 1:
            raise ConfigError("num_requests must be >= 1")


@dataclass(frozen=True)
class WorkloadStats:
    mean_input_len: float
    mean_output_len: float
    mean_rate: float
    window_s: float


@dataclass(frozen=True)
class Trace:
    """Column view of a workload, the form the simulator consumes."""
    arrival: np.ndarray
    input_len: np.ndarray
    output_len: np.ndarray

    def __len__(self):
        return len(self.arrival)

    @classmethod
    def from_requests(cls, reqs: Sequence[Request]) -> "Trace":
        return cls(np.array([r.arrival_s for r in reqs], dtype=float),
                   np.array([r.input_len for r in reqs], dtype=np.int64),
                   np.array([r.output_len for r in reqs], dtype=np.int64))

    def to_requests(self) -> list[Request]:
        return [Request(i, float(a), int(x), int(y))
                for i, (a, x, y) in enumerate(zip(self.arrival, self.input_len, self.output_len))]


def load_trace(path) -> list[Request]:
    """Read a JSON-lines trace; rows are returned sorted by arrival time."""
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rows.append(Request(len(rows), float(obj.get("arrival_s", 0.0)),
                                    int(obj["input_len"]), int(obj["output_len"])))
            except (ValueError, KeyError, TypeError, ConfigError) as e:
                raise ParseError(f"{type(e).__name__}: {e}", lineno) from None
    rows.sort(key=lambda r: r.arrival_s)
    return rows


def save_trace(path, reqs: Sequence[Request]) -> None:
    with open(path, "w") as f:
        for r in reqs:
            f.write(json.dumps({"arrival_s": r.arrival_s, "input_len": r.input_len,
                                "output_len": r.output_len}) + "\n")


def _lengths(lengths_from) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(lengths_from, Trace):
        inp, out = lengths_from.input_len, lengths_from.output_len
    else:
        inp = np.array([r.input_len for r in lengths_from], dtype=np.int64)
        out = np.array([r.output_len for r in lengths_from], dtype=np.int64)
    if len(inp) == 0:
        raise EmptySourceError("cannot resample from an empty trace")
    return inp, out


def sample_trace(lengths_from, rate: float, num_requests: int, seed) -> Trace:
    """Paired bootstrap of (input, output) lengths with Poisson arrivals.

    Unit-rate exponential gaps are drawn first and then divided by ``rate``,
    so for a fixed seed a higher rate is a pure time compression of the same
    sequence.
    """
    if not rate > 0:
        raise ConfigError("rate must be > 0")
    inp, out = _lengths(lengths_from)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(inp), size=num_requests)
    gaps = rng.standard_exponential(num_requests)
    arrival = np.cumsum(gaps) / rate
    # strictly increasing arrivals
    for i in np.flatnonzero(np.diff(arrival) <= 0):
        arrival[i + 1] = np.nextafter(arrival[i], math.inf)
    return Trace(arrival, inp[idx].copy(), out[idx].copy())


def sample_workload(spec: WorkloadSpec, lengths_from) -> list[Request]:
    return sample_trace(lengths_from, spec.rate_R, spec.num_requests, spec.seed).to_requests()


def workload_stats(reqs: Sequence[Request]) -> WorkloadStats:
    if not reqs:
        return WorkloadStats(0.0, 0.0, 0.0, 0.0)
    arr = [r.arrival_s for r in reqs]
    window = max(arr) - min(arr)
    rate = (len(reqs) - 1) / window if window > 0 else 0.0
    return WorkloadStats(float(np.mean([r.input_len for r in reqs])),
                         float(np.mean([r.output_len for r in reqs])), rate, window)


def detect_shift(history: WorkloadStats, current: WorkloadStats,
                 threshold: float = 0.3, eps: float = 1e-9) -> bool:
    """True when any tracked mean moved by more than ``threshold`` relatively."""
    if threshold <= 0:
        raise ConfigError("threshold must be > 0")
    for name in ("mean_input_len", "mean_output_len", "mean_rate"):
        old, new = getattr(history, name), getattr(current, name)
        if abs(new - old) / max(old, eps) > threshold:
            return True
    return False


# --- presets ----------------------------------------------------------------

def preset_lengths(name: str, seed: int = 0, size: int = 4096) -> list[Request]:
    """Length-only source traces for desk-scale experiments.

    ``fixed-512-64``: every request 512 in / 64 out.
    ``uniform-512``: 512-token prompts, single output token (prefill studies).
    ``chat``: lognormal prompt and output lengths, loosely chat-shaped.
    ``long-prompt``: long prompts, short outputs (summarization-shaped).
    """
    if name == "fixed-512-64":
        return [Request(0, 0.0, 512, 64)]
    if name == "uniform-512":
        return [Request(0, 0.0, 512, 1)]
    rng = np.random.default_rng(seed)
    if name == "chat":
        inp = np.clip(rng.lognormal(math.log(300), 0.8, size), 4, 2048)
        out = np.clip(rng.lognormal(math.log(150), 0.9, size), 1, 1024)
    elif name == "long-prompt":
        inp = np.clip(rng.lognormal(math.log(1500), 0.35, size), 256, 2048)
        out = np.clip(rng.lognormal(math.log(80), 0.6, size), 1, 512)
    else:
        raise ConfigError(f"unknown workload preset {name!r}")
    return [Request(i, 0.0, int(a), int(b)) for i, (a, b) in enumerate(zip(inp, out))]


PRESET_WORKLOADS = ("fixed-512-64", "uniform-512", "chat", "long-prompt")


def resolve_source(spec: str, seed: int = 0) -> list[Request]:
    """A preset name or a path to a JSON-lines trace."""
    if spec in PRESET_WORKLOADS:
        return preset_lengths(spec, seed)
    if not Path(spec).exists():
        raise FileNotFoundError(spec)
    return load_trace(spec)
