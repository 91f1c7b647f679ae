"""Named model, hardware-coefficient and cluster presets."""

from __future__ import annotations

from .errors import ConfigError
from .latency import DEFAULT_INTRA_PENALTY, LatencyCoefficients, ModelSpec
from .simulator import ClusterSpec

GB = 1e9
GiB = 2**30

MODELS = {
    "opt-13b": ModelSpec("opt-13b", 40, 5120, 40, 128, 20480, 26 * GB),
    "opt-66b": ModelSpec("opt-66b", 64, 9216, 72, 128, 36864, 132 * GB),
    "opt-175b": ModelSpec("opt-175b", 96, 12288, 96, 128, 49152, 350 * GB),
    # small enough for exhaustive tests; 8 heads and 8 layers keep many
    # parallel degrees divisible
    "toy": ModelSpec("toy", 8, 1024, 8, 128, 4096, 2 * GB),
}


def a100_coefficients(intra_penalty: dict | None = None) -> LatencyCoefficients:
    """Coefficients for an A100-80GB class GPU.

    c1 converts multiply-accumulates to seconds at ~55% of 312 TFLOP/s;
    c2, c4 and c5 convert FP16 element traffic to seconds at ~70% of 2 TB/s;
    c3 is a per-layer launch/runtime overhead.
    """
    mac = 2.0 / (312e12 * 0.55)
    elem = 2.0 / (2.0e12 * 0.7)
    return LatencyCoefficients(
        c1=mac, c2=elem, c3=1.5e-4, c4=elem, c5=elem,
        intra_penalty=dict(DEFAULT_INTRA_PENALTY if intra_penalty is None else intra_penalty))


COEFFICIENTS = {"a100": a100_coefficients}

CLUSTERS = {
    # 25 Gbps cross-node, NVLINK inside the node
    "a100-4x8-low": ClusterSpec(4, 8, 80 * GiB, 600e9, 25e9 / 8, "low"),
    "a100-4x8-high": ClusterSpec(4, 8, 80 * GiB, 600e9, 100e9, "high"),
    "a100-1x2-high": ClusterSpec(1, 2, 80 * GiB, 600e9, 100e9, "high"),
    "a100-1x2-low": ClusterSpec(1, 2, 80 * GiB, 600e9, 25e9 / 8, "low"),
}


def model(name: str) -> ModelSpec:
    try:
        return MODELS[name]
    except KeyError:
        raise ConfigError(f"unknown model preset {name!r}; have {sorted(MODELS)}") from None


def cluster(name: str) -> ClusterSpec:
    try:
        return CLUSTERS[name]
    except KeyError:
        raise ConfigError(f"unknown cluster preset {name!r}; have {sorted(CLUSTERS)}") from None


def coefficients(name: str) -> LatencyCoefficients:
    try:
        return COEFFICIENTS[name]()
    except KeyError:
        raise ConfigError(f"unknown coefficient preset {name!r}") from None
