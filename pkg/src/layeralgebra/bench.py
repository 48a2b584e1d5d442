"""Wall-clock micro-benchmarks of single layer forward passes.

Only the ordering of layers is meaningful here; absolute numbers depend on
the machine and on numpy's backend.
"""

from __future__ import annotations

import contextlib
import csv
import io
import os
import time
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError
from .layers import LayerSpec, WindowGeometry, init_params, layer_forward
from .layers.spec import (
    ATTENTION_KINDS,
    DEPTHWISE_CONV,
    INHOMOGENEOUS_DYNAMIC_CONV,
    KINDS,
    LOCAL_ATTENTION,
    PARTITION,
    POINTWISE_CONV,
    SLIDING,
    TOKEN_MIXING_MLP,
)
from .tensor import make_rng

MIN_REPS = 30
DEFAULT_SHAPE = (1, 56, 56, 96)
DEFAULT_WINDOW = 7
# Swin-T stage 1 splits 96 channels into 3 heads
DEFAULT_HEADS = 3
DEFAULT_KINDS = (DEPTHWISE_CONV, LOCAL_ATTENTION)


@dataclass(frozen=True)
class BenchReport:
    kind: str
    input_shape: tuple
    precision: str
    reps: int
    warmup: int
    median_s: float
    p10_s: float
    p90_s: float
    throughput: float  # inputs per second at the median

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d


def bench_spec(kind: str, channels: int, window: int = DEFAULT_WINDOW, heads: int = DEFAULT_HEADS) -> LayerSpec:
    """The layer benchmarked for ``kind``: the bare aggregation, no projections."""
    if kind not in KINDS:
        raise ConfigurationError(f"unknown layer kind {kind!r}")
    if kind in ATTENTION_KINDS:
        geometry = WindowGeometry(window, window, PARTITION)
        return LayerSpec(kind, channels, heads, geometry,
                         use_relative_position_bias=kind == LOCAL_ATTENTION)
    if kind in (POINTWISE_CONV, TOKEN_MIXING_MLP):
        return LayerSpec(kind, channels, 1, WindowGeometry(1, 1))
    groups = heads if kind == INHOMOGENEOUS_DYNAMIC_CONV else 1
    return LayerSpec(kind, channels, groups, WindowGeometry(window, window, SLIDING, "zero"))


@contextlib.contextmanager
def pinned():
    """Pin to one CPU where the platform allows, to steady the timings.

    Yields whether pinning took effect; the previous affinity is restored.
    """
    if not hasattr(os, "sched_setaffinity"):
        yield False
        return
    try:
        before = os.sched_getaffinity(0)
        os.sched_setaffinity(0, {min(before)})
    except OSError:
        yield False
        return
    try:
        yield True
    finally:
        os.sched_setaffinity(0, before)


def _percentiles(times: Sequence[float]) -> tuple[float, float, float]:
    p10, med, p90 = np.percentile(np.asarray(times), [10, 50, 90])
    return float(med), float(p10), float(p90)


def bench_layer(
    spec: LayerSpec,
    shape: Sequence[int] = DEFAULT_SHAPE,
    reps: int = MIN_REPS,
    warmup: int = 3,
    seed: int = 0,
    precision: str = "fp32",
) -> BenchReport:
    """Time ``reps`` forward passes after ``warmup`` untimed ones."""
    if reps < MIN_REPS:
        raise ConfigurationError(f"need at least {MIN_REPS} repetitions, got {reps}")
    if warmup < 0:
        raise ConfigurationError("warmup must be >= 0")
    if precision != "fp32":
        raise ConfigurationError("benchmarks run in fp32")
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4 or shape[3] != spec.channels:
        raise ConfigurationError(f"input shape {shape} does not match {spec.channels} channels")
    rng = make_rng(seed)
    params = init_params(spec, rng, spatial=shape[1:3], precision=precision)
    x = rng.uniform(-1.0, 1.0, size=shape).astype(np.float32)
    for _ in range(warmup):
        layer_forward(x, spec, params)
    times = []
    for _ in range(reps):
        start = time.perf_counter()
        layer_forward(x, spec, params)
        times.append(time.perf_counter() - start)
    med, p10, p90 = _percentiles(times)
    return BenchReport(spec.kind, shape, precision, reps, warmup, med, p10, p90, shape[0] / med)


def run_bench(
    kinds: Sequence[str] = DEFAULT_KINDS,
    shape: Sequence[int] = DEFAULT_SHAPE,
    reps: int = MIN_REPS,
    warmup: int = 3,
    seed: int = 0,
    window: int = DEFAULT_WINDOW,
    heads: int = DEFAULT_HEADS,
    pin: bool = True,
) -> list[BenchReport]:
    """Benchmark several kinds at one identical input shape."""
    specs = [bench_spec(k, shape[3], window, heads) for k in kinds]
    with pinned() if pin else contextlib.nullcontext():
        return [bench_layer(spec, shape, reps, warmup, seed) for spec in specs]


def faster(reports: Sequence[BenchReport], first: str, second: str) -> Optional[bool]:
    """Is ``first`` strictly faster than ``second`` by median latency? None if either is missing."""
    by_kind = {r.kind: r for r in reports}
    if first not in by_kind or second not in by_kind:
        return None
    return by_kind[first].median_s < by_kind[second].median_s


CSV_FIELDS = ("kind", "input_shape", "precision", "reps", "warmup", "median_s", "p10_s", "p90_s", "throughput")


def to_csv(reports: Sequence[BenchReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in reports:
        row = r.to_dict()
        row["input_shape"] = "x".join(str(s) for s in r.input_shape)
        writer.writerow(row)
    return buf.getvalue()


__all__ = [
    "BenchReport",
    "DEFAULT_KINDS",
    "DEFAULT_SHAPE",
    "MIN_REPS",
    "bench_layer",
    "bench_spec",
    "faster",
    "pinned",
    "run_bench",
    "to_csv",
]
