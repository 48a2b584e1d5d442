"""Dense tensor helpers.

Tensors are plain ``numpy.ndarray`` values in row-major (C) order. Feature
maps always use the axis order ``(batch, height, width, channel)``.
Verification runs in float64; float32 is only used by the benchmarks.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ShapeError

FP64 = np.float64
FP32 = np.float32

PRECISIONS = {"fp64": FP64, "fp32": FP32}

Tensor = np.ndarray


def make_rng(seed: int) -> np.random.Generator:
    """Return a deterministic generator (PCG64) for ``seed``.

    PCG64 produces the same stream on every platform numpy supports, so a
    seed is enough to reproduce any randomized instance.
    """
    return np.random.Generator(np.random.PCG64(int(seed)))


def resolve_dtype(precision) -> np.dtype:
    if isinstance(precision, str):
        try:
            return np.dtype(PRECISIONS[precision])
        except KeyError:
            raise ShapeError(f"unknown precision {precision!r}") from None
    return np.dtype(precision)


def check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    return shape


def tensor_filled(shape: Sequence[int], value: float, precision="fp64") -> Tensor:
    if not np.isfinite(value):
        raise ConfigurationError(f"fill value must be finite, got {value}")
    return np.full(check_shape(shape), value, dtype=resolve_dtype(precision))


def tensor_random(
    shape: Sequence[int], rng: np.random.Generator, scale: float = 1.0, precision="fp64"
) -> Tensor:
    """Uniform samples from ``[-scale, scale]``."""
    if not scale > 0:
        raise ShapeError(f"scale must be positive, got {scale}")
    shape = check_shape(shape)
    # always draw in fp64 so the stream does not depend on precision
    values = rng.uniform(-scale, scale, size=shape)
    return values.astype(resolve_dtype(precision), copy=False)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} @ {b.shape}")
    return a @ b


def frozen(t: Tensor) -> Tensor:
    """Mark ``t`` read-only and return it."""
    t.flags.writeable = False
    return t


def max_abs_diff(a: Tensor, b: Tensor) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"cannot compare {a.shape} with {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)))
