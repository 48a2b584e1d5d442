"""Declarative layer descriptions and their parameter containers."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigurationError, GeometryError, ShapeError
from ..tensor import make_rng, resolve_dtype, tensor_random

PARTITION = "non_overlapping_partition"
SLIDING = "dense_sliding"
MODES = (PARTITION, SLIDING)
PADDINGS = ("zero", "circular", "none")

LOCAL_ATTENTION = "local_attention"
STATIC_LOCAL_ATTENTION = "static_local_attention"
DEPTHWISE_CONV = "depthwise_conv"
DYNAMIC_DEPTHWISE_CONV = "dynamic_depthwise_conv"
INHOMOGENEOUS_DYNAMIC_CONV = "inhomogeneous_dynamic_conv"
POINTWISE_CONV = "pointwise_conv"
TOKEN_MIXING_MLP = "token_mixing_mlp"

KINDS = (
    LOCAL_ATTENTION,
    STATIC_LOCAL_ATTENTION,
    DEPTHWISE_CONV,
    DYNAMIC_DEPTHWISE_CONV,
    INHOMOGENEOUS_DYNAMIC_CONV,
    POINTWISE_CONV,
    TOKEN_MIXING_MLP,
)
ATTENTION_KINDS = (LOCAL_ATTENTION, STATIC_LOCAL_ATTENTION)
WINDOWED_CONV_KINDS = (DEPTHWISE_CONV, DYNAMIC_DEPTHWISE_CONV, INHOMOGENEOUS_DYNAMIC_CONV)

PER_CHANNEL = "per_channel"
PER_GROUP = "per_group"


@dataclass(frozen=True)
class WindowGeometry:
    window_h: int = 3
    window_w: int = 3
    mode: str = SLIDING
    padding: str = "zero"

    def __post_init__(self):
        if self.window_h < 1 or self.window_w < 1:
            raise GeometryError(f"window extents must be >= 1, got {self.window_h}x{self.window_w}")
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown window mode {self.mode!r}")
        if self.padding not in PADDINGS:
            raise ConfigurationError(f"unknown padding {self.padding!r}")
        if self.mode == SLIDING and (self.window_h % 2 == 0 or self.window_w % 2 == 0):
            raise GeometryError("sliding windows need odd extents so each window has a centre")

    @property
    def nk(self) -> int:
        return self.window_h * self.window_w

    @property
    def radius(self) -> tuple[int, int]:
        return self.window_h // 2, self.window_w // 2

    def offsets(self) -> list[tuple[int, int]]:
        """Window slots in raster order as (dy, dx).

        For sliding windows these are the relative offsets 2D(j) - 2D(i) from
        the centre; for partitions they are coordinates inside the window.
        """
        if self.mode == SLIDING:
            rh, rw = self.radius
            return [(u - rh, v - rw) for u in range(self.window_h) for v in range(self.window_w)]
        return [(u, v) for u in range(self.window_h) for v in range(self.window_w)]

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        self.validate(h, w)
        if self.mode == SLIDING and self.padding == "none":
            return h - self.window_h + 1, w - self.window_w + 1
        return h, w

    def validate(self, h: int, w: int) -> None:
        if self.mode == PARTITION:
            if h % self.window_h or w % self.window_w:
                raise GeometryError(
                    f"{h}x{w} map is not divisible into {self.window_h}x{self.window_w} windows"
                )
        elif self.window_h > h or self.window_w > w:
            raise GeometryError(f"{self.window_h}x{self.window_w} window exceeds {h}x{w} map")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    channels: int
    heads_or_groups: int = 1
    geometry: WindowGeometry = field(default_factory=WindowGeometry)
    use_qkv_projections: bool = False
    use_relative_position_bias: bool = False
    out_channels: Optional[int] = None
    # dynamic predictors: kernel granularity, hidden rectifier, reduction ratio
    predictor_mode: str = PER_CHANNEL
    predictor_relu: bool = True
    reduction: int = 4

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")
        if self.channels < 1:
            raise ShapeError("channels must be >= 1")
        if self.heads_or_groups < 1:
            raise ShapeError("heads_or_groups must be >= 1")
        if self.channels % self.heads_or_groups:
            raise ShapeError(
                f"channels {self.channels} not divisible by {self.heads_or_groups} heads/groups"
            )
        if self.predictor_mode not in (PER_CHANNEL, PER_GROUP):
            raise ConfigurationError(f"unknown predictor mode {self.predictor_mode!r}")
        if self.kind in ATTENTION_KINDS and self.geometry.mode != PARTITION:
            raise GeometryError("attention kinds use non_overlapping_partition windows")
        if self.kind in WINDOWED_CONV_KINDS and self.geometry.mode != SLIDING:
            raise GeometryError("convolution kinds use dense_sliding windows")

    @property
    def group_size(self) -> int:
        return self.channels // self.heads_or_groups

    @property
    def hidden(self) -> int:
        return max(1, self.channels // self.reduction)

    @property
    def d_out(self) -> int:
        return self.out_channels or self.channels

    def replace(self, **changes) -> "LayerSpec":
        return dataclasses.replace(self, **changes)


PARAM_NAMES = (
    "kernel",
    "window_table",
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
    "rel_bias",
    "p1", "p2",
    "pw", "pw_bias",
    "wc",
)


@dataclass(frozen=True)
class LayerParams:
    """Parameter tensors of one layer; unused slots stay ``None``.

    Shapes: ``kernel`` (Kh, Kw, D); ``window_table`` (nWh, nWw, M, Nk, Nk);
    projections (D, D) applied as ``x @ w``; ``rel_bias``
    ((2Kh-1)(2Kw-1), M); ``p1`` (D, R) and ``p2`` (R, D*Nk or M*Nk);
    ``pw`` (D_in, D_out); ``wc`` (N, N).
    """

    kernel: Optional[np.ndarray] = None
    window_table: Optional[np.ndarray] = None
    wq: Optional[np.ndarray] = None
    bq: Optional[np.ndarray] = None
    wk: Optional[np.ndarray] = None
    bk: Optional[np.ndarray] = None
    wv: Optional[np.ndarray] = None
    bv: Optional[np.ndarray] = None
    wo: Optional[np.ndarray] = None
    bo: Optional[np.ndarray] = None
    rel_bias: Optional[np.ndarray] = None
    p1: Optional[np.ndarray] = None
    p2: Optional[np.ndarray] = None
    pw: Optional[np.ndarray] = None
    pw_bias: Optional[np.ndarray] = None
    wc: Optional[np.ndarray] = None

    def tensors(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in PARAM_NAMES if getattr(self, n) is not None}

    def replace(self, **changes) -> "LayerParams":
        return dataclasses.replace(self, **changes)

    def require(self, *names: str) -> None:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise ShapeError(f"missing parameter tensors: {', '.join(missing)}")


def predictor_width(spec: LayerSpec) -> int:
    nk = spec.geometry.nk
    if spec.kind == INHOMOGENEOUS_DYNAMIC_CONV or spec.predictor_mode == PER_GROUP:
        return spec.heads_or_groups * nk
    return spec.channels * nk


def init_params(
    spec: LayerSpec,
    rng=0,
    spatial: Optional[tuple[int, int]] = None,
    scale: float = 0.5,
    precision="fp64",
) -> LayerParams:
    """Draw every tensor ``spec`` needs from ``rng`` (a Generator or a seed).

    ``spatial`` is the (H, W) map size; static attention tables and
    token-mixing matrices depend on it.
    """
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(rng)
    dtype = resolve_dtype(precision)
    d = spec.channels
    m = spec.heads_or_groups
    g = spec.geometry
    nk = g.nk

    def draw(*shape, s=scale):
        return tensor_random(shape, rng, s, dtype)

    p: dict[str, np.ndarray] = {}
    if spec.kind in ATTENTION_KINDS:
        if spec.use_qkv_projections:
            for name in ("wq", "wk", "wv", "wo"):
                p[name] = draw(d, d, s=1.0 / np.sqrt(d))
            # no key bias: it shifts every logit of a row equally and softmax cancels it
            for name in ("bq", "bv", "bo"):
                p[name] = draw(d, s=0.1)
            if spec.kind == STATIC_LOCAL_ATTENTION:
                for name in ("wq", "bq", "wk"):
                    del p[name]
        if spec.kind == LOCAL_ATTENTION and spec.use_relative_position_bias:
            p["rel_bias"] = draw((2 * g.window_h - 1) * (2 * g.window_w - 1), m)
        if spec.kind == STATIC_LOCAL_ATTENTION:
            if spatial is None:
                raise ShapeError("static attention tables need the spatial extent")
            g.validate(*spatial)
            nwh, nww = spatial[0] // g.window_h, spatial[1] // g.window_w
            p["window_table"] = draw(nwh, nww, m, nk, nk, s=1.0 / nk)
    elif spec.kind == DEPTHWISE_CONV:
        p["kernel"] = draw(g.window_h, g.window_w, d)
    elif spec.kind in (DYNAMIC_DEPTHWISE_CONV, INHOMOGENEOUS_DYNAMIC_CONV):
        r = spec.hidden
        p["p1"] = draw(d, r, s=1.0 / np.sqrt(d))
        p["p2"] = draw(r, predictor_width(spec), s=1.0 / np.sqrt(r))
    elif spec.kind == POINTWISE_CONV:
        p["pw"] = draw(d, spec.d_out, s=1.0 / np.sqrt(d))
        p["pw_bias"] = draw(spec.d_out, s=0.1)
    elif spec.kind == TOKEN_MIXING_MLP:
        if spatial is None:
            raise ShapeError("token mixing needs the spatial extent")
        n = spatial[0] * spatial[1]
        p["wc"] = draw(n, n, s=1.0 / np.sqrt(n))
    return LayerParams(**p)
