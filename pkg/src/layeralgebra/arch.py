"""Swin-style networks and their depth-wise convolution counterparts, as counted specs.

An :class:`ArchSpec` lists every parameter-bearing component of a network,
stage by stage. :func:`count_params` and :func:`count_flops` tally them.
FLOPs are multiply-accumulates (see ``FLOP_CONVENTIONS`` for how window
aggregation is charged); normalisation, activations, softmax and pooling
count as zero.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

from .errors import ConfigurationError, GeometryError

SWIN = "swin"
DWCONV = "dwconv"
D_DWCONV = "d-dwconv"

PER_CHANNEL = "per_channel"
PER_GROUP = "per_group"

# FLOP conventions. "window_aggregation" charges every window aggregation two
# Nk*D products per position, the same as the Q K^T + A V pair of attention;
# for depth-wise convolution that doubles the plain MAC count. "mac" charges
# one multiply-accumulate per kernel tap.
WINDOW_AGGREGATION = "window_aggregation"
MAC = "mac"
FLOP_CONVENTIONS = (WINDOW_AGGREGATION, MAC)
DEFAULT_CONVENTION = WINDOW_AGGREGATION


@dataclass(frozen=True)
class Component:
    """One parameter/FLOP-bearing piece of a block.

    ``kind`` is one of linear, layernorm, batchnorm, window_attention,
    rel_pos_bias, depthwise_conv, dynamic_predictor.
    """

    name: str
    kind: str
    d_in: int
    d_out: int = 0
    bias: bool = True
    window: int = 7
    heads: int = 1
    predictor_mode: str = PER_CHANNEL
    reduction: int = 4
    # True for layers applied once per image instead of once per position
    per_image: bool = False
    static_kernel: bool = True

    def params(self) -> int:
        k = self.kind
        if k == "linear":
            return self.d_in * self.d_out + (self.d_out if self.bias else 0)
        if k in ("layernorm", "batchnorm"):
            return 2 * self.d_in
        if k == "window_attention":
            return 0
        if k == "rel_pos_bias":
            return (2 * self.window - 1) ** 2 * self.heads
        if k == "depthwise_conv":
            kernel = self.window * self.window * self.d_in if self.static_kernel else 0
            return kernel + (self.d_in if self.bias else 0)
        if k == "dynamic_predictor":
            hidden = self.d_in // self.reduction
            return self.d_in * hidden + hidden * self.predictor_width()
        raise ConfigurationError(f"unknown component kind {k!r}")

    def predictor_width(self) -> int:
        nk = self.window * self.window
        return (self.heads if self.predictor_mode == PER_GROUP else self.d_in) * nk

    def flops(self, positions: int, convention: str = DEFAULT_CONVENTION) -> int:
        k = self.kind
        n = 1 if self.per_image else positions
        if k == "linear":
            return n * self.d_in * self.d_out
        if k == "window_attention":
            # per window: Nk^2 D for Q K^T plus Nk^2 D for A V
            return 2 * n * self.window * self.window * self.d_in
        if k == "depthwise_conv":
            taps = n * self.window * self.window * self.d_in
            return 2 * taps if convention == WINDOW_AGGREGATION else taps
        if k == "dynamic_predictor":
            hidden = self.d_in // self.reduction
            return self.d_in * hidden + hidden * self.predictor_width()
        return 0


@dataclass(frozen=True)
class Stage:
    index: int
    channels: int
    heads: int
    depth: int
    resolution: int
    downsample: tuple[Component, ...]
    block: tuple[Component, ...]


@dataclass(frozen=True)
class ArchSpec:
    name: str
    family: str
    embed_dim: int
    depths: tuple[int, ...]
    heads: tuple[int, ...]
    window: int = 7
    mlp_ratio: int = 4
    input_size: int = 224
    patch_size: int = 4
    num_classes: int = 1000
    in_chans: int = 3
    predictor_mode: str = PER_CHANNEL
    qk_projections: bool = True
    stages: tuple[Stage, ...] = field(default=(), compare=False)
    head: tuple[Component, ...] = field(default=(), compare=False)

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(self.embed_dim * 2 ** i for i in range(len(self.depths)))

    def replace(self, **changes) -> "ArchSpec":
        base = dataclasses.replace(self, stages=(), head=())
        return assemble(dataclasses.replace(base, **changes))


@dataclass(frozen=True)
class BreakdownEntry:
    stage: str
    component: str
    kind: str
    count: int
    params: int
    flops: int


@dataclass(frozen=True)
class CountReport:
    arch: str
    input_size: int
    params_total: int
    flops_total: int
    breakdown: tuple[BreakdownEntry, ...]
    flop_convention: str = DEFAULT_CONVENTION

    def by_kind(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for e in self.breakdown:
            d = out.setdefault(e.kind, {"params": 0, "flops": 0})
            d["params"] += e.params
            d["flops"] += e.flops
        return out

    def by_stage(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for e in self.breakdown:
            d = out.setdefault(e.stage, {"params": 0, "flops": 0})
            d["params"] += e.params
            d["flops"] += e.flops
        return out

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "input_size": self.input_size,
            "params_total": self.params_total,
            "flops_total": self.flops_total,
            "flop_convention": self.flop_convention,
            "breakdown": [dataclasses.asdict(e) for e in self.breakdown],
        }


# -- construction ----------------------------------------------------------------


def _swin_block(d: int, heads: int, window: int, mlp: int, qk: bool) -> tuple[Component, ...]:
    parts = [Component("norm1", "layernorm", d)]
    if qk:
        parts += [Component("q", "linear", d, d), Component("k", "linear", d, d)]
    parts += [
        Component("v", "linear", d, d),
        Component("attn", "window_attention", d, window=window, heads=heads),
        Component("rel_pos_bias", "rel_pos_bias", d, window=window, heads=heads),
        Component("proj", "linear", d, d),
    ]
    return tuple(parts + _mlp(d, mlp, "layernorm"))


def _dwconv_block(d: int, heads: int, window: int, mlp: int, dynamic: bool, mode: str) -> tuple[Component, ...]:
    parts = [
        Component("pre_linear", "linear", d, d),
        Component("pre_bn", "batchnorm", d),
        Component("dwconv", "depthwise_conv", d, window=window, static_kernel=not dynamic),
        Component("dw_bn", "batchnorm", d),
    ]
    if dynamic:
        parts.append(
            Component("predictor", "dynamic_predictor", d, window=window, heads=heads,
                      predictor_mode=mode, per_image=True)
        )
    parts += [
        Component("post_linear", "linear", d, d),
        Component("post_bn", "batchnorm", d),
    ]
    return tuple(parts + _mlp(d, mlp, "batchnorm"))


def _mlp(d: int, ratio: int, norm: str) -> list[Component]:
    return [
        Component("norm2", norm, d),
        Component("fc1", "linear", d, ratio * d),
        Component("fc2", "linear", ratio * d, d),
    ]


def assemble(spec: ArchSpec) -> ArchSpec:
    """Fill in ``stages`` and ``head`` from the scalar fields of ``spec``."""
    if spec.input_size % spec.patch_size:
        raise GeometryError(f"input {spec.input_size} not divisible by patch {spec.patch_size}")
    res = spec.input_size // spec.patch_size
    stages = []
    prev = None
    for i, (d, depth, heads) in enumerate(zip(spec.channels, spec.depths, spec.heads)):
        if i == 0:
            down = (
                Component("patch_embed", "linear", spec.patch_size ** 2 * spec.in_chans, d),
                Component("patch_norm", "layernorm", d),
            )
        else:
            if res % 2:
                raise GeometryError(f"resolution {res} cannot be halved at stage {i + 1}")
            res //= 2
            down = (
                Component("merge", "linear", 4 * prev, d, bias=False),
                Component("merge_norm", "layernorm", d),
            )
        if res % spec.window:
            raise GeometryError(f"stage {i + 1} resolution {res} not divisible by window {spec.window}")
        if d % heads:
            raise GeometryError(f"stage {i + 1}: {d} channels not divisible by {heads} heads")
        if spec.family == SWIN:
            block = _swin_block(d, heads, spec.window, spec.mlp_ratio, spec.qk_projections)
        elif spec.family in (DWCONV, D_DWCONV):
            block = _dwconv_block(d, heads, spec.window, spec.mlp_ratio,
                                  spec.family == D_DWCONV, spec.predictor_mode)
        else:
            raise ConfigurationError(f"unknown family {spec.family!r}")
        stages.append(Stage(i + 1, d, heads, depth, res, down, block))
        prev = d
    last = spec.channels[-1]
    head = (
        Component("final_norm", "layernorm", last),
        Component("classifier", "linear", last, spec.num_classes, per_image=True),
    )
    return dataclasses.replace(spec, stages=tuple(stages), head=head)


_TINY = dict(embed_dim=96, depths=(2, 2, 6, 2), heads=(3, 6, 12, 24))
_BASE = dict(embed_dim=128, depths=(2, 2, 18, 2), heads=(4, 8, 16, 32))

ARCHS = {
    "swin-t": (SWIN, _TINY),
    "swin-b": (SWIN, _BASE),
    "dwconv-t": (DWCONV, _TINY),
    "dwconv-b": (DWCONV, _BASE),
    "d-dwconv-t": (D_DWCONV, _TINY),
    "d-dwconv-b": (D_DWCONV, _BASE),
}


def build_arch(name: str, input_size: int = 224, predictor_mode: str = PER_CHANNEL) -> ArchSpec:
    try:
        family, dims = ARCHS[name]
    except KeyError:
        raise ConfigurationError(f"unknown architecture {name!r}; choose from {sorted(ARCHS)}") from None
    return assemble(ArchSpec(name=name, family=family, input_size=input_size,
                             predictor_mode=predictor_mode, **dims))


# -- counting ----------------------------------------------------------------------


def _tally(spec: ArchSpec, input_size: int, convention: str = DEFAULT_CONVENTION) -> CountReport:
    if convention not in FLOP_CONVENTIONS:
        raise ConfigurationError(f"unknown FLOP convention {convention!r}")
    if input_size != spec.input_size:
        spec = spec.replace(input_size=input_size)
    entries = []
    for st in spec.stages:
        n = st.resolution * st.resolution
        label = f"stage{st.index}"
        for c in st.downsample:
            entries.append(BreakdownEntry(label, c.name, c.kind, 1, c.params(), c.flops(n, convention)))
        for c in st.block:
            entries.append(BreakdownEntry(label, c.name, c.kind, st.depth,
                                          st.depth * c.params(), st.depth * c.flops(n, convention)))
    for c in spec.head:
        entries.append(BreakdownEntry("head", c.name, c.kind, 1, c.params(), c.flops(1, convention)))
    return CountReport(
        arch=spec.name,
        input_size=input_size,
        params_total=sum(e.params for e in entries),
        flops_total=sum(e.flops for e in entries),
        breakdown=tuple(entries),
        flop_convention=convention,
    )


def count_params(spec: ArchSpec) -> CountReport:
    return _tally(spec, spec.input_size)


def count_flops(spec: ArchSpec, input_size: int = 224, convention: str = DEFAULT_CONVENTION) -> CountReport:
    return _tally(spec, input_size, convention)


def compare(a: ArchSpec, b: ArchSpec, input_size: int = 224, convention: str = DEFAULT_CONVENTION) -> dict:
    """Relative reduction of ``b`` against ``a``, exact and from Table-2-style rounding.

    The rounded figures round params to whole millions and FLOPs to 0.1 G,
    then truncate the percentage to one decimal.
    """
    ra, rb = count_flops(a, input_size, convention), count_flops(b, input_size, convention)

    def pct(x, y):
        return 100.0 * (x - y) / x

    def trunc(v):
        return int(v * 10) / 10.0

    pa, pb = round(ra.params_total / 1e6), round(rb.params_total / 1e6)
    fa, fb = round(ra.flops_total / 1e9, 1), round(rb.flops_total / 1e9, 1)
    return {
        "baseline": a.name,
        "candidate": b.name,
        "input_size": input_size,
        "flop_convention": convention,
        "params": [ra.params_total, rb.params_total],
        "flops": [ra.flops_total, rb.flops_total],
        "params_reduction_pct": pct(ra.params_total, rb.params_total),
        "flops_reduction_pct": pct(ra.flops_total, rb.flops_total),
        "table_params": [f"{pa}M", f"{pb}M"],
        "table_flops": [f"{fa}G", f"{fb}G"],
        "table_params_reduction_pct": trunc(pct(pa, pb)),
        "table_flops_reduction_pct": trunc(pct(fa, fb)),
    }


# -- weight-sharing sweep ------------------------------------------------------------


def sharing_group_sweep(base: ArchSpec, channels_per_group: Sequence[int] = (96, 48, 32, 16, 6)) -> list[ArchSpec]:
    """Variants of a tiny attention net with ``channels_per_group`` channels per head."""
    if base.family != SWIN or base.embed_dim != 96:
        raise ConfigurationError("the sharing sweep starts from a tiny attention network")
    out = []
    for g in channels_per_group:
        bad = [c for c in base.channels if c % g]
        if g < 1 or bad:
            raise GeometryError(f"{g} channels per group does not divide stage widths {bad}")
        heads = tuple(c // g for c in base.channels)
        out.append(base.replace(name=f"{base.name}-g{g}", heads=heads))
    return out


def without_qk_projections(spec: ArchSpec) -> ArchSpec:
    return spec.replace(qk_projections=False, name=f"{spec.name}-noqk")


def analytic_qk_params(spec: ArchSpec) -> int:
    """Parameters of the query and key projections: sum over stages of depth * (2 D^2 + 2 D)."""
    return sum(depth * (2 * d * d + 2 * d) for d, depth in zip(spec.channels, spec.depths))


__all__ = [
    "ARCHS",
    "DEFAULT_CONVENTION",
    "FLOP_CONVENTIONS",
    "MAC",
    "WINDOW_AGGREGATION",
    "ArchSpec",
    "BreakdownEntry",
    "Component",
    "CountReport",
    "Stage",
    "analytic_qk_params",
    "build_arch",
    "compare",
    "count_flops",
    "count_params",
    "sharing_group_sweep",
    "without_qk_projections",
]
