"""Property checkers: dense-oracle equivalence, equivariance, sharing structure.

Every checker returns a :class:`CheckReport`; none raises on a failed
property. Randomness, where needed, comes from an explicit seed.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ConfigurationError, GeometryError
from ..layers import (
    ATTENTION_KINDS,
    KINDS,
    LayerParams,
    LayerSpec,
    elementwise_attention_forward,
    extract_dynamic_weights,
    layer_forward,
    local_attention_forward,
)
from ..layers.spec import (
    DEPTHWISE_CONV,
    DYNAMIC_DEPTHWISE_CONV,
    INHOMOGENEOUS_DYNAMIC_CONV,
    LOCAL_ATTENTION,
    PARTITION,
    POINTWISE_CONV,
    STATIC_LOCAL_ATTENTION,
    TOKEN_MIXING_MLP,
    WINDOWED_CONV_KINDS,
)
from ..layers.windows import merge, partition
from ..matrix_forms import (
    CHANNEL_MAJOR,
    DenseOperator,
    apply_to_map,
    kronecker_apply,
    layer_dense_operator,
    to_layout,
)
from .report import EXCEEDS, WITHIN, CheckReport

ORACLE_TOLERANCE = 1e-10
EXACT_TOLERANCE = 1e-12


def _describe(spec: LayerSpec, x: np.ndarray, **extra) -> dict:
    g = spec.geometry
    return {
        "kind": spec.kind,
        "shape": list(x.shape),
        "heads_or_groups": spec.heads_or_groups,
        "window": [g.window_h, g.window_w],
        "padding": g.padding,
        **extra,
    }


def _max_diff(a: np.ndarray, b: np.ndarray) -> float:
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)))


# -- dense oracle --------------------------------------------------------------------


def corrupt_operator(op: DenseOperator, delta: float = 1.0, index: Optional[tuple[int, int]] = None) -> DenseOperator:
    """Copy of ``op`` with one entry moved by ``delta``; a harness self-test."""
    m = op.matrix.copy()
    i, j = index if index is not None else (0, 0)
    m[i, j] += delta
    return DenseOperator(m, op.layout, f"corrupted({op.provenance})", op.positions,
                         op.channels_in, op.channels_out, op.mask)


def check_oracle_equivalence(
    spec: LayerSpec,
    params: LayerParams,
    x: np.ndarray,
    operator: Optional[DenseOperator] = None,
    tolerance: float = ORACLE_TOLERANCE,
    name: str = "oracle",
) -> CheckReport:
    """max |layer_forward(x) - W x| for the materialised operator W.

    Raises :class:`ConfigurationError` when no constructor covers ``spec``.
    """
    if spec.kind not in KINDS:
        raise ConfigurationError(f"no dense constructor for {spec.kind!r}")
    if x.ndim == 3:
        x = x[None]
    op = operator if operator is not None else layer_dense_operator(x, spec, params)
    diff = _max_diff(layer_forward(x, spec, params), apply_to_map(op, x))
    return CheckReport.judge(name, diff, tolerance, **_describe(spec, x, provenance=op.provenance))


def check_dual_path(spec: LayerSpec, params: LayerParams, x: np.ndarray,
                    tolerance: float = EXACT_TOLERANCE, name: str = "dual_path",
                    elementwise: Optional[Callable] = None) -> CheckReport:
    """Per-head aggregation against the element-wise form with expanded weights.

    ``elementwise`` replaces the element-wise path; the negative control
    passes one with miswired heads.
    """
    if spec.kind not in ATTENTION_KINDS:
        raise ConfigurationError(f"{spec.kind} has no attention aggregation")
    elementwise = elementwise or elementwise_attention_forward
    diff = _max_diff(local_attention_forward(x, spec, params), elementwise(x, spec, params))
    return CheckReport.judge(name, diff, tolerance, **_describe(spec, x))


def check_kronecker(a: np.ndarray, b: np.ndarray, x: np.ndarray,
                    tolerance: float = EXACT_TOLERANCE, dense: Optional[np.ndarray] = None,
                    name: str = "kronecker") -> CheckReport:
    """vec(A mat(x) B) against the explicit (B^T kron A) x.

    ``dense`` replaces the explicit matrix, which is how a wrong factorisation
    is fed in as a negative control.
    """
    if dense is None:
        dense = np.kron(b.T, a)
    dense = dense @ x
    diff = _max_diff(kronecker_apply(a, b, x), dense)
    return CheckReport.judge(name, diff, tolerance, a=list(a.shape), b=list(b.shape))


# -- translation ------------------------------------------------------------------------


def _shift(t: np.ndarray, shift: Sequence[int]) -> np.ndarray:
    return np.roll(t, tuple(shift), axis=(1, 2))


def interior_mask(h: int, w: int, radius: tuple[int, int], shift: Sequence[int]) -> np.ndarray:
    """Output positions where zero padding cannot tell a roll from a translation.

    Position p qualifies when neither p's window nor the window at p - shift
    touches the border, so both read only genuine map values.
    """
    rh, rw = radius
    rows = np.arange(h)
    cols = np.arange(w)
    ok_r = (rows >= rh) & (rows < h - rh)
    ok_c = (cols >= rw) & (cols < w - rw)
    src_r = ok_r[(rows - shift[0]) % h]
    src_c = ok_c[(cols - shift[1]) % w]
    return np.outer(ok_r & src_r, ok_c & src_c)


def equivariance_gap(spec: LayerSpec, params: LayerParams, x: np.ndarray, shift: Sequence[int]) -> np.ndarray:
    """|forward(shift(x)) - shift(forward(x))| at every output element."""
    return np.abs(layer_forward(_shift(x, shift), spec, params) - _shift(layer_forward(x, spec, params), shift))


def check_translation_equivariance(
    spec: LayerSpec,
    params: LayerParams,
    x: np.ndarray,
    shift: Sequence[int],
    tolerance: float = EXACT_TOLERANCE,
    name: str = "equivariance",
) -> CheckReport:
    """Compare forward(shift(x)) with shift(forward(x)) on the region where it should hold.

    Circular depth-wise layers and point-wise layers use the full map,
    zero-padded ones an interior margin, and partitioned attention the full map
    for shifts that are whole multiples of the window. Other attention shifts
    are reported as inapplicable.
    """
    shift = tuple(int(s) for s in shift)
    _, h, w, _ = x.shape
    g = spec.geometry
    info = _describe(spec, x, shift=list(shift))
    if abs(shift[0]) >= h or abs(shift[1]) >= w:
        raise GeometryError(f"shift {shift} out of bounds for a {h}x{w} map")
    if spec.kind in ATTENTION_KINDS:
        if shift[0] % g.window_h or shift[1] % g.window_w:
            return CheckReport.inapplicable(
                name, "partitioned attention is only equivariant to window-multiple shifts", tolerance, **info)
        region = np.ones((h, w), bool)
    elif spec.kind in WINDOWED_CONV_KINDS:
        if g.padding == "none":
            return CheckReport.inapplicable(name, "valid padding changes the output extent", tolerance, **info)
        if g.padding == "circular":
            region = np.ones((h, w), bool)
        else:
            region = interior_mask(h, w, g.radius, shift)
    elif spec.kind == POINTWISE_CONV:
        region = np.ones((h, w), bool)
    else:
        return CheckReport.inapplicable(name, f"{spec.kind} has no translation structure", tolerance, **info)
    if not region.any():
        return CheckReport.inapplicable(name, "no interior positions survive this shift", tolerance, **info)
    gap = equivariance_gap(spec, params, x, shift)
    metric = float(gap[:, region].max())
    return CheckReport.judge(name, metric, tolerance, region_positions=int(region.sum()), **info)


def check_equivariance_violation(
    spec: LayerSpec,
    params: LayerParams,
    x: np.ndarray,
    shift: Sequence[int],
    tolerance: float = EXACT_TOLERANCE,
    name: str = "equivariance_violation",
) -> CheckReport:
    """Witness that a shift breaks equivariance: passes iff the full-map gap exceeds ``tolerance``."""
    metric = float(equivariance_gap(spec, params, x, shift).max())
    return CheckReport.judge(name, metric, tolerance, EXCEEDS, **_describe(spec, x, shift=list(shift)))


# -- set representation ---------------------------------------------------------------


def permute_window_slots(x: np.ndarray, kh: int, kw: int, perm: Sequence[int]) -> np.ndarray:
    """Reorder the Kh*Kw positions inside every window by ``perm``."""
    xw = partition(x, kh, kw)
    return merge(xw[:, :, :, np.asarray(perm)], kh, kw)


def check_set_permutation(
    spec: LayerSpec,
    params: LayerParams,
    x: np.ndarray,
    perm: Sequence[int],
    tolerance: float = EXACT_TOLERANCE,
    expect: str = WITHIN,
    name: str = "set_permutation",
) -> CheckReport:
    """Within-window attention treats a window as a set of slots.

    Permuting the slots of every window must permute the output the same way.
    ``expect=EXCEEDS`` turns the report into a counterexample witness, used
    when a relative-position bias ties weights to slot positions.
    """
    if spec.kind not in ATTENTION_KINDS:
        raise ConfigurationError("slot permutation applies to partitioned attention")
    g = spec.geometry
    y = layer_forward(permute_window_slots(x, g.window_h, g.window_w, perm), spec, params)
    ref = permute_window_slots(layer_forward(x, spec, params), g.window_h, g.window_w, perm)
    return CheckReport.judge(name, _max_diff(y, ref), tolerance, expect,
                             **_describe(spec, x, perm=[int(p) for p in perm],
                                         relative_position_bias=params.rel_bias is not None))


# -- dynamic versus static -------------------------------------------------------------


DYNAMIC_KINDS = (LOCAL_ATTENTION, DYNAMIC_DEPTHWISE_CONV, INHOMOGENEOUS_DYNAMIC_CONV)


def connection_weights(x: np.ndarray, spec: LayerSpec, params: LayerParams) -> np.ndarray:
    """Windowed weights where the kind has them, else the stored mixing matrix."""
    if spec.kind == POINTWISE_CONV:
        params.require("pw")
        return params.pw
    if spec.kind == TOKEN_MIXING_MLP:
        params.require("wc")
        return params.wc
    return np.asarray(extract_dynamic_weights(x, spec, params))


def check_dynamic_vs_static(
    spec: LayerSpec,
    params: LayerParams,
    inputs: Sequence[np.ndarray],
    expect_dynamic: Optional[bool] = None,
    tolerance: float = EXACT_TOLERANCE,
    name: str = "dynamic_vs_static",
) -> CheckReport:
    """Do the connection weights change between two inputs?

    Dynamic kinds must produce weights differing by more than ``tolerance``;
    static ones weights equal within it (summation order can leave round-off). ``expect_dynamic`` overrides the default taken from the
    kind, e.g. for input pairs a dynamic predictor cannot tell apart.
    """
    x1, x2 = inputs
    if np.array_equal(x1, x2):
        raise ConfigurationError("the two inputs must differ")
    if expect_dynamic is None:
        expect_dynamic = spec.kind in DYNAMIC_KINDS
    diff = _max_diff(connection_weights(x1, spec, params), connection_weights(x2, spec, params))
    return CheckReport.judge(name, diff, tolerance, EXCEEDS if expect_dynamic else WITHIN,
                             **_describe(spec, x1, expect_dynamic=expect_dynamic))


# -- sharing and sparsity -------------------------------------------------------------

PROPERTIES = ("local", "full", "channel_sparse", "share_position", "share_channel", "dynamic")

# Rows of the layer comparison table. "local" marks sparsity between
# non-local positions, "full" a layer with no spatial connections at all.
TABLE1 = {
    "local_attention": dict(local=True, full=False, channel_sparse=True,
                            share_position=False, share_channel=True, dynamic=True),
    "attention": dict(local=False, full=False, channel_sparse=True,
                      share_position=False, share_channel=True, dynamic=True),
    "dw_conv": dict(local=True, full=False, channel_sparse=True,
                    share_position=True, share_channel=False, dynamic=False),
    "d_dw_conv": dict(local=True, full=False, channel_sparse=True,
                      share_position=True, share_channel=False, dynamic=True),
    "channel_separable_mlp": dict(local=False, full=False, channel_sparse=True,
                                  share_position=False, share_channel=True, dynamic=False),
    "pointwise_conv": dict(local=False, full=True, channel_sparse=False,
                           share_position=True, share_channel=False, dynamic=False),
}

# Kinds outside the table, with rows read off their definitions.
EXTRA_ROWS = {
    "static_local_attention": dict(local=True, full=False, channel_sparse=True,
                                   share_position=False, share_channel=True, dynamic=False),
    "inhomogeneous_dynamic_conv": dict(local=True, full=False, channel_sparse=True,
                                       share_position=False, share_channel=True, dynamic=True),
}


def table_row(spec: LayerSpec, spatial: tuple[int, int]) -> str:
    """Name of the row describing ``spec`` on a map of size ``spatial``."""
    g = spec.geometry
    if spec.kind == LOCAL_ATTENTION:
        whole = (g.window_h, g.window_w) == tuple(spatial)
        return "attention" if whole else "local_attention"
    return {
        STATIC_LOCAL_ATTENTION: "static_local_attention",
        DEPTHWISE_CONV: "dw_conv",
        DYNAMIC_DEPTHWISE_CONV: "d_dw_conv",
        INHOMOGENEOUS_DYNAMIC_CONV: "inhomogeneous_dynamic_conv",
        POINTWISE_CONV: "pointwise_conv",
        TOKEN_MIXING_MLP: "channel_separable_mlp",
    }[spec.kind]


def expected_row(name: str) -> dict:
    if name in TABLE1:
        return TABLE1[name]
    if name in EXTRA_ROWS:
        return EXTRA_ROWS[name]
    raise ConfigurationError(f"unknown table row {name!r}")


def _blocks(op: DenseOperator) -> np.ndarray:
    """Channel-major operator as (C_out, C_in, N, N) blocks."""
    op = to_layout(op, CHANNEL_MAJOR)
    n = op.positions
    return op.matrix.reshape(op.channels_out, n, op.channels_in, n).transpose(0, 2, 1, 3)


def _window_support(spec: LayerSpec, h: int, w: int) -> np.ndarray:
    """(N, N) boolean: may output position i read input position j?"""
    g = spec.geometry
    n = h * w
    s = np.zeros((n, n), bool)
    for i in range(n):
        r, c = divmod(i, w)
        if g.mode == PARTITION:
            r0, c0 = r - r % g.window_h, c - c % g.window_w
            for rr in range(r0, r0 + g.window_h):
                for cc in range(c0, c0 + g.window_w):
                    s[i, rr * w + cc] = True
        else:
            for dy, dx in g.offsets():
                rr, cc = r + dy, c + dx
                if g.padding == "circular":
                    rr, cc = rr % h, cc % w
                elif not (0 <= rr < h and 0 <= cc < w):
                    continue
                s[i, rr * w + cc] = True
    return s


def _groups_constant(weights: np.ndarray, groups: int) -> bool:
    """Weights (..., D) identical inside each of ``groups`` contiguous channel groups."""
    d = weights.shape[-1]
    if groups == d:
        return False
    g = weights.reshape(*weights.shape[:-1], groups, d // groups)
    return bool(np.max(np.abs(g - g[..., :1])) <= EXACT_TOLERANCE)


def measure_structure(spec: LayerSpec, params: LayerParams, x: np.ndarray, seed: int = 0) -> dict:
    """Measure every table property on one instance.

    Spatial and channel sparsity are read off the per-instance dense
    operator, sharing off the extracted connection weights, and dynamism from
    a second random input.
    """
    if x.ndim == 3:
        x = x[None]
    x = x[:1]
    _, h, w, c = x.shape
    # offsets do not change the connection pattern
    op = layer_dense_operator(x, spec, params.replace(bv=None, bo=None, pw_bias=None))
    blocks = _blocks(op)
    nz = np.abs(blocks) > 0
    spatial = nz.any(axis=(0, 1))
    cross = nz & ~np.eye(c, dtype=bool)[:, :, None, None]
    n = h * w
    full = bool(not (spatial & ~np.eye(n, dtype=bool)).any())
    local = False  # mixing layers have no window
    if spec.kind in ATTENTION_KINDS or spec.kind in WINDOWED_CONV_KINDS:
        support = _window_support(spec, h, w)
        local = bool(not support.all() and not (spatial & ~support).any())
    measured = {
        "local": local,
        "full": full,
        "channel_sparse": bool(not cross.any()),
    }
    if spec.kind in (POINTWISE_CONV, TOKEN_MIXING_MLP):
        diag = np.stack([blocks[:, :, i, i] for i in range(n)])  # (N, C_out, C_in)
        measured["share_position"] = bool(
            spec.kind == POINTWISE_CONV and np.max(np.abs(diag - diag[:1])) <= EXACT_TOLERANCE
        )
        own = np.stack([blocks[d, d] for d in range(c)])  # (C, N, N)
        measured["share_channel"] = bool(
            c > 1 and not cross.any() and np.max(np.abs(own - own[:1])) <= EXACT_TOLERANCE
        )
    else:
        wts = np.asarray(extract_dynamic_weights(x, spec, params))[0]  # (Ho, Wo, Nk, D)
        measured["share_position"] = bool(np.max(np.abs(wts - wts[:1, :1])) <= EXACT_TOLERANCE)
        groups = spec.heads_or_groups
        if spec.kind in (DEPTHWISE_CONV, DYNAMIC_DEPTHWISE_CONV) and spec.predictor_mode == "per_channel":
            groups = c
        measured["share_channel"] = _groups_constant(wts, groups) if c > 1 else False
    rng = np.random.default_rng(seed)
    x2 = x + rng.uniform(-1.0, 1.0, size=x.shape)
    measured["dynamic"] = bool(
        _max_diff(connection_weights(x, spec, params), connection_weights(x2, spec, params)) > 0
    )
    return measured


def check_sharing_structure(
    spec: LayerSpec,
    params: LayerParams,
    x: np.ndarray,
    row: Optional[str] = None,
    seed: int = 0,
    name: str = "sharing_structure",
) -> CheckReport:
    """Measured sparsity/sharing/dynamism against one table row.

    ``row`` defaults to the row for ``spec.kind``; passing another row is how
    the negative control is built. The metric counts mismatched properties.
    """
    row = row or table_row(spec, x.shape[1:3])
    want = expected_row(row)
    got = measure_structure(spec, params, x, seed)
    mismatched = [p for p in PROPERTIES if want[p] != got[p]]
    return CheckReport.judge(name, len(mismatched), 0, **_describe(
        spec, x, row=row, expected=want, measured=got, mismatched=mismatched))


# -- locality probes ----------------------------------------------------------------------


def check_locality(
    spec: LayerSpec,
    params: LayerParams,
    x: np.ndarray,
    position: tuple[int, int],
    delta: float = 1.0,
    tolerance: float = EXACT_TOLERANCE,
    declared=None,
    name: str = "locality",
) -> CheckReport:
    """Perturb one input position and measure the output change outside its reach.

    The reach is every output position whose window contains the perturbed
    one. A layer whose weights pool the whole map (the homogeneous dynamic
    predictor) is reported inapplicable: its locality holds only once the
    weights are fixed, which the dense operator covers. ``declared`` replaces
    the window used for the reach; a too-small one makes a negative control.
    """
    _, h, w, _ = x.shape
    info = _describe(spec, x, position=list(position))
    if spec.kind == DYNAMIC_DEPTHWISE_CONV:
        return CheckReport.inapplicable(name, "kernel predictor pools the whole map", tolerance, **info)
    if spec.kind not in ATTENTION_KINDS and spec.kind not in WINDOWED_CONV_KINDS:
        return CheckReport.inapplicable(name, f"{spec.kind} has no window", tolerance, **info)
    if spec.geometry.padding == "none" and spec.kind in WINDOWED_CONV_KINDS:
        return CheckReport.inapplicable(name, "valid padding changes the output extent", tolerance, **info)
    r, c = position
    xp = x.copy()
    xp[:, r, c, :] += delta
    change = np.abs(layer_forward(xp, spec, params) - layer_forward(x, spec, params)).max(axis=(0, 3))
    probe = spec if declared is None else spec.replace(geometry=declared)
    reach = _window_support(probe, h, w)[:, r * w + c].reshape(h, w)
    outside = float(change[~reach].max()) if (~reach).any() else 0.0
    inside = float(change[reach].max())
    report = CheckReport.judge(name, outside, tolerance, **info, change_inside=inside)
    if inside <= tolerance:
        return CheckReport(name, "fail", outside, tolerance, WITHIN, {**report.instance, "reason": "perturbation had no effect"})
    return report
