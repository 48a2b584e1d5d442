"""Seeded verification suites and their JSON documents.

Each suite draws its instances from a fixed seed, so a failure reproduces
exactly. Reports flagged ``negative_control`` come from deliberately broken
instances and pass only when the underlying check caught the breakage.
"""

from __future__ import annotations

import time
from typing import Callable, Optional

import numpy as np

from ..errors import ConfigurationError
from ..layers import (
    KINDS,
    LayerParams,
    LayerSpec,
    WindowGeometry,
    elementwise_attention_forward,
    init_params,
    layer_backward,
    position_weights,
    predicted_kernels,
)
from ..layers.spec import (
    DEPTHWISE_CONV,
    DYNAMIC_DEPTHWISE_CONV,
    INHOMOGENEOUS_DYNAMIC_CONV,
    LOCAL_ATTENTION,
    PARTITION,
    POINTWISE_CONV,
    SLIDING,
    STATIC_LOCAL_ATTENTION,
    TOKEN_MIXING_MLP,
)
from ..matrix_forms import layer_dense_operator
from ..tensor import make_rng
from .checks import (
    check_dual_path,
    check_dynamic_vs_static,
    check_equivariance_violation,
    check_kronecker,
    check_locality,
    check_oracle_equivalence,
    check_set_permutation,
    check_sharing_structure,
    check_translation_equivariance,
    corrupt_operator,
)
from .gradcheck import check_gradients
from .report import EXCEEDS, INAPPLICABLE, CheckReport

DEFAULT_SEED = 0


def _map(rng: np.random.Generator, shape, offset: float = 0.0) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=shape) + offset


def _offset(spec: LayerSpec) -> float:
    # a zero-mean map pools to ~0 and starves the kernel predictor
    return 0.5 if spec.kind == DYNAMIC_DEPTHWISE_CONV else 0.0


def _spec(kind: str, channels: int, groups: int, window=(3, 3), padding: str = "circular", **kw) -> LayerSpec:
    mode = PARTITION if kind in (LOCAL_ATTENTION, STATIC_LOCAL_ATTENTION) else SLIDING
    return LayerSpec(kind, channels, groups, WindowGeometry(window[0], window[1], mode, padding), **kw)


def _unbiased(params: LayerParams) -> LayerParams:
    """Drop affine offsets so the layer is linear in its input given its weights."""
    return params.replace(bv=None, bo=None, pw_bias=None)


def _seed_for(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**31 - 1))


def _predictor_live(spec: LayerSpec, params: LayerParams, x: np.ndarray) -> bool:
    if spec.kind == DYNAMIC_DEPTHWISE_CONV:
        k = predicted_kernels(x, spec, params)
        return bool(np.all(np.abs(k).reshape(k.shape[0], -1).max(axis=1) > 0))
    if spec.kind == INHOMOGENEOUS_DYNAMIC_CONV:
        # per-position predictors may idle at some positions, never everywhere
        return bool(np.abs(position_weights(x, spec, params)).max() > 0)
    return True


def _draw_params(spec: LayerSpec, rng: np.random.Generator, x: np.ndarray, spatial=None) -> tuple[LayerParams, int]:
    """Parameters for ``spec``; predictors whose rectifier is dead somewhere are redrawn.

    A dead predictor makes the layer output zero, a degenerate instance that says nothing about the property under test.
    """
    for _ in range(100):
        pseed = _seed_for(rng)
        params = init_params(spec, pseed, spatial=spatial)
        if _predictor_live(spec, params, x):
            return params, pseed
    raise ConfigurationError(f"could not draw a live predictor for {spec.kind}")


# -- dual path ----------------------------------------------------------------------------


def suite_dual_path(seed: int = DEFAULT_SEED, instances: int = 100, layer: Optional[str] = None) -> list[CheckReport]:
    """Per-head and element-wise aggregation on random windowed attention."""
    if layer not in (None, LOCAL_ATTENTION, STATIC_LOCAL_ATTENTION):
        return []
    rng = make_rng(seed)
    grids = [((4, 4), (2, 2)), ((8, 8), (4, 4)), ((12, 12), (3, 3)), ((16, 16), (4, 4)),
             ((6, 12), (3, 6)), ((16, 16), (8, 8)), ((9, 9), (3, 3))]
    reports = []
    for k in range(instances):
        (h, w), win = grids[rng.integers(len(grids))]
        d = int(rng.choice([6, 12, 24, 48, 96]))
        m = int(rng.choice([1, 2, 3, d]))
        spec = _spec(layer or LOCAL_ATTENTION, d, m, win,
                     use_qkv_projections=bool(rng.integers(2)),
                     use_relative_position_bias=bool(rng.integers(2)) and layer != STATIC_LOCAL_ATTENTION)
        pseed = _seed_for(rng)
        params = init_params(spec, pseed, spatial=(h, w))
        x = _map(rng, (int(rng.integers(1, 3)), h, w, d))
        r = check_dual_path(spec, params, x, name=f"dual_path[{k}]")
        r.instance["seed"] = pseed
        reports.append(r)
    # control: the element-wise path shares one weight set across all heads
    spec = _spec(layer or LOCAL_ATTENTION, 12, 3, (4, 4))
    params = init_params(spec, _seed_for(rng), spatial=(8, 8))
    x = _map(rng, (1, 8, 8, 12))

    def one_head(x, spec, params):
        return elementwise_attention_forward(x, spec.replace(heads_or_groups=1), params)

    reports.append(check_dual_path(spec, params, x, elementwise=one_head).negated("dual_path_control:miswired_heads"))
    return reports


# -- dense oracle ----------------------------------------------------------------------------


def _oracle_instances(rng: np.random.Generator):
    """(spec, spatial) pairs covering every kind and its main variants."""
    out = []
    for (h, w), win in ((4, 4), (2, 2)), ((8, 8), (4, 4)), ((6, 6), (3, 3)), ((8, 4), (4, 2)):
        out += [
            (_spec(LOCAL_ATTENTION, 4, 2, win), (h, w)),
            (_spec(LOCAL_ATTENTION, 6, 3, win, use_relative_position_bias=True), (h, w)),
            (_spec(LOCAL_ATTENTION, 4, 1, win, use_qkv_projections=True,
                   use_relative_position_bias=True), (h, w)),
            (_spec(STATIC_LOCAL_ATTENTION, 4, 2, win), (h, w)),
            (_spec(STATIC_LOCAL_ATTENTION, 4, 2, win, use_qkv_projections=True), (h, w)),
            (_spec(DEPTHWISE_CONV, 4, 1, (3, 3), "circular"), (h, w)),
            (_spec(DEPTHWISE_CONV, 4, 1, (3, 3), "zero"), (h, w)),
            (_spec(DYNAMIC_DEPTHWISE_CONV, 8, 2, (3, 3), "circular"), (h, w)),
            (_spec(DYNAMIC_DEPTHWISE_CONV, 8, 2, (3, 3), "zero", predictor_mode="per_group"), (h, w)),
            (_spec(INHOMOGENEOUS_DYNAMIC_CONV, 8, 2, (3, 3), "circular"), (h, w)),
            (_spec(INHOMOGENEOUS_DYNAMIC_CONV, 8, 4, (3, 3), "zero"), (h, w)),
            (_spec(POINTWISE_CONV, 4, 1, (1, 1), out_channels=6), (h, w)),
            (_spec(TOKEN_MIXING_MLP, 4, 1, (1, 1)), (h, w)),
        ]
    out += [
        (_spec(DEPTHWISE_CONV, 3, 1, (5, 5), "circular"), (5, 7)),
        (_spec(DEPTHWISE_CONV, 3, 1, (1, 3), "zero"), (4, 6)),
        (_spec(LOCAL_ATTENTION, 8, 8, (4, 2)), (8, 8)),
        (_spec(INHOMOGENEOUS_DYNAMIC_CONV, 4, 1, (5, 5), "circular"), (5, 5)),
    ]
    return out


def suite_oracle(seed: int = DEFAULT_SEED, layer: Optional[str] = None) -> list[CheckReport]:
    """Every kind against its materialised operator, plus corrupted-operator controls."""
    rng = make_rng(seed)
    reports = []
    controls = set()
    for k, (spec, (h, w)) in enumerate(_oracle_instances(rng)):
        if layer is not None and spec.kind != layer:
            continue
        x = _map(rng, (1, h, w, spec.channels), _offset(spec))
        params, pseed = _draw_params(spec, rng, x, (h, w))
        params = _unbiased(params)
        r = check_oracle_equivalence(spec, params, x, name=f"oracle[{k}]:{spec.kind}")
        r.instance["seed"] = pseed
        reports.append(r)
        if spec.kind not in controls:
            controls.add(spec.kind)
            bad = corrupt_operator(layer_dense_operator(x, spec, params))
            reports.append(check_oracle_equivalence(spec, params, x, operator=bad)
                           .negated(f"oracle_control:{spec.kind}"))
    return reports


# -- kronecker -------------------------------------------------------------------------------


def suite_kronecker(seed: int = DEFAULT_SEED, instances: int = 20) -> list[CheckReport]:
    rng = make_rng(seed)
    reports = []
    for k in range(instances):
        c, n = (int(v) for v in rng.integers(1, 9, size=2))
        d_out, n_out = (int(v) for v in rng.integers(1, 9, size=2))
        a = rng.standard_normal((d_out, c))
        b = rng.standard_normal((n, n_out))
        x = rng.standard_normal(n * c)
        reports.append(check_kronecker(a, b, x, name=f"kronecker[{k}]"))
    a = rng.standard_normal((3, 3))
    b = rng.standard_normal((4, 4))
    x = rng.standard_normal(12)
    # missing transpose on B
    reports.append(check_kronecker(a, b, x, dense=np.kron(b, a)).negated("kronecker_control"))
    return reports


# -- gradients --------------------------------------------------------------------------------


def _grad_instances():
    return [
        (_spec(LOCAL_ATTENTION, 4, 2, (2, 2)), (4, 4)),
        (_spec(LOCAL_ATTENTION, 4, 2, (2, 2), use_qkv_projections=True,
               use_relative_position_bias=True), (4, 4)),
        (_spec(LOCAL_ATTENTION, 6, 3, (3, 3), use_relative_position_bias=True), (3, 6)),
        (_spec(STATIC_LOCAL_ATTENTION, 4, 2, (2, 2), use_qkv_projections=True), (4, 4)),
        (_spec(STATIC_LOCAL_ATTENTION, 4, 1, (2, 2)), (4, 4)),
        (_spec(DEPTHWISE_CONV, 4, 1, (3, 3), "zero"), (4, 5)),
        (_spec(DEPTHWISE_CONV, 4, 1, (3, 3), "circular"), (4, 4)),
        (_spec(DEPTHWISE_CONV, 3, 1, (3, 3), "none"), (5, 5)),
        (_spec(DYNAMIC_DEPTHWISE_CONV, 8, 2, (3, 3), "zero"), (4, 4)),
        (_spec(DYNAMIC_DEPTHWISE_CONV, 8, 2, (3, 3), "circular", predictor_mode="per_group"), (4, 4)),
        (_spec(INHOMOGENEOUS_DYNAMIC_CONV, 8, 2, (3, 3), "zero"), (4, 4)),
        (_spec(INHOMOGENEOUS_DYNAMIC_CONV, 4, 2, (3, 3), "circular"), (4, 4)),
        (_spec(POINTWISE_CONV, 4, 1, (1, 1), out_channels=3), (3, 3)),
        (_spec(TOKEN_MIXING_MLP, 3, 1, (1, 1)), (3, 4)),
    ]


def _broken_backward(spec, params, x, gy):
    gx, grads = layer_backward(spec, params, x, gy)
    return gx * 1.01, grads


def suite_grad(seed: int = DEFAULT_SEED, layer: Optional[str] = None) -> list[CheckReport]:
    """Analytic backward against central differences for every kind."""
    rng = make_rng(seed)
    reports = []
    for k, (spec, (h, w)) in enumerate(_grad_instances()):
        if layer is not None and spec.kind != layer:
            continue
        x = _map(rng, (1, h, w, spec.channels), _offset(spec))
        params, pseed = _draw_params(spec, rng, x, (h, w))
        ho, wo = spec.geometry.output_hw(h, w) if spec.kind in (DEPTHWISE_CONV, DYNAMIC_DEPTHWISE_CONV,
                                                                 INHOMOGENEOUS_DYNAMIC_CONV) else (h, w)
        gy = _map(rng, (1, ho, wo, spec.d_out))
        r = check_gradients(spec, params, x, gy, name=f"grad[{k}]:{spec.kind}")
        r.instance["seed"] = pseed
        reports.append(r)
    if layer in (None, DEPTHWISE_CONV):
        spec = _spec(DEPTHWISE_CONV, 2, 1, (3, 3), "zero")
        params = init_params(spec, 1)
        x = _map(rng, (1, 4, 4, 2))
        gy = _map(rng, (1, 4, 4, 2))
        reports.append(check_gradients(spec, params, x, gy, backward=_broken_backward)
                       .negated("grad_control"))
    return reports


# -- equivariance ------------------------------------------------------------------------------


def suite_equivariance(seed: int = DEFAULT_SEED, layer: Optional[str] = None) -> list[CheckReport]:
    """Cyclic shifts of circular and zero-padded windowed layers, block shifts of attention."""
    rng = make_rng(seed)
    h = w = 8
    shifts = [(a, b) for a in range(h) for b in range(w)]
    reports = []

    def want(kind):
        return layer is None or layer == kind

    for kind, groups in ((DEPTHWISE_CONV, 1), (DYNAMIC_DEPTHWISE_CONV, 2), (INHOMOGENEOUS_DYNAMIC_CONV, 2)):
        if not want(kind):
            continue
        for padding in ("circular", "zero"):
            spec = _spec(kind, 8, groups, (3, 3), padding)
            x = _map(rng, (1, h, w, 8), _offset(spec))
            params, _ = _draw_params(spec, rng, x)
            for s in shifts:
                reports.append(check_translation_equivariance(
                    spec, params, x, s, name=f"equivariance:{kind}:{padding}:{s[0]},{s[1]}"))

    if want(LOCAL_ATTENTION):
        for bias in (False, True):
            spec = _spec(LOCAL_ATTENTION, 6, 2, (4, 4), use_relative_position_bias=bias,
                         use_qkv_projections=True)
            params = init_params(spec, _seed_for(rng), spatial=(h, w))
            x = _map(rng, (1, h, w, 6))
            for s in shifts:
                reports.append(check_translation_equivariance(
                    spec, params, x, s, name=f"equivariance:local_attention:bias={bias}:{s[0]},{s[1]}"))
            reports.append(check_equivariance_violation(
                spec, params, x, (1, 0), name=f"equivariance_witness:local_attention:bias={bias}:1,0"))

    if want(STATIC_LOCAL_ATTENTION):
        # distinct per-window tables break even block shifts
        spec = _spec(STATIC_LOCAL_ATTENTION, 4, 2, (4, 4))
        params = init_params(spec, _seed_for(rng), spatial=(h, w))
        x = _map(rng, (1, h, w, 4))
        reports.append(check_translation_equivariance(spec, params, x, (4, 0))
                       .negated("equivariance_control:static_tables:4,0"))
    return reports


# -- structure --------------------------------------------------------------------------------


def _structure_instances():
    h = w = 6
    return [
        (_spec(LOCAL_ATTENTION, 6, 2, (3, 3)), "local_attention"),
        (_spec(LOCAL_ATTENTION, 6, 3, (6, 6)), "attention"),
        (_spec(DEPTHWISE_CONV, 6, 1, (3, 3), "zero"), "dw_conv"),
        (_spec(DEPTHWISE_CONV, 6, 1, (3, 3), "circular"), "dw_conv"),
        (_spec(DYNAMIC_DEPTHWISE_CONV, 16, 2, (3, 3), "zero"), "d_dw_conv"),
        (_spec(POINTWISE_CONV, 6, 1, (1, 1)), "pointwise_conv"),
        (_spec(TOKEN_MIXING_MLP, 6, 1, (1, 1)), "channel_separable_mlp"),
        (_spec(STATIC_LOCAL_ATTENTION, 6, 2, (3, 3)), "static_local_attention"),
        (_spec(INHOMOGENEOUS_DYNAMIC_CONV, 16, 2, (3, 3), "zero"), "inhomogeneous_dynamic_conv"),
    ], (h, w)


def suite_structure(seed: int = DEFAULT_SEED, layer: Optional[str] = None) -> list[CheckReport]:
    """Sharing and sparsity rows, plus single-position locality probes."""
    rng = make_rng(seed)
    instances, (h, w) = _structure_instances()
    reports = []
    for spec, row in instances:
        if layer is not None and spec.kind != layer:
            continue
        x = _map(rng, (1, h, w, spec.channels), _offset(spec))
        params, pseed = _draw_params(spec, rng, x, (h, w))
        params = _unbiased(params)
        r = check_sharing_structure(spec, params, x, row=row, seed=pseed, name=f"structure:{row}")
        r.instance["seed"] = pseed
        reports.append(r)
        for pos in ((0, 0), (2, 3), (h - 1, w - 2)):
            lr = check_locality(spec, params, x, pos, name=f"locality:{row}:{pos[0]},{pos[1]}")
            if lr.status != INAPPLICABLE:
                reports.append(lr)
    if layer in (None, LOCAL_ATTENTION):
        spec = _spec(LOCAL_ATTENTION, 6, 2, (3, 3))
        params = init_params(spec, 3)
        x = _map(rng, (1, h, w, 6))
        reports.append(check_sharing_structure(spec, params, x, row="dw_conv")
                       .negated("structure_control:local_attention_as_dw_conv"))
    if layer in (None, DEPTHWISE_CONV):
        spec = _spec(DEPTHWISE_CONV, 2, 1, (5, 5), "zero")
        params = init_params(spec, 4)
        x = _map(rng, (1, h, w, 2))
        reports.append(check_locality(spec, params, x, (2, 2), declared=WindowGeometry(3, 3))
                       .negated("locality_control:5x5_declared_3x3"))
    return reports


# -- set representation --------------------------------------------------------------------------


def suite_set(seed: int = DEFAULT_SEED, instances: int = 10) -> list[CheckReport]:
    """Slot permutations inside windows, with and without a relative-position bias."""
    rng = make_rng(seed)
    reports = []
    for k in range(instances):
        d = int(rng.choice([4, 6, 12]))
        m = int(rng.choice([1, 2]))
        spec = _spec(LOCAL_ATTENTION, d, m, (3, 3), use_qkv_projections=bool(k % 2))
        params = init_params(spec, _seed_for(rng))
        x = _map(rng, (1, 6, 9, d))
        perm = rng.permutation(9)
        reports.append(check_set_permutation(spec, params, x, perm, name=f"set[{k}]:bias=off"))
    spec = _spec(LOCAL_ATTENTION, 4, 2, (3, 3), use_relative_position_bias=True)
    params = init_params(spec, _seed_for(rng))
    x = _map(rng, (1, 6, 6, 4))
    perm = np.array([1, 0, 2, 3, 4, 5, 6, 7, 8])
    reports.append(check_set_permutation(spec, params, x, perm, expect=EXCEEDS,
                                         name="set_counterexample:bias=on"))
    # control: the invariance check itself must fail once the bias ties weights to slots
    reports.append(check_set_permutation(spec, params, x, perm).negated("set_control:bias=on"))
    return reports


# -- dynamic versus static ---------------------------------------------------------------------


def suite_dynamic(seed: int = DEFAULT_SEED, layer: Optional[str] = None) -> list[CheckReport]:
    rng = make_rng(seed)
    h = w = 6
    specs = [
        _spec(LOCAL_ATTENTION, 6, 2, (3, 3)),
        _spec(STATIC_LOCAL_ATTENTION, 6, 2, (3, 3)),
        _spec(DEPTHWISE_CONV, 6, 1, (3, 3)),
        _spec(DYNAMIC_DEPTHWISE_CONV, 16, 2, (3, 3)),
        _spec(INHOMOGENEOUS_DYNAMIC_CONV, 6, 2, (3, 3)),
        _spec(POINTWISE_CONV, 6, 1, (1, 1)),
        _spec(TOKEN_MIXING_MLP, 6, 1, (1, 1)),
    ]
    reports = []
    for spec in specs:
        if layer is not None and spec.kind != layer:
            continue
        x1 = _map(rng, (1, h, w, spec.channels), _offset(spec))
        x2 = _map(rng, (1, h, w, spec.channels), _offset(spec))
        params, _ = _draw_params(spec, rng, np.concatenate([x1, x2]), (h, w))
        reports.append(check_dynamic_vs_static(spec, params, (x1, x2), name=f"dynamic:{spec.kind}"))
    if layer in (None, DYNAMIC_DEPTHWISE_CONV):
        # pooling cannot see a spatial rearrangement
        spec = specs[3]
        x1 = _map(rng, (1, h, w, spec.channels), 0.5)
        params, _ = _draw_params(spec, rng, x1)
        flat = x1.reshape(1, h * w, -1)
        x2 = flat[:, rng.permutation(h * w)].reshape(x1.shape)
        reports.append(check_dynamic_vs_static(spec, params, (x1, x2), expect_dynamic=False,
                                               name="dynamic:gap_spatial_permutation"))
    if layer in (None, LOCAL_ATTENTION):
        spec = specs[0]
        params = init_params(spec, 5)
        x1, x2 = _map(rng, (1, h, w, 6)), _map(rng, (1, h, w, 6))
        reports.append(check_dynamic_vs_static(spec, params, (x1, x2), expect_dynamic=False)
                       .negated("dynamic_control:attention_claimed_static"))
    return reports


# -- registry ------------------------------------------------------------------------------------

SUITES: dict[str, Callable[..., list[CheckReport]]] = {
    "dual_path": suite_dual_path,
    "oracle": suite_oracle,
    "kronecker": suite_kronecker,
    "grad": suite_grad,
    "equivariance": suite_equivariance,
    "structure": suite_structure,
    "set": suite_set,
    "dynamic": suite_dynamic,
}
_LAYER_AWARE = {"dual_path", "oracle", "grad", "equivariance", "structure", "dynamic"}


def suite_passed(reports: list[CheckReport]) -> bool:
    return all(r.status != "fail" for r in reports)


def run_suite(name: str, seed: int = DEFAULT_SEED, layer: Optional[str] = None) -> dict:
    """Run one suite and return its JSON document."""
    if name not in SUITES:
        raise ConfigurationError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    if layer is not None and layer not in KINDS:
        raise ConfigurationError(f"unknown layer kind {layer!r}")
    kwargs = {"seed": seed}
    if name in _LAYER_AWARE:
        kwargs["layer"] = layer
    start = time.perf_counter()
    reports = SUITES[name](**kwargs)
    elapsed = time.perf_counter() - start
    counts = {s: sum(r.status == s for r in reports) for s in ("pass", "fail", "inapplicable")}
    return {
        "suite": name,
        "seed": seed,
        "layer": layer,
        "passed": suite_passed(reports),
        "counts": counts,
        "seconds": round(elapsed, 4),
        "reports": [r.to_dict() for r in reports],
    }


def run_suites(names=None, seed: int = DEFAULT_SEED, layer: Optional[str] = None) -> dict:
    """Run several suites (all by default) into one document."""
    names = list(names or SUITES)
    docs = [run_suite(n, seed, layer) for n in names]
    return {"seed": seed, "layer": layer, "passed": all(d["passed"] for d in docs), "suites": docs}
