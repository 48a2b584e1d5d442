"""Window attention (dynamic softmax weights) and its static-table variant.

Maps are (B, H, W, D). Windows are the non-overlapping Kh x Kw blocks of the
map; inside a window slots are numbered in raster order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from .spec import LOCAL_ATTENTION, STATIC_LOCAL_ATTENTION, LayerParams, LayerSpec
from .windows import check_map, expand_groups, merge, partition


@dataclass(frozen=True)
class AttentionWeights:
    """Softmax weights a_ijm per output position.

    ``weights`` is (B, H, W, M, Nk): for the query at (h, w), head m and
    window slot j. ``log_normalizer`` is log Z_i with shape (B, H, W, M).
    ``windowed`` keeps the (B, nWh, nWw, M, Nk, Nk) form used internally.
    """

    weights: np.ndarray
    log_normalizer: np.ndarray
    windowed: np.ndarray

    @property
    def normalizer(self) -> np.ndarray:
        return np.exp(self.log_normalizer)

    def expanded(self, channels: int) -> np.ndarray:
        """w_ij as (B, H, W, Nk, D), replicated over each head's channel group."""
        return expand_groups(np.swapaxes(self.weights, -1, -2), channels)


def relative_position_index(kh: int, kw: int) -> np.ndarray:
    """(Nk, Nk) table index of offset 2D(j) - 2D(i) for query slot i, key slot j."""
    u, v = np.divmod(np.arange(kh * kw), kw)
    dy = u[None, :] - u[:, None]
    dx = v[None, :] - v[:, None]
    return (dy + kh - 1) * (2 * kw - 1) + (dx + kw - 1)


def _linear(x, w, b):
    y = x @ w
    return y if b is None else y + b


def _split_heads(t: np.ndarray, m: int) -> np.ndarray:
    return t.reshape(*t.shape[:-1], m, t.shape[-1] // m)


def _merge_heads(t: np.ndarray) -> np.ndarray:
    return t.reshape(*t.shape[:-2], t.shape[-2] * t.shape[-1])


def _window_to_positions(a: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(B, nWh, nWw, M, Nk_i, Nk_j) -> (B, H, W, M, Nk_j)."""
    b, nh, nw, m, nk, _ = a.shape
    t = a.transpose(0, 1, 2, 4, 3, 5).reshape(b, nh, nw, nk, m * nk)
    return merge(t, kh, kw).reshape(b, nh * kh, nw * kw, m, nk)


def _check(spec: LayerSpec, x: np.ndarray) -> None:
    check_map(x, spec.channels)
    spec.geometry.validate(x.shape[1], x.shape[2])


def _queries_keys_values(spec: LayerSpec, params: LayerParams, x: np.ndarray):
    if spec.use_qkv_projections:
        params.require("wq", "wk", "wv")
        return (
            _linear(x, params.wq, params.bq),
            _linear(x, params.wk, params.bk),
            _linear(x, params.wv, params.bv),
        )
    return x, x, x


def _values(spec: LayerSpec, params: LayerParams, x: np.ndarray) -> np.ndarray:
    if spec.use_qkv_projections:
        params.require("wv")
        return _linear(x, params.wv, params.bv)
    return x


def _logits(spec: LayerSpec, params: LayerParams, q: np.ndarray, k: np.ndarray) -> np.ndarray:
    g = spec.geometry
    m = spec.heads_or_groups
    qw = _split_heads(partition(q, g.window_h, g.window_w), m)
    kw = _split_heads(partition(k, g.window_h, g.window_w), m)
    scale = 1.0 / float(np.sqrt(spec.group_size))
    logits = np.einsum("...imd,...jmd->...mij", qw, kw) * scale
    if spec.use_relative_position_bias:
        if params.rel_bias is None:
            raise ShapeError("relative position bias enabled but no bias table given")
        expected = ((2 * g.window_h - 1) * (2 * g.window_w - 1), m)
        if params.rel_bias.shape != expected:
            raise ShapeError(f"bias table shape {params.rel_bias.shape}, expected {expected}")
        idx = relative_position_index(g.window_h, g.window_w)
        logits = logits + np.moveaxis(params.rel_bias[idx], -1, 0)
    return logits


def _softmax(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    top = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - top)
    s = e.sum(axis=-1, keepdims=True)
    return e / s, (np.log(s) + top)[..., 0]


def attention_weights(x: np.ndarray, spec: LayerSpec, params: LayerParams) -> AttentionWeights:
    _check(spec, x)
    g = spec.geometry
    q, k, _ = _queries_keys_values(spec, params, x)
    a, log_z = _softmax(_logits(spec, params, q, k))
    b, nh, nw, m, nk, _ = a.shape
    log_z_map = merge(log_z.transpose(0, 1, 2, 4, 3), g.window_h, g.window_w)
    return AttentionWeights(_window_to_positions(a, g.window_h, g.window_w), log_z_map, a)


def _static_windowed(spec: LayerSpec, params: LayerParams, x: np.ndarray) -> np.ndarray:
    params.require("window_table")
    g = spec.geometry
    b, h, w, _ = x.shape
    expected = (h // g.window_h, w // g.window_w, spec.heads_or_groups, g.nk, g.nk)
    if params.window_table.shape != expected:
        raise ShapeError(f"window table shape {params.window_table.shape}, expected {expected}")
    return np.broadcast_to(params.window_table, (b,) + expected)


def _aggregate_heads(spec: LayerSpec, a: np.ndarray, v: np.ndarray) -> np.ndarray:
    """y_im = sum_j a_ijm x_ijm, one head at a time."""
    g = spec.geometry
    vw = _split_heads(partition(v, g.window_h, g.window_w), spec.heads_or_groups)
    yw = np.einsum("...mij,...jmd->...imd", a, vw)
    return merge(_merge_heads(yw), g.window_h, g.window_w)


def _aggregate_elementwise(spec: LayerSpec, a: np.ndarray, v: np.ndarray) -> np.ndarray:
    """y_i = sum_j w_ij (elementwise) x_ij with w_ij expanded over channel groups."""
    g = spec.geometry
    vw = partition(v, g.window_h, g.window_w)
    w = expand_groups(np.moveaxis(a, 3, -1), spec.channels)  # (B, nWh, nWw, i, j, D)
    yw = (w * vw[:, :, :, None, :, :]).sum(axis=4)
    return merge(yw, g.window_h, g.window_w)


def _output(spec: LayerSpec, params: LayerParams, y: np.ndarray) -> np.ndarray:
    if spec.use_qkv_projections:
        params.require("wo")
        return _linear(y, params.wo, params.bo)
    return y


def _windowed_weights(spec: LayerSpec, params: LayerParams, x: np.ndarray) -> np.ndarray:
    if spec.kind == STATIC_LOCAL_ATTENTION:
        return _static_windowed(spec, params, x)
    return attention_weights(x, spec, params).windowed


def local_attention_forward(x: np.ndarray, spec: LayerSpec, params: LayerParams) -> np.ndarray:
    _check(spec, x)
    a = _windowed_weights(spec, params, x)
    return _output(spec, params, _aggregate_heads(spec, a, _values(spec, params, x)))


def elementwise_attention_forward(x: np.ndarray, spec: LayerSpec, params: LayerParams) -> np.ndarray:
    _check(spec, x)
    a = _windowed_weights(spec, params, x)
    return _output(spec, params, _aggregate_elementwise(spec, a, _values(spec, params, x)))


def static_local_attention_forward(x: np.ndarray, spec: LayerSpec, params: LayerParams) -> np.ndarray:
    if spec.kind != STATIC_LOCAL_ATTENTION:
        spec = spec.replace(kind=STATIC_LOCAL_ATTENTION)
    return elementwise_attention_forward(x, spec, params)


def _linear_backward(x, w, gy, grads, wname, bname, has_bias):
    grads[wname] = x.reshape(-1, x.shape[-1]).T @ gy.reshape(-1, gy.shape[-1])
    if has_bias:
        grads[bname] = gy.reshape(-1, gy.shape[-1]).sum(axis=0)
    return gy @ w.T


def attention_backward(spec: LayerSpec, params: LayerParams, x: np.ndarray, gy: np.ndarray):
    _check(spec, x)
    g = spec.geometry
    kh, kw, m = g.window_h, g.window_w, spec.heads_or_groups
    grads: dict[str, np.ndarray] = {}
    static = spec.kind == STATIC_LOCAL_ATTENTION

    if static:
        q = k = None
        v = _values(spec, params, x)
        a = _static_windowed(spec, params, x)
    else:
        q, k, v = _queries_keys_values(spec, params, x)
        a, _ = _softmax(_logits(spec, params, q, k))

    if spec.use_qkv_projections:
        y_pre = _aggregate_heads(spec, a, v)
        gy = _linear_backward(y_pre, params.wo, gy, grads, "wo", "bo", params.bo is not None)

    gyw = _split_heads(partition(gy, kh, kw), m)
    vw = _split_heads(partition(v, kh, kw), m)
    ga = np.einsum("...imd,...jmd->...mij", gyw, vw)
    gv = merge(_merge_heads(np.einsum("...mij,...imd->...jmd", a, gyw)), kh, kw)

    if static:
        grads["window_table"] = ga.sum(axis=0)
        gq = gk = None
    else:
        gl = a * (ga - (a * ga).sum(axis=-1, keepdims=True))
        scale = 1.0 / float(np.sqrt(spec.group_size))
        qw = _split_heads(partition(q, kh, kw), m)
        kw_ = _split_heads(partition(k, kh, kw), m)
        gq = merge(_merge_heads(scale * np.einsum("...mij,...jmd->...imd", gl, kw_)), kh, kw)
        gk = merge(_merge_heads(scale * np.einsum("...mij,...imd->...jmd", gl, qw)), kh, kw)
        if spec.use_relative_position_bias:
            s = gl.reshape(-1, m, g.nk * g.nk).sum(axis=0)
            gb = np.zeros_like(params.rel_bias)
            np.add.at(gb, relative_position_index(kh, kw).ravel(), s.T)
            grads["rel_bias"] = gb

    if spec.use_qkv_projections:
        gx = _linear_backward(x, params.wv, gv, grads, "wv", "bv", params.bv is not None)
        if not static:
            gx = gx + _linear_backward(x, params.wq, gq, grads, "wq", "bq", params.bq is not None)
            gx = gx + _linear_backward(x, params.wk, gk, grads, "wk", "bk", params.bk is not None)
    else:
        gx = gv if static else gq + gk + gv
    return gx, grads


def attention_dynamic_weights(x: np.ndarray, spec: LayerSpec, params: LayerParams) -> np.ndarray:
    """w_i1..w_iNk for every position: (B, H, W, Nk, D)."""
    _check(spec, x)
    g = spec.geometry
    a = _windowed_weights(spec, params, x)
    pos = _window_to_positions(np.asarray(a), g.window_h, g.window_w)
    return expand_groups(np.swapaxes(pos, -1, -2), spec.channels)


__all__ = [
    "AttentionWeights",
    "attention_weights",
    "local_attention_forward",
    "elementwise_attention_forward",
    "static_local_attention_forward",
    "attention_backward",
    "attention_dynamic_weights",
    "relative_position_index",
    "LOCAL_ATTENTION",
]
