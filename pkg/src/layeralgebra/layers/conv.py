"""Depth-wise convolution and its two dynamic variants.

All three aggregate y_i = sum_j w_offset(i,j) * x_ij over a sliding window;
they differ in where the weights come from: stored kernels, kernels predicted
from the globally pooled input, or per-position weights from two 1x1
convolutions.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .spec import PER_GROUP, LayerParams, LayerSpec, predictor_width
from .windows import (
    check_map,
    expand_groups,
    neighbours,
    neighbours_adjoint,
    pad,
    pad_adjoint,
    reduce_groups,
)


def _check(spec: LayerSpec, x: np.ndarray):
    check_map(x, spec.channels)
    return spec.geometry.output_hw(x.shape[1], x.shape[2])


def depthwise(x: np.ndarray, kernel: np.ndarray, geometry) -> np.ndarray:
    """Sliding depth-wise aggregation.

    ``kernel`` is (Kh, Kw, C), or (B, Kh, Kw, C) for one kernel set per instance.
    """
    b, h, w, c = x.shape
    ho, wo = geometry.output_hw(h, w)
    rh, rw = geometry.radius
    xp = pad(x, rh, rw, geometry.padding)
    per_instance = kernel.ndim == 4
    y = np.zeros((b, ho, wo, c), np.result_type(x, kernel))
    for u in range(geometry.window_h):
        for v in range(geometry.window_w):
            k = kernel[:, None, None, u, v, :] if per_instance else kernel[u, v]
            y += k * xp[:, u:u + ho, v:v + wo, :]
    return y


def depthwise_backward(x: np.ndarray, kernel: np.ndarray, geometry, gy: np.ndarray):
    """Returns (grad_input, grad_kernel) with grad_kernel shaped like ``kernel``."""
    b, h, w, c = x.shape
    ho, wo = gy.shape[1:3]
    rh, rw = geometry.radius
    xp = pad(x, rh, rw, geometry.padding)
    per_instance = kernel.ndim == 4
    gxp = np.zeros(xp.shape, gy.dtype)
    gk = np.zeros(kernel.shape, gy.dtype)
    for u in range(geometry.window_h):
        for v in range(geometry.window_w):
            patch = xp[:, u:u + ho, v:v + wo, :]
            if per_instance:
                gk[:, u, v, :] = (gy * patch).sum(axis=(1, 2))
                gxp[:, u:u + ho, v:v + wo, :] += kernel[:, None, None, u, v, :] * gy
            else:
                gk[u, v, :] = (gy * patch).sum(axis=(0, 1, 2))
                gxp[:, u:u + ho, v:v + wo, :] += kernel[u, v] * gy
    if geometry.padding == "none":
        return gxp, gk
    return pad_adjoint(gxp, rh, rw, geometry.padding, h, w), gk


def _check_kernel(spec: LayerSpec, kernel: np.ndarray) -> None:
    g = spec.geometry
    if kernel.shape[-3:] != (g.window_h, g.window_w, spec.channels):
        raise ShapeError(
            f"kernel shape {kernel.shape} does not match window "
            f"{g.window_h}x{g.window_w} and {spec.channels} channels"
        )


def depthwise_conv_forward(x: np.ndarray, spec: LayerSpec, params: LayerParams) -> np.ndarray:
    _check(spec, x)
    params.require("kernel")
    _check_kernel(spec, params.kernel)
    return depthwise(x, params.kernel, spec.geometry)


def depthwise_conv_backward(spec: LayerSpec, params: LayerParams, x: np.ndarray, gy: np.ndarray):
    _check(spec, x)
    params.require("kernel")
    gx, gk = depthwise_backward(x, params.kernel, spec.geometry, gy)
    return gx, {"kernel": gk}


# -- homogeneous dynamic weights ---------------------------------------------


def _check_predictor(spec: LayerSpec, params: LayerParams) -> None:
    params.require("p1", "p2")
    d, width = spec.channels, predictor_width(spec)
    if params.p1.shape[0] != d or params.p2.shape != (params.p1.shape[1], width):
        raise ShapeError(
            f"predictor shapes {params.p1.shape}, {params.p2.shape} do not map {d} -> {width}"
        )


def _predict_kernels(spec: LayerSpec, params: LayerParams, x: np.ndarray):
    g = spec.geometry
    pooled = x.mean(axis=(1, 2))
    pre = pooled @ params.p1
    hidden = np.maximum(pre, 0) if spec.predictor_relu else pre
    raw = hidden @ params.p2
    b = x.shape[0]
    if spec.predictor_mode == PER_GROUP:
        # (B, M, Kh, Kw) -> one kernel per group, replicated to its channels
        k = raw.reshape(b, spec.heads_or_groups, g.window_h, g.window_w).transpose(0, 2, 3, 1)
        kernel = expand_groups(k, spec.channels)
    else:
        kernel = raw.reshape(b, spec.channels, g.window_h, g.window_w).transpose(0, 2, 3, 1)
    return kernel, (pooled, pre, hidden)


def predicted_kernels(x: np.ndarray, spec: LayerSpec, params: LayerParams) -> np.ndarray:
    """Per-instance kernels (B, Kh, Kw, D) of the dynamic depth-wise layer."""
    _check(spec, x)
    _check_predictor(spec, params)
    return _predict_kernels(spec, params, x)[0]


def dynamic_depthwise_forward(x: np.ndarray, spec: LayerSpec, params: LayerParams) -> np.ndarray:
    _check(spec, x)
    _check_predictor(spec, params)
    kernel, _ = _predict_kernels(spec, params, x)
    return depthwise(x, kernel, spec.geometry)


def dynamic_depthwise_backward(spec: LayerSpec, params: LayerParams, x: np.ndarray, gy: np.ndarray):
    _check(spec, x)
    _check_predictor(spec, params)
    b, h, w, _ = x.shape
    kernel, (pooled, pre, hidden) = _predict_kernels(spec, params, x)
    gx, gk = depthwise_backward(x, kernel, spec.geometry, gy)
    if spec.predictor_mode == PER_GROUP:
        graw = reduce_groups(gk, spec.heads_or_groups).transpose(0, 3, 1, 2).reshape(b, -1)
    else:
        graw = gk.transpose(0, 3, 1, 2).reshape(b, -1)
    gp2 = hidden.T @ graw
    gpre = graw @ params.p2.T
    if spec.predictor_relu:
        gpre = gpre * (pre > 0)
    gp1 = pooled.T @ gpre
    gpooled = gpre @ params.p1.T
    gx = gx + gpooled[:, None, None, :] / (h * w)
    return gx, {"p1": gp1, "p2": gp2}


# -- inhomogeneous dynamic weights -------------------------------------------


def _position_weights(spec: LayerSpec, params: LayerParams, x: np.ndarray):
    pre = x @ params.p1
    hidden = np.maximum(pre, 0) if spec.predictor_relu else pre
    raw = hidden @ params.p2
    weights = raw.reshape(*x.shape[:3], spec.heads_or_groups, spec.geometry.nk)
    return weights, (pre, hidden)


def position_weights(x: np.ndarray, spec: LayerSpec, params: LayerParams) -> np.ndarray:
    """Per-position, per-group weights (B, H, W, M, Nk)."""
    _check(spec, x)
    _check_predictor(spec, params)
    return _position_weights(spec, params, x)[0]


def _output_slice(spec: LayerSpec, t: np.ndarray) -> np.ndarray:
    # with valid padding the weights are predicted at window centres only
    if spec.geometry.padding != "none":
        return t
    rh, rw = spec.geometry.radius
    return t[:, rh:t.shape[1] - rh, rw:t.shape[2] - rw]


def inhomogeneous_dynamic_forward(x: np.ndarray, spec: LayerSpec, params: LayerParams) -> np.ndarray:
    _check(spec, x)
    _check_predictor(spec, params)
    weights, _ = _position_weights(spec, params, x)
    w = expand_groups(np.swapaxes(_output_slice(spec, weights), -1, -2), spec.channels)
    return (w * neighbours(x, spec.geometry)).sum(axis=3)


def inhomogeneous_dynamic_backward(spec: LayerSpec, params: LayerParams, x: np.ndarray, gy: np.ndarray):
    _check(spec, x)
    _check_predictor(spec, params)
    b, h, w_, _ = x.shape
    weights, (pre, hidden) = _position_weights(spec, params, x)
    wsl = _output_slice(spec, weights)
    w = expand_groups(np.swapaxes(wsl, -1, -2), spec.channels)
    nb = neighbours(x, spec.geometry)
    gx = neighbours_adjoint(w * gy[:, :, :, None, :], spec.geometry, h, w_)
    gw = np.swapaxes(reduce_groups(gy[:, :, :, None, :] * nb, spec.heads_or_groups), -1, -2)
    graw = np.zeros(weights.shape, gw.dtype)
    if spec.geometry.padding == "none":
        rh, rw = spec.geometry.radius
        graw[:, rh:h - rh, rw:w_ - rw] = gw
    else:
        graw = gw
    graw = graw.reshape(*graw.shape[:3], -1)
    gp2 = np.einsum("bhwr,bhwk->rk", hidden, graw)
    gpre = graw @ params.p2.T
    if spec.predictor_relu:
        gpre = gpre * (pre > 0)
    gp1 = np.einsum("bhwd,bhwr->dr", x, gpre)
    gx = gx + gpre @ params.p1.T
    return gx, {"p1": gp1, "p2": gp2}
