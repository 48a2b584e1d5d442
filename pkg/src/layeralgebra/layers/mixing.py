"""Point-wise (channel mixing) and token-mixing (spatial mixing) layers."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .spec import LayerParams, LayerSpec
from .windows import check_map


def pointwise_conv_forward(x: np.ndarray, spec: LayerSpec, params: LayerParams) -> np.ndarray:
    check_map(x, spec.channels)
    params.require("pw")
    if params.pw.shape != (spec.channels, spec.d_out):
        raise ShapeError(f"projection shape {params.pw.shape}, expected {(spec.channels, spec.d_out)}")
    y = x @ params.pw
    if params.pw_bias is not None:
        y = y + params.pw_bias
    return y


def pointwise_conv_backward(spec: LayerSpec, params: LayerParams, x: np.ndarray, gy: np.ndarray):
    check_map(x, spec.channels)
    grads = {"pw": np.einsum("bhwi,bhwo->io", x, gy)}
    if params.pw_bias is not None:
        grads["pw_bias"] = gy.sum(axis=(0, 1, 2))
    return gy @ params.pw.T, grads


def _check_token(spec: LayerSpec, params: LayerParams, x: np.ndarray) -> int:
    check_map(x, spec.channels)
    params.require("wc")
    n = x.shape[1] * x.shape[2]
    if params.wc.shape != (n, n):
        raise ShapeError(f"token-mixing matrix is {params.wc.shape}, map has {n} positions")
    return n


def token_mixing_mlp_forward(x: np.ndarray, spec: LayerSpec, params: LayerParams) -> np.ndarray:
    """Every channel's flattened spatial vector is multiplied by the shared ``wc``."""
    n = _check_token(spec, params, x)
    b, h, w, c = x.shape
    y = np.einsum("nm,bmc->bnc", params.wc, x.reshape(b, n, c))
    return y.reshape(b, h, w, c)


def token_mixing_mlp_backward(spec: LayerSpec, params: LayerParams, x: np.ndarray, gy: np.ndarray):
    n = _check_token(spec, params, x)
    b, h, w, c = x.shape
    xf = x.reshape(b, n, c)
    gf = gy.reshape(b, n, c)
    gx = np.einsum("nm,bnc->bmc", params.wc, gf).reshape(x.shape)
    return gx, {"wc": np.einsum("bnc,bmc->nm", gf, xf)}
