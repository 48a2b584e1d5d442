"""Forward and analytic backward passes for the layer family.

Every function takes maps in (batch, height, width, channel) order. Use
:func:`layer_forward` / :func:`layer_backward` to dispatch on ``spec.kind``.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, UnsupportedKindError
from .attention import (
    AttentionWeights,
    attention_backward,
    attention_dynamic_weights,
    attention_weights,
    elementwise_attention_forward,
    local_attention_forward,
    relative_position_index,
    static_local_attention_forward,
)
from .conv import (
    depthwise_conv_backward,
    depthwise_conv_forward,
    dynamic_depthwise_backward,
    dynamic_depthwise_forward,
    inhomogeneous_dynamic_backward,
    inhomogeneous_dynamic_forward,
    position_weights,
    predicted_kernels,
)
from .mixing import (
    pointwise_conv_backward,
    pointwise_conv_forward,
    token_mixing_mlp_backward,
    token_mixing_mlp_forward,
)
from .spec import (
    ATTENTION_KINDS,
    DEPTHWISE_CONV,
    DYNAMIC_DEPTHWISE_CONV,
    INHOMOGENEOUS_DYNAMIC_CONV,
    KINDS,
    LOCAL_ATTENTION,
    PARTITION,
    PER_CHANNEL,
    PER_GROUP,
    POINTWISE_CONV,
    SLIDING,
    STATIC_LOCAL_ATTENTION,
    TOKEN_MIXING_MLP,
    LayerParams,
    LayerSpec,
    WindowGeometry,
    init_params,
)
from .windows import expand_groups

_FORWARD = {
    LOCAL_ATTENTION: local_attention_forward,
    STATIC_LOCAL_ATTENTION: static_local_attention_forward,
    DEPTHWISE_CONV: depthwise_conv_forward,
    DYNAMIC_DEPTHWISE_CONV: dynamic_depthwise_forward,
    INHOMOGENEOUS_DYNAMIC_CONV: inhomogeneous_dynamic_forward,
    POINTWISE_CONV: pointwise_conv_forward,
    TOKEN_MIXING_MLP: token_mixing_mlp_forward,
}

_BACKWARD = {
    LOCAL_ATTENTION: attention_backward,
    STATIC_LOCAL_ATTENTION: attention_backward,
    DEPTHWISE_CONV: depthwise_conv_backward,
    DYNAMIC_DEPTHWISE_CONV: dynamic_depthwise_backward,
    INHOMOGENEOUS_DYNAMIC_CONV: inhomogeneous_dynamic_backward,
    POINTWISE_CONV: pointwise_conv_backward,
    TOKEN_MIXING_MLP: token_mixing_mlp_backward,
}


def layer_forward(x: np.ndarray, spec: LayerSpec, params: LayerParams) -> np.ndarray:
    return _FORWARD[spec.kind](x, spec, params)


def layer_backward(spec: LayerSpec, params: LayerParams, x: np.ndarray, grad_output: np.ndarray):
    """Gradients of ``sum(grad_output * forward(x))``.

    Returns ``(grad_input, grad_params)`` where ``grad_params`` has one entry
    per tensor in ``params.tensors()``.
    """
    try:
        backward = _BACKWARD[spec.kind]
    except KeyError:
        raise UnsupportedKindError(f"no backward pass for {spec.kind!r}") from None
    return backward(spec, params, x, grad_output)


def extract_dynamic_weights(x: np.ndarray, spec: LayerSpec, params: LayerParams) -> np.ndarray:
    """Connection weights w_i1..w_iNk for every output position: (B, Ho, Wo, Nk, D).

    Static layers return their stored parameters laid out the same way.
    """
    if spec.kind in ATTENTION_KINDS:
        return attention_dynamic_weights(x, spec, params)
    g = spec.geometry
    ho, wo = g.output_hw(x.shape[1], x.shape[2])
    shape = (x.shape[0], ho, wo, g.nk, spec.channels)
    if spec.kind == DEPTHWISE_CONV:
        params.require("kernel")
        return np.broadcast_to(params.kernel.reshape(g.nk, spec.channels), shape)
    if spec.kind == DYNAMIC_DEPTHWISE_CONV:
        k = predicted_kernels(x, spec, params).reshape(x.shape[0], 1, 1, g.nk, spec.channels)
        return np.broadcast_to(k, shape)
    if spec.kind == INHOMOGENEOUS_DYNAMIC_CONV:
        w = position_weights(x, spec, params)
        if g.padding == "none":
            rh, rw = g.radius
            w = w[:, rh:rh + ho, rw:rw + wo]
        return expand_groups(np.swapaxes(w, -1, -2), spec.channels)
    raise ConfigurationError(f"{spec.kind} has no windowed connection weights")


__all__ = [
    "AttentionWeights",
    "KINDS",
    "LayerParams",
    "LayerSpec",
    "WindowGeometry",
    "PARTITION",
    "SLIDING",
    "PER_CHANNEL",
    "PER_GROUP",
    "attention_weights",
    "depthwise_conv_forward",
    "dynamic_depthwise_forward",
    "elementwise_attention_forward",
    "extract_dynamic_weights",
    "inhomogeneous_dynamic_forward",
    "init_params",
    "layer_backward",
    "layer_forward",
    "local_attention_forward",
    "pointwise_conv_forward",
    "position_weights",
    "predicted_kernels",
    "relative_position_index",
    "static_local_attention_forward",
    "token_mixing_mlp_forward",
]
