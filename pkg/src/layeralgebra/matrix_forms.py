"""Layers written out as explicit connection matrices, y = W x.

These operators are deliberately naive: every entry is materialised so the
result can serve as a brute-force reference for the layer implementations.

Two flattening orders are used. ``channel_major`` stacks whole channel maps,
x = [x_1; ...; x_C] with each x_c a raster-order spatial vector.
``position_major`` stacks per-position channel vectors, x = [x_1; ...; x_N].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigurationError, GeometryError, ShapeError
from .layers import (
    ATTENTION_KINDS,
    DEPTHWISE_CONV,
    DYNAMIC_DEPTHWISE_CONV,
    INHOMOGENEOUS_DYNAMIC_CONV,
    POINTWISE_CONV,
    STATIC_LOCAL_ATTENTION,
    TOKEN_MIXING_MLP,
    LayerParams,
    LayerSpec,
    attention_weights,
    position_weights,
    predicted_kernels,
)
from .layers.windows import expand_groups

CHANNEL_MAJOR = "channel_major"
POSITION_MAJOR = "position_major"
LAYOUTS = (CHANNEL_MAJOR, POSITION_MAJOR)

# largest N*C for which an operator is materialised
SIZE_CAP = 4096


@dataclass(frozen=True)
class DenseOperator:
    matrix: np.ndarray
    layout: str
    provenance: str
    positions: int
    channels_in: int
    channels_out: int
    # structural support declared by the constructor; None means dense
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ConfigurationError(f"unknown layout {self.layout!r}")
        expected = (self.positions * self.channels_out, self.positions * self.channels_in)
        if self.matrix.shape != expected:
            raise ShapeError(f"operator is {self.matrix.shape}, layout implies {expected}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def nonzeros(self) -> int:
        return int(np.count_nonzero(self.matrix))

    def sparsity(self) -> float:
        return 1.0 - self.nonzeros() / self.matrix.size

    def structural_sparsity(self) -> float:
        if self.mask is None:
            return 0.0
        return 1.0 - int(self.mask.sum()) / self.mask.size


@dataclass(frozen=True)
class LowRankFactors:
    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        if self.left.ndim != 2 or self.right.ndim != 2:
            raise ShapeError("low-rank factors must be matrices")
        if self.left.shape[1] != self.right.shape[0]:
            raise ShapeError(f"factor extents differ: {self.left.shape} x {self.right.shape}")
        r = self.rank
        if r < 1 or r > min(self.left.shape[0], self.right.shape[1]):
            raise ShapeError(f"rank {r} outside [1, min(D_out, D_in)]")

    @property
    def rank(self) -> int:
        return self.left.shape[1]


def _check_cap(n: int, c: int) -> None:
    if n * c > SIZE_CAP:
        raise ShapeError(f"N*C = {n * c} exceeds the dense-operator cap of {SIZE_CAP}")


def _grid(n: Union[int, Sequence[int]]) -> tuple[int, int]:
    if isinstance(n, (int, np.integer)):
        return 1, int(n)
    h, w = n
    return int(h), int(w)


# -- flattening ----------------------------------------------------------------


def flatten(x: np.ndarray, layout: str) -> np.ndarray:
    """Flatten one (H, W, C) map (or a (1, H, W, C) batch) per ``layout``."""
    if x.ndim == 4:
        if x.shape[0] != 1:
            raise ShapeError("dense operators act on a single instance")
        x = x[0]
    if layout == CHANNEL_MAJOR:
        return np.ascontiguousarray(x.transpose(2, 0, 1)).ravel()
    if layout == POSITION_MAJOR:
        return x.ravel()
    raise ConfigurationError(f"unknown layout {layout!r}")


def unflatten(v: np.ndarray, layout: str, h: int, w: int, c: int) -> np.ndarray:
    """Inverse of :func:`flatten`, returning a (1, H, W, C) map."""
    if layout == CHANNEL_MAJOR:
        return v.reshape(c, h, w).transpose(1, 2, 0)[None]
    return v.reshape(1, h, w, c)


def layout_permutation(n: int, c: int) -> np.ndarray:
    """Index p with position_major[p] == channel_major, i.e. cm = pm[p]."""
    return np.arange(n * c).reshape(n, c).T.ravel()


def to_layout(op: DenseOperator, layout: str) -> DenseOperator:
    """Re-express ``op`` in ``layout`` by conjugating with the layout permutation."""
    if op.layout == layout:
        return op
    n = op.positions
    p_out = layout_permutation(n, op.channels_out)
    p_in = layout_permutation(n, op.channels_in)
    if layout == POSITION_MAJOR:
        # op is channel-major: W_pm[p_out[a], p_in[b]] = W_cm[a, b]
        m = np.zeros_like(op.matrix)
        m[np.ix_(p_out, p_in)] = op.matrix
        mask = None
        if op.mask is not None:
            mask = np.zeros_like(op.mask)
            mask[np.ix_(p_out, p_in)] = op.mask
    else:
        m = op.matrix[np.ix_(p_out, p_in)]
        mask = None if op.mask is None else op.mask[np.ix_(p_out, p_in)]
    return DenseOperator(m, layout, op.provenance, n, op.channels_in, op.channels_out, mask)


def compose(outer: DenseOperator, inner: DenseOperator, layout: str = CHANNEL_MAJOR) -> DenseOperator:
    """The operator x -> outer(inner(x))."""
    a = to_layout(outer, layout)
    b = to_layout(inner, layout)
    if a.positions != b.positions or a.channels_in != b.channels_out:
        raise ShapeError("operators do not chain")
    mask = None
    if a.mask is not None and b.mask is not None:
        mask = (a.mask.astype(np.int64) @ b.mask.astype(np.int64)) != 0
    return DenseOperator(
        a.matrix @ b.matrix, layout, f"{a.provenance}*{b.provenance}",
        a.positions, b.channels_in, a.channels_out, mask,
    )


def dense_apply(op: DenseOperator, x_flat: np.ndarray) -> np.ndarray:
    x_flat = np.asarray(x_flat)
    if x_flat.ndim != 1 or x_flat.shape[0] != op.matrix.shape[1]:
        raise ShapeError(f"vector of length {x_flat.shape} for a {op.matrix.shape} operator")
    return op.matrix @ x_flat


# -- convolution -----------------------------------------------------------------


def _circulant_2d(kernel: np.ndarray, h: int, w: int) -> np.ndarray:
    """Doubly circulant N x N block for a (Kh, Kw) kernel on an h x w grid.

    Row i holds kernel[u, v] at column (i + offset(u, v)) mod grid, offsets
    measured from the kernel centre. For h == 1 this is the 1-D circulant.
    """
    kh, kw = kernel.shape
    rh, rw = kh // 2, kw // 2
    n = h * w
    mat = np.zeros((n, n), kernel.dtype)
    for r in range(h):
        for s in range(w):
            i = r * w + s
            for u in range(kh):
                for v in range(kw):
                    j = ((r + u - rh) % h) * w + (s + v - rw) % w
                    mat[i, j] += kernel[u, v]
    return mat


def _toeplitz_2d(kernel: np.ndarray, h: int, w: int) -> np.ndarray:
    """Same as :func:`_circulant_2d` but taps falling outside the grid are dropped."""
    kh, kw = kernel.shape
    rh, rw = kh // 2, kw // 2
    n = h * w
    mat = np.zeros((n, n), kernel.dtype)
    for r in range(h):
        for s in range(w):
            for u in range(kh):
                for v in range(kw):
                    rr, ss = r + u - rh, s + v - rw
                    if 0 <= rr < h and 0 <= ss < w:
                        mat[r * w + s, rr * w + ss] += kernel[u, v]
    return mat


def _conv_block(kernel: np.ndarray, h: int, w: int, padding: str) -> np.ndarray:
    if padding == "circular":
        return _circulant_2d(kernel, h, w)
    if padding == "zero":
        return _toeplitz_2d(kernel, h, w)
    raise ConfigurationError(f"no dense form for padding {padding!r}")


def circulant_from_kernel(kernel, n: int) -> DenseOperator:
    """n x n circulant matrix of a length-K kernel (K odd, K <= n)."""
    kernel = np.asarray(kernel, dtype=float)
    if kernel.ndim != 1:
        raise ShapeError("circulant_from_kernel expects a 1-D kernel")
    k = kernel.shape[0]
    if k % 2 == 0:
        raise GeometryError(f"kernel length {k} must be odd")
    if k > n:
        raise GeometryError(f"kernel length {k} exceeds {n} positions")
    _check_cap(n, 1)
    mat = _circulant_2d(kernel[None, :], 1, n)
    mask = _circulant_2d(np.ones((1, k)), 1, n) != 0
    return DenseOperator(mat, CHANNEL_MAJOR, "circulant_from_kernel", n, 1, 1, mask)


def _check_kernel_fits(kh: int, kw: int, h: int, w: int) -> None:
    if kh % 2 == 0 or kw % 2 == 0:
        raise GeometryError("kernel extents must be odd")
    if kh > h or kw > w:
        raise GeometryError(f"{kh}x{kw} kernel exceeds {h}x{w} grid")


def conv_dense_operator(kernels, n, padding: str = "circular") -> DenseOperator:
    """Full convolution: channel-major block matrix [W_{co,ci}] of circulant blocks.

    ``kernels`` is (C_out, C_in, K) for a 1-D grid of ``n`` positions, or
    (C_out, C_in, Kh, Kw) with ``n = (H, W)``.
    """
    kernels = np.asarray(kernels, dtype=float)
    h, w = _grid(n)
    if kernels.ndim == 3:
        if h != 1:
            raise ShapeError("1-D kernels need an integer number of positions")
        kernels = kernels[:, :, None, :]
    if kernels.ndim != 4:
        raise ShapeError(f"kernels must be (C_out, C_in, K[, K]), got {kernels.shape}")
    co, ci, kh, kw = kernels.shape
    _check_kernel_fits(kh, kw, h, w)
    npos = h * w
    _check_cap(npos, max(co, ci))
    mat = np.zeros((co * npos, ci * npos))
    for a in range(co):
        for b in range(ci):
            mat[a * npos:(a + 1) * npos, b * npos:(b + 1) * npos] = _conv_block(kernels[a, b], h, w, padding)
    block_mask = _conv_block(np.ones((kh, kw)), h, w, padding) != 0
    mask = np.tile(block_mask, (co, ci))
    return DenseOperator(mat, CHANNEL_MAJOR, "conv_dense_operator", npos, ci, co, mask)


def depthwise_dense_operator(kernels, n, padding: str = "circular") -> DenseOperator:
    """Block-diagonal channel-major operator, one convolution block per channel.

    ``kernels`` is (C, K) for a 1-D grid or (C, Kh, Kw) with ``n = (H, W)``.
    """
    kernels = np.asarray(kernels, dtype=float)
    h, w = _grid(n)
    if kernels.ndim == 2:
        if h != 1:
            raise ShapeError("1-D kernels need an integer number of positions")
        kernels = kernels[:, None, :]
    if kernels.ndim != 3:
        raise ShapeError(f"kernels must be (C, K) or (C, Kh, Kw), got {kernels.shape}")
    c, kh, kw = kernels.shape
    _check_kernel_fits(kh, kw, h, w)
    npos = h * w
    _check_cap(npos, c)
    mat = np.zeros((c * npos, c * npos))
    mask = np.zeros(mat.shape, bool)
    block_mask = _conv_block(np.ones((kh, kw)), h, w, padding) != 0
    for d in range(c):
        sl = slice(d * npos, (d + 1) * npos)
        mat[sl, sl] = _conv_block(kernels[d], h, w, padding)
        mask[sl, sl] = block_mask
    return DenseOperator(mat, CHANNEL_MAJOR, "depthwise_dense_operator", npos, c, c, mask)


# -- separable MLP / Kronecker ---------------------------------------------------


def sepmlp_channel_operator(w_c, channels: int) -> DenseOperator:
    """Token mixing: channel-major block diagonal with ``w_c`` repeated per channel."""
    w_c = np.asarray(w_c, dtype=float)
    if w_c.ndim != 2 or w_c.shape[0] != w_c.shape[1]:
        raise ShapeError(f"w_c must be square, got {w_c.shape}")
    n = w_c.shape[0]
    _check_cap(n, channels)
    mat = np.zeros((n * channels, n * channels))
    for d in range(channels):
        mat[d * n:(d + 1) * n, d * n:(d + 1) * n] = w_c
    mask = np.kron(np.eye(channels), np.ones((n, n))) != 0
    return DenseOperator(mat, CHANNEL_MAJOR, "sepmlp_channel_operator", n, channels, channels, mask)


def sepmlp_spatial_operator(w_p, positions: int) -> DenseOperator:
    """Channel mixing (1x1 conv): position-major block diagonal with ``w_p`` per position.

    ``w_p`` is (C_out, C_in) acting as y_n = w_p x_n.
    """
    w_p = np.asarray(w_p, dtype=float)
    if w_p.ndim != 2:
        raise ShapeError(f"w_p must be a matrix, got {w_p.shape}")
    co, ci = w_p.shape
    _check_cap(positions, max(co, ci))
    mat = np.zeros((positions * co, positions * ci))
    for p in range(positions):
        mat[p * co:(p + 1) * co, p * ci:(p + 1) * ci] = w_p
    mask = np.kron(np.eye(positions), np.ones((co, ci))) != 0
    return DenseOperator(mat, POSITION_MAJOR, "sepmlp_spatial_operator", positions, ci, co, mask)


def kronecker_apply(a, b, x) -> np.ndarray:
    """vec(A mat(x) B) for A (C x C), B (N x N) and x of length C*N.

    ``mat`` and ``vec`` are column-major: column n of mat(x) is the channel
    vector at position n, so x is position-major. The result equals
    (B^T kron A) x without forming the Kronecker product.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    x = np.asarray(x)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("A and B must be matrices")
    c, n = a.shape[1], b.shape[0]
    if x.size != c * n:
        raise ShapeError(f"x has {x.size} entries, expected {c}*{n}")
    mat = x.reshape(n, c).T
    return (a @ mat @ b).T.ravel()


def lowrank_apply(factors: LowRankFactors, x) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[0] != factors.right.shape[1]:
        raise ShapeError(f"input of length {x.shape[0]} for a rank-{factors.rank} map "
                         f"from {factors.right.shape[1]}")
    return factors.left @ (factors.right @ x)


def lowrank_operator(factors: LowRankFactors) -> np.ndarray:
    return factors.left @ factors.right


# -- windowed attention ------------------------------------------------------------


def _window_support(h: int, w: int, kh: int, kw: int) -> np.ndarray:
    """Boolean N x N mask: True where positions share a partition window."""
    r, s = np.divmod(np.arange(h * w), w)
    win = (r // kh) * (w // kw) + s // kw
    return win[:, None] == win[None, :]


def _window_slot_columns(h: int, w: int, kh: int, kw: int) -> np.ndarray:
    """(N, Nk) absolute column of slot j in the window of position i."""
    r, s = np.divmod(np.arange(h * w), w)
    top, left = (r // kh) * kh, (s // kw) * kw
    u, v = np.divmod(np.arange(kh * kw), kw)
    return (top[:, None] + u[None, :]) * w + left[:, None] + v[None, :]


def local_attention_dense_operator(x: np.ndarray, spec: LayerSpec, params: LayerParams) -> DenseOperator:
    """Per-instance operator of local attention (dynamic or static tables).

    Channel-major block diagonal whose block for channel d is the window
    matrix W^d of head m(d), holding a_ijm at (i, slot j). With projections on
    the value and output projections are composed around it.
    """
    if spec.kind not in ATTENTION_KINDS:
        raise ConfigurationError(f"{spec.kind} is not an attention kind")
    if x.ndim == 4:
        if x.shape[0] != 1:
            raise ShapeError("dense operators act on a single instance")
    else:
        x = x[None]
    _, h, w, c = x.shape
    g = spec.geometry
    g.validate(h, w)
    n = h * w
    _check_cap(n, c)
    if spec.kind == STATIC_LOCAL_ATTENTION:
        params.require("window_table")
        t = params.window_table  # (nWh, nWw, M, Nk, Nk)
        a = np.empty((n, spec.heads_or_groups, g.nk))
        for i in range(n):
            r, s = divmod(i, w)
            slot = (r % g.window_h) * g.window_w + s % g.window_w
            a[i] = t[r // g.window_h, s // g.window_w, :, slot, :]
    else:
        a = attention_weights(x, spec, params).weights[0].reshape(n, spec.heads_or_groups, g.nk)
    cols = _window_slot_columns(h, w, g.window_h, g.window_w)
    rows = np.repeat(np.arange(n), g.nk)
    mat = np.zeros((c * n, c * n))
    support = _window_support(h, w, g.window_h, g.window_w)
    for d in range(c):
        m = d // spec.group_size
        block = np.zeros((n, n))
        block[rows, cols.ravel()] = a[:, m, :].ravel()
        mat[d * n:(d + 1) * n, d * n:(d + 1) * n] = block
    mask = np.kron(np.eye(c), support.astype(float)) != 0
    op = DenseOperator(mat, CHANNEL_MAJOR, "local_attention_dense_operator", n, c, c, mask)
    if spec.use_qkv_projections:
        params.require("wv", "wo")
        for b in (params.bv, params.bo):
            if b is not None and np.any(b):
                raise ConfigurationError("projection biases make the layer affine, not linear")
        op = compose(op, _affine_free(params.wv, n, "value_projection"))
        op = compose(_affine_free(params.wo, n, "output_projection"), op)
    return op


def _affine_free(w: np.ndarray, n: int, name: str) -> DenseOperator:
    op = sepmlp_spatial_operator(w.T, n)
    return DenseOperator(op.matrix, op.layout, name, n, op.channels_in, op.channels_out, op.mask)


def _position_weight_operator(weights: np.ndarray, spec: LayerSpec, h: int, w: int, provenance: str) -> DenseOperator:
    """Channel-major operator from per-position window weights (H, W, Nk, C)."""
    g = spec.geometry
    c = spec.channels
    n = h * w
    _check_cap(n, c)
    mat = np.zeros((c * n, c * n))
    mask = np.zeros(mat.shape, bool)
    offsets = g.offsets()
    for r in range(h):
        for s in range(w):
            i = r * w + s
            for j, (dy, dx) in enumerate(offsets):
                rr, ss = r + dy, s + dx
                if g.padding == "circular":
                    rr, ss = rr % h, ss % w
                elif not (0 <= rr < h and 0 <= ss < w):
                    continue
                col = rr * w + ss
                for d in range(c):
                    mat[d * n + i, d * n + col] += weights[r, s, j, d]
                    mask[d * n + i, d * n + col] = True
    return DenseOperator(mat, CHANNEL_MAJOR, provenance, n, c, c, mask)


def layer_dense_operator(x: np.ndarray, spec: LayerSpec, params: LayerParams) -> DenseOperator:
    """Dense operator reproducing ``layer_forward(x, spec, params)`` on one instance.

    Dynamic kinds yield the operator instantiated for this particular ``x``.
    """
    if x.ndim == 3:
        x = x[None]
    if x.shape[0] != 1:
        raise ShapeError("dense operators act on a single instance")
    _, h, w, c = x.shape
    g = spec.geometry
    if spec.kind in ATTENTION_KINDS:
        return local_attention_dense_operator(x, spec, params)
    if spec.kind in (DEPTHWISE_CONV, DYNAMIC_DEPTHWISE_CONV):
        if g.padding == "none":
            raise ConfigurationError("valid padding changes the output extent; no square operator")
        if spec.kind == DEPTHWISE_CONV:
            params.require("kernel")
            kernel = params.kernel
        else:
            kernel = predicted_kernels(x, spec, params)[0]
        op = depthwise_dense_operator(np.moveaxis(kernel, -1, 0), (h, w), g.padding)
        if spec.kind == DYNAMIC_DEPTHWISE_CONV:
            op = DenseOperator(op.matrix, op.layout, "dynamic_depthwise_dense_operator",
                               op.positions, c, c, op.mask)
        return op
    if spec.kind == INHOMOGENEOUS_DYNAMIC_CONV:
        if g.padding == "none":
            raise ConfigurationError("valid padding changes the output extent; no square operator")
        pw = position_weights(x, spec, params)[0]  # (H, W, M, Nk)
        weights = expand_groups(np.swapaxes(pw, -1, -2), c)
        return _position_weight_operator(weights, spec, h, w, "inhomogeneous_dense_operator")
    if spec.kind == POINTWISE_CONV:
        params.require("pw")
        if params.pw_bias is not None and np.any(params.pw_bias):
            raise ConfigurationError("a biased 1x1 convolution is affine, not linear")
        return sepmlp_spatial_operator(params.pw.T, h * w)
    if spec.kind == TOKEN_MIXING_MLP:
        params.require("wc")
        return sepmlp_channel_operator(params.wc, c)
    raise ConfigurationError(f"no dense operator for {spec.kind}")


def apply_to_map(op: DenseOperator, x: np.ndarray) -> np.ndarray:
    """Flatten a (1, H, W, C) map per the operator layout, apply, and reshape back."""
    if x.ndim == 3:
        x = x[None]
    _, h, w, _ = x.shape
    y = dense_apply(op, flatten(x, op.layout))
    return unflatten(y, op.layout, h, w, op.channels_out)
