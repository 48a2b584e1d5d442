"""Window partitioning, padding and neighbourhood gathering on (B, H, W, C) maps."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .spec import WindowGeometry


def check_map(x: np.ndarray, channels: int | None = None) -> tuple[int, int, int, int]:
    if x.ndim != 4:
        raise ShapeError(f"expected a (batch, height, width, channel) map, got shape {x.shape}")
    if channels is not None and x.shape[3] != channels:
        raise ShapeError(f"expected {channels} channels, got {x.shape[3]}")
    return x.shape


def partition(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(B, H, W, C) -> (B, H/kh, W/kw, kh*kw, C), slots in raster order."""
    b, h, w, c = x.shape
    t = x.reshape(b, h // kh, kh, w // kw, kw, c).transpose(0, 1, 3, 2, 4, 5)
    return t.reshape(b, h // kh, w // kw, kh * kw, c)


def merge(xw: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Inverse of :func:`partition`."""
    b, nh, nw, _, c = xw.shape
    t = xw.reshape(b, nh, nw, kh, kw, c).transpose(0, 1, 3, 2, 4, 5)
    return t.reshape(b, nh * kh, nw * kw, c)


def _source_index(n: int, r: int, mode: str) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(-r, n + r)
    if mode == "circular":
        return idx % n, np.ones(idx.shape, bool)
    valid = (idx >= 0) & (idx < n)
    return np.clip(idx, 0, n - 1), valid


def pad(x: np.ndarray, rh: int, rw: int, mode: str) -> np.ndarray:
    if mode == "none" or (rh == 0 and rw == 0):
        return x
    np_mode = "wrap" if mode == "circular" else "constant"
    return np.pad(x, ((0, 0), (rh, rh), (rw, rw), (0, 0)), mode=np_mode)


def pad_adjoint(g: np.ndarray, rh: int, rw: int, mode: str, h: int, w: int) -> np.ndarray:
    """Transpose of :func:`pad`: fold a padded-map gradient back onto (h, w)."""
    if mode == "none" or (rh == 0 and rw == 0):
        return g
    if mode == "zero":
        return g[:, rh:rh + h, rw:rw + w, :]
    src_h, _ = _source_index(h, rh, mode)
    src_w, _ = _source_index(w, rw, mode)
    out_h = np.zeros((g.shape[0], h, g.shape[2], g.shape[3]), g.dtype)
    np.add.at(out_h, (slice(None), src_h), g)
    out = np.zeros((g.shape[0], h, w, g.shape[3]), g.dtype)
    np.add.at(out, (slice(None), slice(None), src_w), out_h)
    return out


def neighbours(x: np.ndarray, geometry: WindowGeometry) -> np.ndarray:
    """Stack the sliding-window neighbours: (B, Ho, Wo, Nk, C).

    Slot ``j`` of output position ``i`` holds the input at ``i + offset_j``.
    """
    b, h, w, c = x.shape
    ho, wo = geometry.output_hw(h, w)
    rh, rw = geometry.radius
    xp = pad(x, rh, rw, geometry.padding)
    out = np.empty((b, ho, wo, geometry.nk, c), x.dtype)
    for j, (dy, dx) in enumerate(geometry.offsets()):
        out[:, :, :, j, :] = xp[:, rh + dy:rh + dy + ho, rw + dx:rw + dx + wo, :]
    return out


def neighbours_adjoint(g: np.ndarray, geometry: WindowGeometry, h: int, w: int) -> np.ndarray:
    """Transpose of :func:`neighbours`."""
    b, ho, wo, _, c = g.shape
    rh, rw = geometry.radius
    if geometry.padding == "none":
        gp = np.zeros((b, h, w, c), g.dtype)
    else:
        gp = np.zeros((b, h + 2 * rh, w + 2 * rw, c), g.dtype)
    for j, (dy, dx) in enumerate(geometry.offsets()):
        gp[:, rh + dy:rh + dy + ho, rw + dx:rw + dx + wo, :] += g[:, :, :, j, :]
    if geometry.padding == "none":
        return gp
    return pad_adjoint(gp, rh, rw, geometry.padding, h, w)


def expand_groups(weights: np.ndarray, channels: int) -> np.ndarray:
    """Replicate a trailing group axis of size M to ``channels`` (contiguous groups)."""
    m = weights.shape[-1]
    return np.repeat(weights, channels // m, axis=-1)


def reduce_groups(g: np.ndarray, groups: int) -> np.ndarray:
    """Transpose of :func:`expand_groups`: sum each contiguous channel group."""
    c = g.shape[-1]
    return g.reshape(*g.shape[:-1], groups, c // groups).sum(axis=-1)
